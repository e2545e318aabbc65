//! Central finite differences against reverse-mode gradients on random
//! small instances of every loss term and of the full objective.

use hydra_kd::losses::{self, GaussianHead, LossConfig, TeacherBatchOutputs};
use hydra_kd::models::{MultiHeadNet, MultiHeadSpec, Task};
use hydra_kd::nn::{Matrix, Value, ValueGraph};
use hydra_kd::training::{student_objective, LambdaSchedule};
use rand::rngs::StdRng;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute gap when both are tiny.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Checks `build` with respect to every entry of `inputs`.
fn check_inputs(inputs: Vec<Matrix>, build: impl Fn(&mut ValueGraph, &[Value]) -> Value) -> f64 {
    let eval = |xs: &[Matrix]| {
        let mut g = ValueGraph::new();
        let vs: Vec<Value> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vs);
        g.scalar(out)
    };
    let mut g = ValueGraph::new();
    let vs: Vec<Value> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = build(&mut g, &vs);
    let analytic: Vec<f64> = g
        .gradients(out, &vs)
        .expect("scalar output")
        .into_iter()
        .flat_map(Matrix::into_vec)
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xs = inputs;
    for i in 0..xs.len() {
        for j in 0..xs[i].len() {
            let orig = xs[i].as_slice()[j];
            xs[i].as_mut_slice()[j] = orig + STEP;
            let up = eval(&xs);
            xs[i].as_mut_slice()[j] = orig - STEP;
            let down = eval(&xs);
            xs[i].as_mut_slice()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

fn random(rng: &mut StdRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

struct Shape {
    heads: usize,
    teachers: usize,
    batch: usize,
    classes: usize,
}

fn shape(rng: &mut StdRng) -> Shape {
    let heads = rng.gen_range(1..=4);
    Shape {
        heads,
        teachers: rng.gen_range(heads..=6),
        batch: rng.gen_range(1..=3),
        classes: rng.gen_range(2..=4),
    }
}

fn split_heads(g: &mut ValueGraph, raw: &[Value]) -> Vec<GaussianHead> {
    raw.iter().map(|&r| GaussianHead::from_raw(g, r)).collect()
}

pub fn l1_classification(rng: &mut StdRng) -> f64 {
    let s = shape(rng);
    let labels: Vec<usize> = (0..s.batch).map(|_| rng.gen_range(0..s.classes)).collect();
    let logits = (0..s.heads)
        .map(|_| random(rng, s.batch, s.classes, -2.0, 2.0))
        .collect();
    check_inputs(logits, |g, z| {
        let p: Vec<Value> = z.iter().map(|&z| g.softmax(z, 1.0)).collect();
        losses::l1_classification_graph(g, &p, &labels)
    })
}

pub fn l1_regression(rng: &mut StdRng) -> f64 {
    let s = shape(rng);
    let y = random(rng, s.batch, 1, -2.0, 2.0);
    let raw = (0..s.heads)
        .map(|_| random(rng, s.batch, 2, -1.0, 1.0))
        .collect();
    check_inputs(raw, |g, r| {
        let heads = split_heads(g, r);
        let y = g.constant(y.clone());
        losses::l1_regression_graph(g, &heads, y)
    })
}

pub fn l2_classification(rng: &mut StdRng) -> f64 {
    let s = shape(rng);
    let t = rng.gen_range(1.0..4.0);
    let teacher: Vec<Matrix> = (0..s.teachers)
        .map(|_| random(rng, s.batch, s.classes, -3.0, 3.0))
        .collect();
    let student = (0..s.heads)
        .map(|_| random(rng, s.batch, s.classes, -2.0, 2.0))
        .collect();
    check_inputs(student, |g, z| {
        losses::l2_classification_graph(g, &teacher, z, t)
    })
}

fn teacher_gaussians(rng: &mut StdRng, s: &Shape) -> (Vec<Matrix>, Vec<Matrix>) {
    let means = (0..s.teachers)
        .map(|_| random(rng, s.batch, 1, -2.0, 2.0))
        .collect();
    let vars = (0..s.teachers)
        .map(|_| random(rng, s.batch, 1, 0.1, 2.0))
        .collect();
    (means, vars)
}

pub fn l2_regression(rng: &mut StdRng) -> f64 {
    let s = shape(rng);
    let (means, vars) = teacher_gaussians(rng, &s);
    let raw = (0..s.heads)
        .map(|_| random(rng, s.batch, 2, -1.0, 1.0))
        .collect();
    check_inputs(raw, |g, r| {
        let heads = split_heads(g, r);
        losses::l2_regression_graph(g, &means, &vars, &heads).unwrap()
    })
}

pub fn l3_classification(rng: &mut StdRng) -> f64 {
    let s = shape(rng);
    let t = rng.gen_range(1.0..4.0);
    let teacher: Vec<Matrix> = (0..s.teachers)
        .map(|_| random(rng, s.batch, s.classes, -3.0, 3.0))
        .collect();
    let student = (0..s.heads)
        .map(|_| random(rng, s.batch, s.classes, -2.0, 2.0))
        .collect();
    check_inputs(student, |g, z| {
        losses::l3_classification_graph(g, &teacher, z, t)
    })
}

pub fn l3_regression(rng: &mut StdRng) -> f64 {
    let s = shape(rng);
    let (means, vars) = teacher_gaussians(rng, &s);
    let raw = (0..s.heads)
        .map(|_| random(rng, s.batch, 2, -1.0, 1.0))
        .collect();
    check_inputs(raw, |g, r| {
        let heads = split_heads(g, r);
        losses::l3_regression_graph(g, &means, &vars, &heads)
    })
}

pub fn l4_diversity(rng: &mut StdRng) -> f64 {
    let heads = rng.gen_range(2..=4);
    let mut widths = vec![rng.gen_range(2..=4)];
    for _ in 0..rng.gen_range(1..=2) {
        widths.push(rng.gen_range(2..=4));
    }
    let layers = widths.len() - 1;
    let mut weights = Vec::new();
    for _ in 0..heads {
        for l in 0..layers {
            weights.push(random(rng, widths[l + 1], widths[l], -1.0, 1.0));
        }
    }
    check_inputs(weights, |g, w| {
        let nested: Vec<Vec<Value>> = w.chunks(layers).map(<[Value]>::to_vec).collect();
        losses::l4_diversity_graph(g, &nested)
    })
}

/// Full weighted objective, including weight decay, differentiated with
/// respect to every parameter of a small random student.
fn total(rng: &mut StdRng, task: Task) -> f64 {
    let heads = rng.gen_range(2..=3);
    let teachers = rng.gen_range(heads..=5);
    let batch = rng.gen_range(2..=4);
    let out = task.output_width();
    let spec = MultiHeadSpec::new(vec![2, 4, 3], vec![3, 3, out], heads, task).unwrap();
    let mut net = MultiHeadNet::new(spec, rng.gen()).unwrap();
    let cfg = LossConfig {
        alpha: rng.gen_range(0.0..1.0),
        beta: rng.gen_range(0.0..1.0),
        t_ind: rng.gen_range(1.0..3.0),
        t_mean: rng.gen_range(1.0..3.0),
        lambda: LambdaSchedule::Constant { value: 0.0 },
        weight_decay: rng.gen_range(0.0..0.1),
    };
    let lambda = rng.gen_range(0.0..2.0);
    let x = random(rng, batch, 2, -2.0, 2.0);
    let classes: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..out)).collect();
    let values = random(rng, batch, 1, -2.0, 2.0);
    let teacher = match task {
        Task::Classification { .. } => TeacherBatchOutputs::Logits(
            (0..teachers)
                .map(|_| random(rng, batch, out, -3.0, 3.0))
                .collect(),
        ),
        Task::Regression => TeacherBatchOutputs::Gaussians {
            means: (0..teachers)
                .map(|_| random(rng, batch, 1, -2.0, 2.0))
                .collect(),
            variances: (0..teachers)
                .map(|_| random(rng, batch, 1, 0.1, 2.0))
                .collect(),
        },
    };
    let eval = |net: &MultiHeadNet| {
        let mut g = ValueGraph::new();
        let xv = g.constant(x.clone());
        let (t, _, _) = student_objective(
            &mut g,
            net,
            &cfg,
            lambda,
            xv,
            Some(&classes),
            Some(&values),
            &teacher,
        )
        .unwrap();
        (g, t)
    };
    let (g, t) = eval(&net);
    g.backward(t, net.store_mut()).unwrap();
    let ids: Vec<_> = net.store().ids().collect();
    let analytic: Vec<f64> = ids
        .iter()
        .flat_map(|&id| net.store().grad(id).as_slice().to_vec())
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for &id in &ids {
        for j in 0..net.store().value(id).len() {
            let orig = net.store().value(id).as_slice()[j];
            net.store_mut().value_mut(id).as_mut_slice()[j] = orig + STEP;
            let (g, t) = eval(&net);
            let up = g.scalar(t);
            net.store_mut().value_mut(id).as_mut_slice()[j] = orig - STEP;
            let (g, t) = eval(&net);
            let down = g.scalar(t);
            net.store_mut().value_mut(id).as_mut_slice()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

pub fn total_classification(rng: &mut StdRng) -> f64 {
    total(rng, Task::Classification { classes: 3 })
}

pub fn total_regression(rng: &mut StdRng) -> f64 {
    total(rng, Task::Regression)
}

pub type Case = (&'static str, fn(&mut StdRng) -> f64);

pub const CASES: [Case; 9] = [
    ("l1 classification", l1_classification),
    ("l1 regression", l1_regression),
    ("l2 classification", l2_classification),
    ("l2 regression", l2_regression),
    ("l3 classification", l3_classification),
    ("l3 regression", l3_regression),
    ("l4 diversity", l4_diversity),
    ("total classification", total_classification),
    ("total regression", total_regression),
];

/// Worst relative error of each case over `instances` random draws.
pub fn worst_errors(seed: u64, instances: usize) -> Vec<(&'static str, f64)> {
    use rand::SeedableRng;
    CASES
        .iter()
        .enumerate()
        .map(|(i, &(name, case))| {
            let mut rng = StdRng::seed_from_u64(seed.wrapping_add(i as u64));
            let worst = (0..instances).map(|_| case(&mut rng)).fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
