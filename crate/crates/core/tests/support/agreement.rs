//! Library losses against the plain-formula oracle on the worked examples
//! and on random instances.

use hydra_kd::losses;
use hydra_kd::nn::Matrix;
use hydra_kd::uncertainty::Gaussian;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::oracle;

pub const TOLERANCE: f64 = 1e-10;

/// One comparison: a label, the library value and the oracle value.
pub type Row = (String, f64, f64);

fn gaussians(pairs: &[(f64, f64)]) -> Vec<Gaussian> {
    pairs
        .iter()
        .map(|&(mean, variance)| Gaussian { mean, variance })
        .collect()
}

fn ln_probs(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| v.ln()).collect()
}

/// Worked examples. Each row also carries the rounded published value,
/// which the oracle must reproduce to five decimals.
pub fn worked_examples() -> Vec<(Row, f64)> {
    let ln3 = 3f64.ln();
    let uniform = vec![1.0 / 3.0; 3];
    let zeros = vec![vec![0.0; 3]; 4];
    let student = vec![ln_probs(&[0.5, 0.25, 0.25])];
    let split = [vec![0.5, 0.25, 0.25], vec![0.25, 0.5, 0.25]];
    let row =
        |name: &str, lib: f64, ora: f64, published: f64| ((name.to_string(), lib, ora), published);

    let l4_same = {
        let w = vec![vec![0.3, -1.0], vec![2.0, 0.1]];
        let lib_w = Matrix::from_rows(&w).unwrap();
        let lib = losses::l4_diversity(&vec![vec![lib_w.clone(), lib_w]; 4]).unwrap();
        (lib, oracle::l4(&vec![vec![w.clone(), w]; 4]))
    };
    let l4_orth = {
        let lib = losses::l4_diversity(&[
            vec![Matrix::row(&[1.0, 0.0])],
            vec![Matrix::row(&[0.0, 1.0])],
        ])
        .unwrap();
        (
            lib,
            oracle::l4(&[vec![vec![vec![1.0, 0.0]]], vec![vec![vec![0.0, 1.0]]]]),
        )
    };
    let l4_opposed = {
        let lib = losses::l4_diversity(&[
            vec![Matrix::row(&[1.0, 0.0])],
            vec![Matrix::row(&[-1.0, 0.0])],
        ])
        .unwrap();
        (
            lib,
            oracle::l4(&[vec![vec![vec![1.0, 0.0]]], vec![vec![vec![-1.0, 0.0]]]]),
        )
    };
    let cfg = losses::LossConfig {
        alpha: 0.9,
        beta: 0.5,
        t_ind: 1.0,
        t_mean: 1.0,
        lambda: hydra_kd::training::LambdaSchedule::Constant { value: 2.0 },
        weight_decay: 0.0,
    };
    let parts = losses::LossParts {
        l1: 1.0,
        l2: 2.0,
        l3: 3.0,
        l4: 4.0,
        weight_decay: 0.0,
    };

    vec![
        row(
            "l1 classification, split heads",
            losses::l1_classification(&split, 0).unwrap(),
            oracle::l1_class(&split, 0),
            1.03972,
        ),
        row(
            "l1 classification, uniform",
            losses::l1_classification(std::slice::from_ref(&uniform), 1).unwrap(),
            oracle::l1_class(std::slice::from_ref(&uniform), 1),
            ln3,
        ),
        row(
            "l1 regression, exact",
            losses::l1_regression(&gaussians(&[(2.0, 1.0)]), 2.0).unwrap(),
            oracle::l1_reg(&[(2.0, 1.0)], 2.0),
            0.0,
        ),
        row(
            "l1 regression, unit miss",
            losses::l1_regression(&gaussians(&[(3.0, 1.0)]), 2.0).unwrap(),
            oracle::l1_reg(&[(3.0, 1.0)], 2.0),
            0.5,
        ),
        row(
            "l2 classification, uniform",
            losses::l2_classification(&zeros, &zeros[..2], 1.0).unwrap(),
            oracle::l2_class(&zeros, &zeros[..2], 1.0),
            ln3,
        ),
        row(
            "l2 classification, skewed student",
            losses::l2_classification(&zeros, &student, 1.0).unwrap(),
            oracle::l2_class(&zeros, &student, 1.0),
            1.15525,
        ),
        row(
            "l2 regression, matched",
            losses::l2_regression(&gaussians(&[(0.0, 1.0)]), &gaussians(&[(0.0, 1.0)])).unwrap(),
            oracle::l2_reg(&[(0.0, 1.0)], &[(0.0, 1.0)]),
            0.5,
        ),
        row(
            "l2 regression, unit shift",
            losses::l2_regression(&gaussians(&[(1.0, 1.0)]), &gaussians(&[(0.0, 1.0)])).unwrap(),
            oracle::l2_reg(&[(1.0, 1.0)], &[(0.0, 1.0)]),
            1.0,
        ),
        row(
            "l2 regression, aggregated variance",
            losses::l2_regression(
                &gaussians(&[(-1.0, 1.0), (1.0, 1.0)]),
                &gaussians(&[(0.0, 2.0)]),
            )
            .unwrap(),
            oracle::l2_reg(&[(-1.0, 1.0), (1.0, 1.0)], &[(0.0, 2.0)]),
            0.5 * (1.0 + 2f64.ln()),
        ),
        row(
            "l3 classification, uniform",
            losses::l3_classification(&zeros, &zeros[..2], 1.0).unwrap(),
            oracle::l3_class(&zeros, &zeros[..2], 1.0),
            ln3,
        ),
        row(
            "l3 regression, matched",
            losses::l3_regression(&gaussians(&[(0.0, 1.0)]), &gaussians(&[(0.0, 1.0)])).unwrap(),
            oracle::l3_reg(&[(0.0, 1.0)], &[(0.0, 1.0)]),
            0.5,
        ),
        row(
            "l3 regression, shifted",
            losses::l3_regression(&gaussians(&[(2.0, 1.0)]), &gaussians(&[(0.0, 1.0)])).unwrap(),
            oracle::l3_reg(&[(2.0, 1.0)], &[(0.0, 1.0)]),
            2.5,
        ),
        row("l4 identical heads", l4_same.0, l4_same.1, 8.0),
        row("l4 orthogonal heads", l4_orth.0, l4_orth.1, 1.70711),
        row("l4 opposed heads", l4_opposed.0, l4_opposed.1, 1.0),
        row(
            "total",
            losses::total_loss(&cfg, &parts, 2.0),
            oracle::total(0.9, 0.5, 1.0, 1.0, 2.0, [1.0, 2.0, 3.0, 4.0]),
            10.35,
        ),
    ]
}

fn probs(rng: &mut StdRng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn logits(rng: &mut StdRng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect()
}

fn pairs(rng: &mut StdRng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(0.05..3.0)))
        .collect()
}

/// Library against oracle on `count` random instances of every term.
pub fn random_instances(seed: u64, count: usize) -> Vec<Row> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for _ in 0..count {
        let k = rng.gen_range(2..=5);
        let heads = rng.gen_range(2..=5);
        let teachers = rng.gen_range(heads..=8);
        let t = rng.gen_range(1.0..5.0);
        let label = rng.gen_range(0..k);

        let p: Vec<Vec<f64>> = (0..heads).map(|_| probs(&mut rng, k)).collect();
        rows.push((
            "l1 classification".into(),
            losses::l1_classification(&p, label).unwrap(),
            oracle::l1_class(&p, label),
        ));

        let y = rng.gen_range(-3.0..3.0);
        let s = pairs(&mut rng, heads);
        rows.push((
            "l1 regression".into(),
            losses::l1_regression(&gaussians(&s), y).unwrap(),
            oracle::l1_reg(&s, y),
        ));

        let tz = logits(&mut rng, teachers, k);
        let sz = logits(&mut rng, heads, k);
        rows.push((
            "l2 classification".into(),
            losses::l2_classification(&tz, &sz, t).unwrap(),
            oracle::l2_class(&tz, &sz, t),
        ));
        rows.push((
            "l3 classification".into(),
            losses::l3_classification(&tz, &sz, t).unwrap(),
            oracle::l3_class(&tz, &sz, t),
        ));

        let tp = pairs(&mut rng, teachers);
        rows.push((
            "l2 regression".into(),
            losses::l2_regression(&gaussians(&tp), &gaussians(&s)).unwrap(),
            oracle::l2_reg(&tp, &s),
        ));
        rows.push((
            "l3 regression".into(),
            losses::l3_regression(&gaussians(&tp), &gaussians(&s)).unwrap(),
            oracle::l3_reg(&tp, &s),
        ));

        let layers = rng.gen_range(1..=3);
        let widths: Vec<usize> = (0..=layers).map(|_| rng.gen_range(1..=4)).collect();
        let plain: Vec<Vec<Vec<Vec<f64>>>> = (0..heads)
            .map(|_| {
                (0..layers)
                    .map(|l| logits(&mut rng, widths[l + 1], widths[l]))
                    .collect()
            })
            .collect();
        let lib: Vec<Vec<Matrix>> = plain
            .iter()
            .map(|h| h.iter().map(|w| Matrix::from_rows(w).unwrap()).collect())
            .collect();
        rows.push((
            "l4 diversity".into(),
            losses::l4_diversity(&lib).unwrap(),
            oracle::l4(&plain),
        ));
    }
    rows
}

/// `|lib − oracle| / max(1, |oracle|)`.
pub fn gap(row: &Row) -> f64 {
    (row.1 - row.2).abs() / row.2.abs().max(1.0)
}
