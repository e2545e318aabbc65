//! Distillation objective: correctness (L1), aggregation (L2),
//! individuality (L3), weight-space diversity (L4) and their weighted sum.
//!
//! Each term has a graph form that works on a batch and averages over it,
//! used for training, and a per-example form on plain values that builds a
//! one-row graph and evaluates the same code. Constants that do not depend
//! on the student (teacher entropies, Gaussian normalisers) are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::softmax_in_place;
use crate::nn::{Matrix, ParamStore, Value, ValueGraph};
use crate::training::LambdaSchedule;
use crate::uncertainty::{decompose_regression, Gaussian};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub t_ind: f64,
    pub t_mean: f64,
    pub lambda: LambdaSchedule,
    pub weight_decay: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("t_ind", self.t_ind), ("t_mean", self.t_mean)] {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be at least 1, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.lambda.validate()
    }

    /// Multipliers of (L1, L2, L3, L4) for a given λ. The L2 and L3 weights
    /// carry the squared temperature of their softened distributions.
    pub fn coefficients(&self, lambda: f64) -> [f64; 4] {
        let (a, b) = (self.alpha, self.beta);
        [
            1.0 - a,
            a * (1.0 - b) * self.t_mean * self.t_mean,
            a * b * self.t_ind * self.t_ind,
            lambda,
        ]
    }
}

/// Values of the individual terms, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    /// Already-scaled weight decay `(wd/2)·Σθ²`.
    pub weight_decay: f64,
}

/// `(1−α)L1 + α((1−β)T_mean²·L2 + β·T_ind²·L3) + λL4 + weight decay`
pub fn total_loss(cfg: &LossConfig, parts: &LossParts, lambda: f64) -> f64 {
    let c = cfg.coefficients(lambda);
    c[0] * parts.l1 + c[1] * parts.l2 + c[2] * parts.l3 + c[3] * parts.l4 + parts.weight_decay
}

/// Graph form of [`total_loss`].
pub fn total_loss_graph(
    g: &mut ValueGraph,
    cfg: &LossConfig,
    parts: [Value; 4],
    weight_decay: Option<Value>,
    lambda: f64,
) -> Value {
    let c = cfg.coefficients(lambda);
    let terms: Vec<Value> = parts.iter().zip(c).map(|(&p, k)| g.scale(p, k)).collect();
    let mut total = g.add_all(&terms);
    if let Some(wd) = weight_decay {
        total = g.add(total, wd);
    }
    total
}

/// `(wd/2)·Σθ²` over every tensor in `store`.
pub fn weight_decay_graph(g: &mut ValueGraph, store: &ParamStore, wd: f64) -> Value {
    let squares: Vec<Value> = store
        .ids()
        .map(|id| {
            let p = g.param(store, id);
            g.sum_squares(p)
        })
        .collect();
    let total = g.add_all(&squares);
    g.scale(total, 0.5 * wd)
}

/// Frozen teacher outputs for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherBatchOutputs {
    /// `N` logit matrices, each `B × K`.
    Logits(Vec<Matrix>),
    /// `N` members' means and variances, each `B × 1`.
    Gaussians {
        means: Vec<Matrix>,
        variances: Vec<Matrix>,
    },
}

impl TeacherBatchOutputs {
    pub fn members(&self) -> usize {
        match self {
            TeacherBatchOutputs::Logits(l) => l.len(),
            TeacherBatchOutputs::Gaussians { means, .. } => means.len(),
        }
    }

    /// Builds the batch form from raw member outputs (logits, or mean and
    /// log-variance columns).
    pub fn from_raw(task: crate::models::Task, raw: &[Matrix]) -> Self {
        match task {
            crate::models::Task::Classification { .. } => TeacherBatchOutputs::Logits(raw.to_vec()),
            crate::models::Task::Regression => {
                let col = |m: &Matrix, j: usize, f: fn(f64) -> f64| {
                    Matrix::column(&(0..m.rows()).map(|r| f(m[(r, j)])).collect::<Vec<_>>())
                };
                TeacherBatchOutputs::Gaussians {
                    means: raw.iter().map(|m| col(m, 0, |v| v)).collect(),
                    variances: raw.iter().map(|m| col(m, 1, f64::exp)).collect(),
                }
            }
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |v: &[Matrix]| v.iter().map(|m| m.select_rows(rows)).collect();
        match self {
            TeacherBatchOutputs::Logits(l) => TeacherBatchOutputs::Logits(pick(l)),
            TeacherBatchOutputs::Gaussians { means, variances } => TeacherBatchOutputs::Gaussians {
                means: pick(means),
                variances: pick(variances),
            },
        }
    }
}

fn softened(logits: &Matrix, temperature: f64) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        softmax_in_place(p.row_slice_mut(r), temperature);
    }
    p
}

/// A student head's Gaussian output as graph nodes (`B × 1` each).
#[derive(Debug, Clone, Copy)]
pub struct GaussianHead {
    pub mean: Value,
    pub variance: Value,
    pub log_variance: Value,
}

impl GaussianHead {
    /// From a raw `B × 2` head output of (mean, log-variance).
    pub fn from_raw(g: &mut ValueGraph, raw: Value) -> Self {
        let mean = g.column(raw, 0);
        let log_variance = g.column(raw, 1);
        let variance = g.exp(log_variance);
        Self {
            mean,
            variance,
            log_variance,
        }
    }

    pub fn from_variance(g: &mut ValueGraph, mean: Value, variance: Value) -> Self {
        let log_variance = g.ln(variance);
        Self {
            mean,
            variance,
            log_variance,
        }
    }
}

fn batch_rows(g: &ValueGraph, v: Value) -> f64 {
    g.value(v).rows() as f64
}

/// `−(1/M) Σ_m log p_m[label]`, averaged over the batch.
pub fn l1_classification_graph(
    g: &mut ValueGraph,
    head_probs: &[Value],
    labels: &[usize],
) -> Value {
    let b = labels.len() as f64;
    let logs: Vec<Value> = head_probs
        .iter()
        .map(|&p| {
            let picked = g.pick(p, labels);
            let l = g.ln(picked);
            g.sum(l)
        })
        .collect();
    let total = g.add_all(&logs);
    g.scale(total, -1.0 / (head_probs.len() as f64 * b))
}

/// `(1/2M) Σ_m [(μ_m − y)²/σ²_m + log σ²_m]`, averaged over the batch.
pub fn l1_regression_graph(g: &mut ValueGraph, heads: &[GaussianHead], targets: Value) -> Value {
    let b = batch_rows(g, targets);
    let terms: Vec<Value> = heads
        .iter()
        .map(|h| {
            let r = g.sub(h.mean, targets);
            let r2 = g.square(r);
            let q = g.div(r2, h.variance);
            let t = g.add(q, h.log_variance);
            g.sum(t)
        })
        .collect();
    let total = g.add_all(&terms);
    g.scale(total, 0.5 / (heads.len() as f64 * b))
}

/// Cross-entropy between the averaged softened teacher and the averaged
/// softened student distributions.
pub fn l2_classification_graph(
    g: &mut ValueGraph,
    teacher_logits: &[Matrix],
    student_logits: &[Value],
    t_mean: f64,
) -> Value {
    let b = batch_rows(g, student_logits[0]);
    let teacher_probs: Vec<Vec<f64>> = teacher_logits
        .iter()
        .map(|l| softened(l, t_mean).into_vec())
        .collect();
    let (rows, cols) = teacher_logits[0].shape();
    let teacher_mean = Matrix::from_vec(rows, cols, crate::uncertainty::mean_rows(&teacher_probs))
        .expect("teacher members share a shape");
    let student_probs: Vec<Value> = student_logits
        .iter()
        .map(|&z| g.softmax(z, t_mean))
        .collect();
    let student_mean = g.average(&student_probs);
    let log_s = g.ln(student_mean);
    let t = g.constant(teacher_mean);
    let prod = g.mul(t, log_s);
    let s = g.sum(prod);
    g.scale(s, -1.0 / b)
}

/// Gaussian KL (constants dropped) between the aggregated teacher and the
/// aggregated student, each summarised by the mean of means and
/// mean variance + variance of means.
pub fn l2_regression_graph(
    g: &mut ValueGraph,
    teacher_means: &[Matrix],
    teacher_variances: &[Matrix],
    heads: &[GaussianHead],
) -> Result<Value> {
    let rows = teacher_means[0].rows();
    let mut t_mu = Vec::with_capacity(rows);
    let mut t_var = Vec::with_capacity(rows);
    for r in 0..rows {
        let members: Vec<Gaussian> = teacher_means
            .iter()
            .zip(teacher_variances)
            .map(|(m, v)| Gaussian {
                mean: m[(r, 0)],
                variance: v[(r, 0)],
            })
            .collect();
        t_var.push(decompose_regression(&members)?.predictive);
        t_mu.push(crate::uncertainty::running_mean(
            members.iter().map(|m| m.mean),
        ));
    }
    let means: Vec<Value> = heads.iter().map(|h| h.mean).collect();
    let vars: Vec<Value> = heads.iter().map(|h| h.variance).collect();
    let s_mu = g.average(&means);
    let spread: Vec<Value> = means
        .iter()
        .map(|&m| {
            let d = g.sub(m, s_mu);
            g.square(d)
        })
        .collect();
    let s_epi = g.average(&spread);
    let s_ale = g.average(&vars);
    let s_var = g.add(s_ale, s_epi);

    let tm = g.constant(Matrix::column(&t_mu));
    let tv = g.constant(Matrix::column(&t_var));
    let gap = g.sub(tm, s_mu);
    let gap2 = g.square(gap);
    let num = g.add(tv, gap2);
    let q = g.div(num, s_var);
    let log_var = g.ln(s_var);
    let t = g.add(q, log_var);
    let s = g.sum(t);
    Ok(g.scale(s, 0.5 / rows as f64))
}

/// Head receiving teacher `n`.
pub fn assigned_head(teacher: usize, heads: usize) -> usize {
    teacher % heads
}

/// Number of teachers routed to each head.
pub fn teachers_per_head(teachers: usize, heads: usize) -> Vec<usize> {
    let mut counts = vec![0; heads];
    for n in 0..teachers {
        counts[assigned_head(n, heads)] += 1;
    }
    counts
}

/// `−(1/N) Σ_n Σ_k p_T^{n,k} log p_S^{n mod M, k}` with both sides softened.
pub fn l3_classification_graph(
    g: &mut ValueGraph,
    teacher_logits: &[Matrix],
    student_logits: &[Value],
    t_ind: f64,
) -> Value {
    let b = batch_rows(g, student_logits[0]);
    let m = student_logits.len();
    let log_probs: Vec<Value> = student_logits
        .iter()
        .map(|&z| {
            let p = g.softmax(z, t_ind);
            g.ln(p)
        })
        .collect();
    let terms: Vec<Value> = teacher_logits
        .iter()
        .enumerate()
        .map(|(n, l)| {
            let t = g.constant(softened(l, t_ind));
            let prod = g.mul(t, log_probs[assigned_head(n, m)]);
            g.sum(prod)
        })
        .collect();
    let total = g.add_all(&terms);
    g.scale(total, -1.0 / (teacher_logits.len() as f64 * b))
}

/// Mean over teachers of the Gaussian KL (constants dropped) between
/// teacher `n` and head `n mod M`.
pub fn l3_regression_graph(
    g: &mut ValueGraph,
    teacher_means: &[Matrix],
    teacher_variances: &[Matrix],
    heads: &[GaussianHead],
) -> Value {
    let b = teacher_means[0].rows() as f64;
    let m = heads.len();
    let terms: Vec<Value> = teacher_means
        .iter()
        .zip(teacher_variances)
        .enumerate()
        .map(|(n, (tm, tv))| {
            let h = heads[assigned_head(n, m)];
            let tm = g.constant(tm.clone());
            let tv = g.constant(tv.clone());
            let gap = g.sub(tm, h.mean);
            let gap2 = g.square(gap);
            let num = g.add(tv, gap2);
            let q = g.div(num, h.variance);
            let t = g.add(q, h.log_variance);
            g.sum(t)
        })
        .collect();
    let total = g.add_all(&terms);
    g.scale(total, 0.5 / (teacher_means.len() as f64 * b))
}

/// `Σ_l Σ_m (1 + cos(θ_mean^l, θ_m^l))/2`, where each layer's cosine is the
/// mean over nodes (weight rows) of the per-node cosine with the averaged
/// head. `head_weights` is indexed `[head][layer]`.
pub fn l4_diversity_graph(g: &mut ValueGraph, head_weights: &[Vec<Value>]) -> Value {
    let layers = head_weights[0].len();
    let mut terms = Vec::with_capacity(layers * head_weights.len());
    for l in 0..layers {
        let layer: Vec<Value> = head_weights.iter().map(|h| h[l]).collect();
        let mean = g.average(&layer);
        for &w in &layer {
            let cos = g.row_cosine(w, mean);
            let c = g.mean(cos);
            let shifted = g.shift(c, 1.0);
            terms.push(g.scale(shifted, 0.5));
        }
    }
    g.add_all(&terms)
}

fn check_prob_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let k = check_rows(rows, what)?;
    for (i, r) in rows.iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-6 || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "{what} row {i} is not a probability vector"
            )));
        }
    }
    Ok(k)
}

fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || k == 0 {
        return Err(Error::Input(format!("{what} must be non-empty")));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Shape(format!("{what} rows differ in length")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{what} contains non-finite values")));
    }
    Ok(k)
}

fn check_gaussians(pairs: &[Gaussian], what: &str) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Input(format!("{what} must be non-empty")));
    }
    if let Some(p) = pairs
        .iter()
        .find(|p| !(p.variance > 0.0) || !p.mean.is_finite())
    {
        return Err(Error::Numeric(format!(
            "{what} variance must be positive, got {}",
            p.variance
        )));
    }
    Ok(())
}

fn check_assignment(teachers: usize, heads: usize) -> Result<()> {
    if heads > teachers {
        return Err(Error::Config(format!(
            "{heads} heads cannot be matched to {teachers} teachers"
        )));
    }
    Ok(())
}

fn row_constants(g: &mut ValueGraph, rows: &[Vec<f64>]) -> Vec<Value> {
    rows.iter().map(|r| g.constant(Matrix::row(r))).collect()
}

fn gaussian_constants(g: &mut ValueGraph, pairs: &[Gaussian]) -> Vec<GaussianHead> {
    pairs
        .iter()
        .map(|p| {
            let m = g.constant(Matrix::scalar(p.mean));
            let v = g.constant(Matrix::scalar(p.variance));
            GaussianHead::from_variance(g, m, v)
        })
        .collect()
}

/// Per-example L1 for `M` probability rows and the true class.
pub fn l1_classification(student_probs: &[Vec<f64>], label: usize) -> Result<f64> {
    let k = check_prob_rows(student_probs, "student probabilities")?;
    if label >= k {
        return Err(Error::Input(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let mut g = ValueGraph::new();
    let probs = row_constants(&mut g, student_probs);
    let out = l1_classification_graph(&mut g, &probs, &[label]);
    Ok(g.scalar(out))
}

pub fn l1_regression(student: &[Gaussian], target: f64) -> Result<f64> {
    check_gaussians(student, "student")?;
    let mut g = ValueGraph::new();
    let heads = gaussian_constants(&mut g, student);
    let y = g.constant(Matrix::scalar(target));
    let out = l1_regression_graph(&mut g, &heads, y);
    Ok(g.scalar(out))
}

pub fn l2_classification(
    teacher_logits: &[Vec<f64>],
    student_logits: &[Vec<f64>],
    t_mean: f64,
) -> Result<f64> {
    let k = check_rows(teacher_logits, "teacher logits")?;
    if check_rows(student_logits, "student logits")? != k {
        return Err(Error::Shape(
            "teacher and student class counts differ".into(),
        ));
    }
    check_temperature(t_mean)?;
    let mut g = ValueGraph::new();
    let teacher: Vec<Matrix> = teacher_logits.iter().map(|r| Matrix::row(r)).collect();
    let student = row_constants(&mut g, student_logits);
    let out = l2_classification_graph(&mut g, &teacher, &student, t_mean);
    Ok(g.scalar(out))
}

pub fn l2_regression(teacher: &[Gaussian], student: &[Gaussian]) -> Result<f64> {
    check_gaussians(teacher, "teacher")?;
    check_gaussians(student, "student")?;
    let mut g = ValueGraph::new();
    let heads = gaussian_constants(&mut g, student);
    let means: Vec<Matrix> = teacher.iter().map(|t| Matrix::scalar(t.mean)).collect();
    let vars: Vec<Matrix> = teacher.iter().map(|t| Matrix::scalar(t.variance)).collect();
    let out = l2_regression_graph(&mut g, &means, &vars, &heads)?;
    Ok(g.scalar(out))
}

pub fn l3_classification(
    teacher_logits: &[Vec<f64>],
    student_logits: &[Vec<f64>],
    t_ind: f64,
) -> Result<f64> {
    let k = check_rows(teacher_logits, "teacher logits")?;
    if check_rows(student_logits, "student logits")? != k {
        return Err(Error::Shape(
            "teacher and student class counts differ".into(),
        ));
    }
    check_assignment(teacher_logits.len(), student_logits.len())?;
    check_temperature(t_ind)?;
    let mut g = ValueGraph::new();
    let teacher: Vec<Matrix> = teacher_logits.iter().map(|r| Matrix::row(r)).collect();
    let student = row_constants(&mut g, student_logits);
    let out = l3_classification_graph(&mut g, &teacher, &student, t_ind);
    Ok(g.scalar(out))
}

pub fn l3_regression(teacher: &[Gaussian], student: &[Gaussian]) -> Result<f64> {
    check_gaussians(teacher, "teacher")?;
    check_gaussians(student, "student")?;
    check_assignment(teacher.len(), student.len())?;
    let mut g = ValueGraph::new();
    let heads = gaussian_constants(&mut g, student);
    let means: Vec<Matrix> = teacher.iter().map(|t| Matrix::scalar(t.mean)).collect();
    let vars: Vec<Matrix> = teacher.iter().map(|t| Matrix::scalar(t.variance)).collect();
    let out = l3_regression_graph(&mut g, &means, &vars, &heads);
    Ok(g.scalar(out))
}

/// L4 on plain head weights, indexed `[head][layer]`, each `(nodes × inputs)`.
pub fn l4_diversity(head_weights: &[Vec<Matrix>]) -> Result<f64> {
    if head_weights.len() < 2 {
        return Err(Error::Config("diversity needs at least 2 heads".into()));
    }
    let reference = &head_weights[0];
    if reference.is_empty() {
        return Err(Error::Input("heads have no layers".into()));
    }
    for (m, h) in head_weights.iter().enumerate() {
        if h.len() != reference.len()
            || h.iter().zip(reference).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape(format!(
                "head {m} differs in shape from head 0"
            )));
        }
    }
    let mut g = ValueGraph::new();
    let nodes: Vec<Vec<Value>> = head_weights
        .iter()
        .map(|h| h.iter().map(|w| g.constant(w.clone())).collect())
        .collect();
    let out = l4_diversity_graph(&mut g, &nodes);
    Ok(g.scalar(out))
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {t}"
        )));
    }
    Ok(())
}
