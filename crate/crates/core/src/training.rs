//! Teacher ensemble training and one-session student distillation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabelledSet, Splits, Targets};
use crate::error::{Error, Result};
use crate::losses::{self, GaussianHead, LossConfig, LossParts, TeacherBatchOutputs};
use crate::metrics;
use crate::models::{
    combine_predictions, predict_members, Combined, EnsembleTeacher, Mlp, MlpSpec, MultiHeadNet,
    MultiHeadSpec, Predictor, Task,
};
use crate::nn::{
    adam_step, clip_global_norm, cosine_lr, AdamState, Matrix, ParamStore, Value, ValueGraph,
};

pub const CLIP_NORM: f64 = 5.0;

/// Salt separating the student's initialisation stream from the teachers'.
const STUDENT_SEED_SALT: u64 = 0x5EED_57D0_0000_0001;
const SHUFFLE_SALT: u64 = 0x5EED_5F1E_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaSchedule {
    Constant {
        value: f64,
    },
    /// Zero before `start`, linear up to `peak` at `end`, then flat.
    Ramp {
        start: usize,
        end: usize,
        peak: f64,
    },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaSchedule::Constant { value } if !(value >= 0.0) || !value.is_finite() => Err(
                Error::Config(format!("lambda must be non-negative, got {value}")),
            ),
            LambdaSchedule::Ramp { start, end, peak } => {
                if start >= end {
                    return Err(Error::Config(format!(
                        "lambda ramp start {start} must precede end {end}"
                    )));
                }
                if !(peak >= 0.0) || !peak.is_finite() {
                    return Err(Error::Config(format!(
                        "lambda peak must be non-negative, got {peak}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            LambdaSchedule::Constant { value } => value == 0.0,
            LambdaSchedule::Ramp { peak, .. } => peak == 0.0,
        }
    }
}

pub fn lambda_at(schedule: &LambdaSchedule, epoch: usize) -> f64 {
    match *schedule {
        LambdaSchedule::Constant { value } => value,
        LambdaSchedule::Ramp { start, end, peak } => {
            if epoch <= start {
                0.0
            } else if epoch >= end {
                peak
            } else {
                peak * (epoch - start) as f64 / (end - start) as f64
            }
        }
    }
}

/// The published diversity weight for a toy task and head count, if any.
pub fn default_lambda(task: Task, heads: usize) -> Option<LambdaSchedule> {
    match task {
        Task::Classification { .. } => {
            let value = match heads {
                20 => 4.0,
                10 => 7.0,
                5 => 9.0,
                _ => return None,
            };
            Some(LambdaSchedule::Constant { value })
        }
        Task::Regression => {
            let peak = match heads {
                20 => 2e-3,
                10 => 0.02,
                5 => 0.6,
                _ => return None,
            };
            Some(LambdaSchedule::Ramp {
                start: 50,
                end: 150,
                peak,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Hydra,
    HydraPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub teacher_weight_decay: f64,
    pub ensemble_size: usize,
    pub heads: usize,
    /// Student objective, including its weight decay and λ schedule.
    pub loss: LossConfig,
}

impl RunConfig {
    /// Published toy settings for `task` with `heads` student heads and a
    /// 20-member teacher.
    pub fn defaults(task: Task, heads: usize) -> Result<Self> {
        let lambda = default_lambda(task, heads).ok_or_else(|| {
            Error::Config(format!(
                "no default lambda for {heads} heads; set `lambda` explicitly"
            ))
        })?;
        let (learning_rate, teacher_weight_decay, t_ind) = match task {
            Task::Classification { .. } => (0.01, 1e-4, 3.0),
            Task::Regression => (0.05, 1e-5, 1.0),
        };
        Ok(Self {
            task,
            seed: 0,
            epochs: 200,
            batch_size: 256,
            learning_rate,
            teacher_weight_decay,
            ensemble_size: 20,
            heads,
            loss: LossConfig {
                alpha: 0.9,
                beta: 0.5,
                t_ind,
                t_mean: 1.0,
                lambda,
                weight_decay: 1e-8,
            },
        })
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        if preset == Preset::Hydra {
            self.loss.alpha = 1.0;
            self.loss.beta = 1.0;
            self.loss.lambda = LambdaSchedule::Constant { value: 0.0 };
        }
    }

    /// Checks everything teacher training depends on.
    pub fn validate_teacher(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.teacher_weight_decay >= 0.0) {
            return Err(Error::Config(
                "teacher weight decay must be non-negative".into(),
            ));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config(
                "the ensemble needs at least one member".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_teacher()?;
        if self.heads > self.ensemble_size {
            return Err(Error::Config(format!(
                "{} heads exceed {} teachers",
                self.heads, self.ensemble_size
            )));
        }
        if let LambdaSchedule::Ramp { end, .. } = self.loss.lambda {
            if end > self.epochs {
                return Err(Error::Config(format!(
                    "lambda ramp ends at epoch {end}, after the last epoch {}",
                    self.epochs
                )));
            }
        }
        self.loss.validate()?;
        self.student_spec().validate()
    }

    pub fn teacher_spec(&self) -> MlpSpec {
        match self.task {
            Task::Classification { .. } => MlpSpec::spiral(),
            Task::Regression => MlpSpec::cubic_sine(),
        }
    }

    pub fn student_spec(&self) -> MultiHeadSpec {
        MultiHeadSpec::for_task(self.task, self.heads)
    }

    pub fn student_seed(&self) -> u64 {
        self.seed ^ STUDENT_SEED_SALT
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub member: Option<usize>,
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub weight_decay: f64,
    pub total: f64,
    /// Validation error rate (classification) or Gaussian NLL (regression).
    pub val_metric: f64,
}

/// Writes records as JSON lines.
pub fn write_log<W: std::io::Write>(out: &mut W, records: &[EpochRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn shuffled_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn check_task(task: Task, set: &LabelledSet) -> Result<()> {
    let ok = matches!(
        (task, &set.targets),
        (Task::Classification { .. }, Targets::Classes(_)) | (Task::Regression, Targets::Values(_))
    );
    if !ok {
        return Err(Error::Input(format!(
            "{} split does not hold {} targets",
            set.split,
            task.name()
        )));
    }
    if let (Task::Classification { classes }, Targets::Classes(c)) = (task, &set.targets) {
        if c.iter().any(|&k| k >= classes) {
            return Err(Error::Input(format!("labels must be below {classes}")));
        }
    }
    Ok(())
}

/// Batch targets as graph inputs.
enum BatchTargets {
    Classes(Vec<usize>),
    Values(Matrix),
}

fn batch_targets(set: &LabelledSet, rows: &[usize]) -> BatchTargets {
    match &set.targets {
        Targets::Classes(c) => BatchTargets::Classes(rows.iter().map(|&i| c[i]).collect()),
        Targets::Values(v) => BatchTargets::Values(Matrix::column(
            &rows.iter().map(|&i| v[i]).collect::<Vec<_>>(),
        )),
    }
}

/// Validation error (classification) or NLL (regression) of combined predictions.
pub fn validation_metric<P: Predictor + ?Sized>(model: &P, set: &LabelledSet) -> Result<f64> {
    let outputs = predict_members(model, &set.input_matrix())?;
    let combined = outputs
        .iter()
        .map(combine_predictions)
        .collect::<Result<Vec<_>>>()?;
    match &set.targets {
        Targets::Classes(labels) => {
            let probs: Vec<Vec<f64>> = combined
                .into_iter()
                .map(|c| match c {
                    Combined::Classification(p) => p,
                    Combined::Regression(_) => unreachable!("task checked"),
                })
                .collect();
            metrics::error_rate(&probs, labels)
        }
        Targets::Values(y) => {
            let pred: Vec<_> = combined
                .into_iter()
                .map(|c| match c {
                    Combined::Regression(g) => g,
                    Combined::Classification(_) => unreachable!("task checked"),
                })
                .collect();
            metrics::nll_gaussian(&pred, y)
        }
    }
}

/// Backward pass, finite check, clipping and an Adam step.
fn apply_update(
    g: &ValueGraph,
    total: Value,
    store: &mut ParamStore,
    adam: &mut AdamState,
    lr: f64,
    context: &dyn Fn() -> String,
) -> Result<()> {
    let loss = g.scalar(total);
    if !loss.is_finite() {
        return Err(Error::Training(format!("{}: loss is {loss}", context())));
    }
    g.backward(total, store)?;
    if let Some(name) = store.first_non_finite_grad() {
        return Err(Error::Training(format!(
            "{}: non-finite gradient in `{name}`",
            context()
        )));
    }
    clip_global_norm(store, CLIP_NORM);
    adam_step(store, adam, lr)?;
    if let Some(name) = store.first_non_finite_value() {
        return Err(Error::Training(format!(
            "{}: parameter `{name}` became non-finite",
            context()
        )));
    }
    Ok(())
}

/// Accumulates batch-size weighted loss parts over an epoch.
#[derive(Default)]
struct EpochTotals {
    parts: LossParts,
    total: f64,
    seen: usize,
}

impl EpochTotals {
    fn add(&mut self, parts: LossParts, total: f64, batch: usize) {
        let w = batch as f64;
        self.parts.l1 += w * parts.l1;
        self.parts.l2 += w * parts.l2;
        self.parts.l3 += w * parts.l3;
        self.parts.l4 += w * parts.l4;
        self.parts.weight_decay += w * parts.weight_decay;
        self.total += w * total;
        self.seen += batch;
    }

    fn finish(self) -> (LossParts, f64) {
        let n = self.seen.max(1) as f64;
        let p = self.parts;
        (
            LossParts {
                l1: p.l1 / n,
                l2: p.l2 / n,
                l3: p.l3 / n,
                l4: p.l4 / n,
                weight_decay: p.weight_decay / n,
            },
            self.total / n,
        )
    }
}

/// Likelihood of the data under a single network or every head: mean
/// cross-entropy or mean Gaussian NLL (constant dropped).
fn likelihood_term(
    g: &mut ValueGraph,
    task: Task,
    heads: &[Value],
    targets: &BatchTargets,
) -> Value {
    match (task, targets) {
        (Task::Classification { .. }, BatchTargets::Classes(labels)) => {
            let probs: Vec<Value> = heads.iter().map(|&z| g.softmax(z, 1.0)).collect();
            losses::l1_classification_graph(g, &probs, labels)
        }
        (Task::Regression, BatchTargets::Values(y)) => {
            let gaussians: Vec<GaussianHead> = heads
                .iter()
                .map(|&h| GaussianHead::from_raw(g, h))
                .collect();
            let y = g.constant(y.clone());
            losses::l1_regression_graph(g, &gaussians, y)
        }
        _ => unreachable!("targets follow the task"),
    }
}

fn train_member(
    member: &mut Mlp,
    index: usize,
    seed: u64,
    cfg: &RunConfig,
    data: &Splits,
) -> Result<Vec<EpochRecord>> {
    let mut adam = AdamState::new(member.store());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate);
        let mut totals = EpochTotals::default();
        for rows in shuffled_batches(data.train.len(), cfg.batch_size, seed, epoch) {
            let targets = batch_targets(&data.train, &rows);
            let mut g = ValueGraph::new();
            let x = g.constant(data.train.input_matrix().select_rows(&rows));
            let out = member.forward_graph(&mut g, x);
            let nll = likelihood_term(&mut g, cfg.task, &[out], &targets);
            let wd = losses::weight_decay_graph(&mut g, member.store(), cfg.teacher_weight_decay);
            let total = g.add(nll, wd);
            let parts = LossParts {
                l1: g.scalar(nll),
                weight_decay: g.scalar(wd),
                ..LossParts::default()
            };
            totals.add(parts, g.scalar(total), rows.len());
            apply_update(&g, total, member.store_mut(), &mut adam, lr, &|| {
                format!("teacher member {index} at epoch {epoch}")
            })?;
        }
        let (parts, total) = totals.finish();
        let single =
            EnsembleTeacher::from_members(member.spec().clone(), vec![member.clone()], vec![seed])?;
        log.push(EpochRecord {
            member: Some(index),
            epoch,
            lr,
            lambda: 0.0,
            l1: parts.l1,
            l2: 0.0,
            l3: 0.0,
            l4: 0.0,
            weight_decay: parts.weight_decay,
            total,
            val_metric: validation_metric(&single, &data.val)?,
        });
    }
    Ok(log)
}

/// Trains every member independently (in parallel) from its own seed.
/// Returns the ensemble and the per-member logs, member-major.
pub fn train_teacher(
    cfg: &RunConfig,
    data: &Splits,
) -> Result<(EnsembleTeacher, Vec<EpochRecord>)> {
    cfg.validate_teacher()?;
    for set in data.iter() {
        check_task(cfg.task, set)?;
    }
    let mut teacher = EnsembleTeacher::new(cfg.teacher_spec(), cfg.ensemble_size, cfg.seed)?;
    let seeds = teacher.seeds().to_vec();
    let logs = teacher
        .members_mut()
        .par_iter_mut()
        .enumerate()
        .map(|(n, member)| train_member(member, n, seeds[n], cfg, data))
        .collect::<Result<Vec<_>>>()?;
    Ok((teacher, logs.into_iter().flatten().collect()))
}

/// Teacher outputs on the training inputs, computed once and reused every
/// epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    pub outputs: TeacherBatchOutputs,
}

impl TeacherCache {
    pub fn new(teacher: &EnsembleTeacher, inputs: &Matrix) -> Result<Self> {
        let raw = teacher.raw_outputs(inputs)?;
        Ok(Self {
            outputs: TeacherBatchOutputs::from_raw(teacher.task(), &raw),
        })
    }
}

/// Builds the full student objective on one batch. Returns the total and
/// the unweighted terms.
#[allow(clippy::too_many_arguments)]
pub fn student_objective(
    g: &mut ValueGraph,
    student: &MultiHeadNet,
    loss: &LossConfig,
    lambda: f64,
    x: Value,
    targets_classes: Option<&[usize]>,
    targets_values: Option<&Matrix>,
    teacher: &TeacherBatchOutputs,
) -> Result<(Value, [Value; 4], Value)> {
    let sg = student.forward_graph(g, x);
    let terms = match teacher {
        TeacherBatchOutputs::Logits(logits) => {
            let labels =
                targets_classes.ok_or_else(|| Error::Input("class targets required".into()))?;
            let probs: Vec<Value> = sg.heads.iter().map(|&z| g.softmax(z, 1.0)).collect();
            [
                losses::l1_classification_graph(g, &probs, labels),
                losses::l2_classification_graph(g, logits, &sg.heads, loss.t_mean),
                losses::l3_classification_graph(g, logits, &sg.heads, loss.t_ind),
                losses::l4_diversity_graph(g, &sg.head_weights),
            ]
        }
        TeacherBatchOutputs::Gaussians { means, variances } => {
            let y = targets_values.ok_or_else(|| Error::Input("value targets required".into()))?;
            let heads: Vec<GaussianHead> = sg
                .heads
                .iter()
                .map(|&h| GaussianHead::from_raw(g, h))
                .collect();
            let yv = g.constant(y.clone());
            [
                losses::l1_regression_graph(g, &heads, yv),
                losses::l2_regression_graph(g, means, variances, &heads)?,
                losses::l3_regression_graph(g, means, variances, &heads),
                losses::l4_diversity_graph(g, &sg.head_weights),
            ]
        }
    };
    let wd = losses::weight_decay_graph(g, student.store(), loss.weight_decay);
    let total = losses::total_loss_graph(g, loss, terms, Some(wd), lambda);
    Ok((total, terms, wd))
}

/// Distils a frozen teacher into a fresh multi-head student in one session.
pub fn distill_student(
    teacher: &EnsembleTeacher,
    cfg: &RunConfig,
    data: &Splits,
) -> Result<(MultiHeadNet, Vec<EpochRecord>)> {
    cfg.validate()?;
    if teacher.task() != cfg.task {
        return Err(Error::Input(format!(
            "teacher solves {} but the run is {}",
            teacher.task().name(),
            cfg.task.name()
        )));
    }
    if cfg.heads > teacher.len() {
        return Err(Error::Config(format!(
            "{} heads exceed the teacher's {} members",
            cfg.heads,
            teacher.len()
        )));
    }
    for set in data.iter() {
        check_task(cfg.task, set)?;
    }
    let train_x = data.train.input_matrix();
    let cache = TeacherCache::new(teacher, &train_x)?;
    let mut student = MultiHeadNet::new(cfg.student_spec(), cfg.student_seed())?;
    let mut adam = AdamState::new(student.store());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate);
        let lambda = lambda_at(&cfg.loss.lambda, epoch);
        let mut totals = EpochTotals::default();
        for rows in shuffled_batches(data.train.len(), cfg.batch_size, cfg.student_seed(), epoch) {
            let targets = batch_targets(&data.train, &rows);
            let (classes, values) = match &targets {
                BatchTargets::Classes(c) => (Some(c.as_slice()), None),
                BatchTargets::Values(v) => (None, Some(v)),
            };
            let teacher_batch = cache.outputs.select_rows(&rows);
            let mut g = ValueGraph::new();
            let x = g.constant(train_x.select_rows(&rows));
            let (total, terms, wd) = student_objective(
                &mut g,
                &student,
                &cfg.loss,
                lambda,
                x,
                classes,
                values,
                &teacher_batch,
            )?;
            let parts = LossParts {
                l1: g.scalar(terms[0]),
                l2: g.scalar(terms[1]),
                l3: g.scalar(terms[2]),
                l4: g.scalar(terms[3]),
                weight_decay: g.scalar(wd),
            };
            totals.add(parts, g.scalar(total), rows.len());
            apply_update(&g, total, student.store_mut(), &mut adam, lr, &|| {
                format!("student at epoch {epoch}")
            })?;
        }
        let (parts, total) = totals.finish();
        log.push(EpochRecord {
            member: None,
            epoch,
            lr,
            lambda,
            l1: parts.l1,
            l2: parts.l2,
            l3: parts.l3,
            l4: parts.l4,
            weight_decay: parts.weight_decay,
            total,
            val_metric: validation_metric(&student, &data.val)?,
        });
    }
    Ok((student, log))
}
