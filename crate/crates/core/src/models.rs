//! Teacher ensembles, shared-core multi-head students, and their
//! parameter and FLOP accounting.
//!
//! Counting convention: a dense layer costs one operation per weight (a fused
//! multiply-add), one per bias, and one per activation output when a
//! rectifier follows it. Students apply a rectifier after every core layer
//! and after every head layer except the last.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, LinearLayer, Matrix, ParamStore, Value, ValueGraph};
use crate::uncertainty::{decompose_regression, Gaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    /// Raw network output width: K logits, or (mean, log-variance).
    pub fn output_width(self) -> usize {
        match self {
            Task::Classification { classes } => classes,
            Task::Regression => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Classification { .. } => "classification",
            Task::Regression => "regression",
        }
    }
}

/// One dense layer in a cost plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PlannedLayer {
    inputs: usize,
    outputs: usize,
    rectified: bool,
}

impl PlannedLayer {
    fn params(self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn flops(self) -> usize {
        self.params() + if self.rectified { self.outputs } else { 0 }
    }
}

fn plan(widths: &[usize], rectify_last: bool) -> Vec<PlannedLayer> {
    let n = widths.len().saturating_sub(1);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| PlannedLayer {
            inputs: w[0],
            outputs: w[1],
            rectified: rectify_last || i + 1 < n,
        })
        .collect()
}

/// Parameter and FLOP totals of an architecture.
pub trait Complexity {
    fn param_count(&self) -> usize;
    fn flop_count(&self) -> usize;
}

pub fn count_params<C: Complexity + ?Sized>(model: &C) -> usize {
    model.param_count()
}

pub fn count_flops<C: Complexity + ?Sized>(model: &C) -> usize {
    model.flop_count()
}

impl Complexity for LinearLayer {
    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn flop_count(&self) -> usize {
        self.param_count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub task: Task,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, task: Task) -> Result<Self> {
        let spec = Self { widths, task };
        spec.validate()?;
        Ok(spec)
    }

    /// `[2, 100, 100, 100, 100, 3]`
    pub fn spiral() -> Self {
        Self {
            widths: vec![2, 100, 100, 100, 100, 3],
            task: Task::Classification { classes: 3 },
        }
    }

    /// `[1, 50, 50, 50, 2]`
    pub fn cubic_sine() -> Self {
        Self {
            widths: vec![1, 50, 50, 50, 2],
            task: Task::Regression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least two widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        check_output(self.task, *self.widths.last().unwrap())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    fn plan(&self) -> Vec<PlannedLayer> {
        plan(&self.widths, false)
    }
}

fn check_output(task: Task, width: usize) -> Result<()> {
    if let Task::Classification { classes } = task {
        if classes < 2 {
            return Err(Error::Config(
                "classification needs at least 2 classes".into(),
            ));
        }
    }
    if width != task.output_width() {
        return Err(Error::Config(format!(
            "{} output width must be {}, got {width}",
            task.name(),
            task.output_width()
        )));
    }
    Ok(())
}

impl Complexity for MlpSpec {
    fn param_count(&self) -> usize {
        self.plan().iter().map(|l| l.params()).sum()
    }

    fn flop_count(&self) -> usize {
        self.plan().iter().map(|l| l.flops()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiHeadSpec {
    /// Core widths from the input to the shared representation.
    pub core: Vec<usize>,
    /// Head widths from the shared representation to the output.
    pub head: Vec<usize>,
    pub heads: usize,
    pub task: Task,
}

impl MultiHeadSpec {
    pub fn new(core: Vec<usize>, head: Vec<usize>, heads: usize, task: Task) -> Result<Self> {
        let spec = Self {
            core,
            head,
            heads,
            task,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spiral teacher split after its third layer: core `[2, 100, 100, 100]`,
    /// heads `[100, 100, 3]`.
    pub fn spiral(heads: usize) -> Self {
        Self {
            core: vec![2, 100, 100, 100],
            head: vec![100, 100, 3],
            heads,
            task: Task::Classification { classes: 3 },
        }
    }

    /// Regression teacher split after its second layer: core `[1, 50, 50]`,
    /// heads `[50, 50, 2]`.
    pub fn cubic_sine(heads: usize) -> Self {
        Self {
            core: vec![1, 50, 50],
            head: vec![50, 50, 2],
            heads,
            task: Task::Regression,
        }
    }

    pub fn for_task(task: Task, heads: usize) -> Self {
        match task {
            Task::Classification { .. } => Self::spiral(heads),
            Task::Regression => Self::cubic_sine(heads),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads < 2 {
            return Err(Error::Config(format!(
                "a multi-head student needs at least 2 heads, got {}",
                self.heads
            )));
        }
        if self.core.len() < 2 || self.head.len() < 2 {
            return Err(Error::Config(
                "core and head each need at least one layer".into(),
            ));
        }
        if self.core.contains(&0) || self.head.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.core.last() != self.head.first() {
            return Err(Error::Config(format!(
                "core output width {} does not match head input width {}",
                self.core.last().unwrap(),
                self.head.first().unwrap()
            )));
        }
        check_output(self.task, *self.head.last().unwrap())
    }

    pub fn input_width(&self) -> usize {
        self.core[0]
    }

    pub fn core_complexity(&self) -> (usize, usize) {
        let p = plan(&self.core, true);
        (
            p.iter().map(|l| l.params()).sum(),
            p.iter().map(|l| l.flops()).sum(),
        )
    }

    pub fn head_complexity(&self) -> (usize, usize) {
        let p = plan(&self.head, false);
        (
            p.iter().map(|l| l.params()).sum(),
            p.iter().map(|l| l.flops()).sum(),
        )
    }

    /// Number of weight-carrying layers per head.
    pub fn head_depth(&self) -> usize {
        self.head.len() - 1
    }
}

impl Complexity for MultiHeadSpec {
    fn param_count(&self) -> usize {
        self.core_complexity().0 + self.heads * self.head_complexity().0
    }

    fn flop_count(&self) -> usize {
        self.core_complexity().1 + self.heads * self.head_complexity().1
    }
}

/// Architecture of an N-member ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub member: MlpSpec,
    pub members: usize,
}

impl Complexity for EnsembleSpec {
    fn param_count(&self) -> usize {
        self.members * self.member.param_count()
    }

    fn flop_count(&self) -> usize {
        self.members * self.member.flop_count()
    }
}

fn rectified_stack(
    g: &mut ValueGraph,
    store: &ParamStore,
    layers: &[Dense],
    x: Value,
    rectify_last: bool,
) -> Value {
    let n = layers.len();
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        let w = g.param(store, layer.weight);
        let b = g.param(store, layer.bias);
        let z = g.matmul_t(h, w);
        h = g.add_bias(z, b);
        if rectify_last || i + 1 < n {
            h = g.relu(h);
        }
    }
    h
}

fn check_batch(x: &Matrix, width: usize) -> Result<()> {
    if x.cols() != width {
        return Err(Error::Shape(format!(
            "model expects {width} input features, got {}",
            x.cols()
        )));
    }
    if !x.is_finite() {
        return Err(Error::Input("non-finite model input".into()));
    }
    Ok(())
}

/// A plain rectified MLP (one teacher member).
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    store: ParamStore,
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                store.add_layer(
                    &format!("layer{i}"),
                    LinearLayer::init(w[0], w[1], &mut rng),
                )
            })
            .collect();
        Ok(Self {
            spec,
            store,
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Raw outputs (logits or mean/log-variance), `B × out`.
    pub fn forward_graph(&self, g: &mut ValueGraph, x: Value) -> Value {
        rectified_stack(g, &self.store, &self.layers, x, false)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        check_batch(x, self.spec.input_width())?;
        let mut g = ValueGraph::new();
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, xv);
        Ok(g.value(out).clone())
    }
}

impl Complexity for Mlp {
    fn param_count(&self) -> usize {
        debug_assert_eq!(self.store.scalar_count(), self.spec.param_count());
        self.spec.param_count()
    }

    fn flop_count(&self) -> usize {
        self.spec.flop_count()
    }
}

/// Graph nodes produced by one student forward pass.
#[derive(Debug, Clone)]
pub struct StudentGraph {
    /// Raw output of every head, `B × out`.
    pub heads: Vec<Value>,
    /// Weight matrix nodes, indexed `[head][layer]`, first head layer first.
    pub head_weights: Vec<Vec<Value>>,
}

/// Shared core followed by `M` parallel heads.
#[derive(Debug, Clone)]
pub struct MultiHeadNet {
    spec: MultiHeadSpec,
    store: ParamStore,
    core: Vec<Dense>,
    heads: Vec<Vec<Dense>>,
}

impl MultiHeadNet {
    pub fn new(spec: MultiHeadSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let core = spec
            .core
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                store.add_layer(
                    &format!("core.layer{i}"),
                    LinearLayer::init(w[0], w[1], &mut rng),
                )
            })
            .collect();
        let heads = (0..spec.heads)
            .map(|m| {
                spec.head
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| {
                        store.add_layer(
                            &format!("head{m:02}.layer{i}"),
                            LinearLayer::init(w[0], w[1], &mut rng),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            spec,
            store,
            core,
            heads,
        })
    }

    pub fn spec(&self) -> &MultiHeadSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn head_layers(&self, head: usize) -> &[Dense] {
        &self.heads[head]
    }

    pub fn core_layers(&self) -> &[Dense] {
        &self.core
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Drops the last head; used to check per-head accounting.
    pub fn remove_last_head(&mut self) -> Result<()> {
        if self.heads.len() <= 2 {
            return Err(Error::Config("a student keeps at least 2 heads".into()));
        }
        // Head tensors are the tail of the store, so rebuilding without them
        // keeps every remaining id valid.
        let removed = self.heads.pop().unwrap();
        let keep = removed.iter().map(|d| d.weight.index()).min().unwrap();
        let mut store = ParamStore::new();
        for id in self.store.ids().take(keep) {
            store.add(
                self.store.name(id).to_string(),
                self.store.value(id).clone(),
            );
        }
        self.store = store;
        self.spec.heads -= 1;
        Ok(())
    }

    pub fn forward_graph(&self, g: &mut ValueGraph, x: Value) -> StudentGraph {
        let shared = rectified_stack(g, &self.store, &self.core, x, true);
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut head_weights = Vec::with_capacity(self.heads.len());
        for layers in &self.heads {
            let n = layers.len();
            let mut h = shared;
            let mut weights = Vec::with_capacity(n);
            for (i, layer) in layers.iter().enumerate() {
                let w = g.param(&self.store, layer.weight);
                let b = g.param(&self.store, layer.bias);
                weights.push(w);
                let z = g.matmul_t(h, w);
                h = g.add_bias(z, b);
                if i + 1 < n {
                    h = g.relu(h);
                }
            }
            heads.push(h);
            head_weights.push(weights);
        }
        StudentGraph {
            heads,
            head_weights,
        }
    }
}

impl Complexity for MultiHeadNet {
    fn param_count(&self) -> usize {
        debug_assert_eq!(self.store.scalar_count(), self.spec.param_count());
        self.spec.param_count()
    }

    fn flop_count(&self) -> usize {
        self.spec.flop_count()
    }
}

pub fn build_student(spec: MultiHeadSpec, seed: u64) -> Result<MultiHeadNet> {
    MultiHeadNet::new(spec, seed)
}

/// `N` independently initialised members sharing one architecture.
#[derive(Debug, Clone)]
pub struct EnsembleTeacher {
    spec: MlpSpec,
    members: Vec<Mlp>,
    seeds: Vec<u64>,
}

impl EnsembleTeacher {
    /// Member `n` is initialised from `base_seed + n`.
    pub fn new(spec: MlpSpec, members: usize, base_seed: u64) -> Result<Self> {
        if members == 0 {
            return Err(Error::Config(
                "an ensemble needs at least one member".into(),
            ));
        }
        let seeds: Vec<u64> = (0..members as u64)
            .map(|n| base_seed.wrapping_add(n))
            .collect();
        let members = seeds
            .iter()
            .map(|&s| Mlp::new(spec.clone(), s))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            members,
            seeds,
        })
    }

    pub fn from_members(spec: MlpSpec, members: Vec<Mlp>, seeds: Vec<u64>) -> Result<Self> {
        if members.is_empty() || members.len() != seeds.len() {
            return Err(Error::Config(
                "ensemble members and seeds must match and be non-empty".into(),
            ));
        }
        if members.iter().any(|m| m.spec() != &spec) {
            return Err(Error::Config(
                "ensemble members must share one architecture".into(),
            ));
        }
        Ok(Self {
            spec,
            members,
            seeds,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        EnsembleSpec {
            member: self.spec.clone(),
            members: self.members.len(),
        }
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Complexity for EnsembleTeacher {
    fn param_count(&self) -> usize {
        self.ensemble_spec().param_count()
    }

    fn flop_count(&self) -> usize {
        self.ensemble_spec().flop_count()
    }
}

/// Anything that produces one raw output per member (or head) for a batch.
pub trait Predictor: Complexity + Sync {
    fn task(&self) -> Task;
    fn input_width(&self) -> usize;
    fn member_count(&self) -> usize;
    /// Raw outputs per member, each `B × out`.
    fn raw_outputs(&self, x: &Matrix) -> Result<Vec<Matrix>>;
}

impl Predictor for EnsembleTeacher {
    fn task(&self) -> Task {
        self.spec.task
    }

    fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    fn member_count(&self) -> usize {
        self.members.len()
    }

    fn raw_outputs(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.members.iter().map(|m| m.forward_batch(x)).collect()
    }
}

impl Predictor for MultiHeadNet {
    fn task(&self) -> Task {
        self.spec.task
    }

    fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    fn member_count(&self) -> usize {
        self.heads.len()
    }

    fn raw_outputs(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        check_batch(x, self.spec.input_width())?;
        let mut g = ValueGraph::new();
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, xv);
        Ok(out.heads.iter().map(|&h| g.value(h).clone()).collect())
    }
}

/// Per-input outputs of every member or head: `S` probability rows for
/// classification, `S` Gaussians for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum MemberOutputs {
    Classification(Vec<Vec<f64>>),
    Regression(Vec<Gaussian>),
}

impl MemberOutputs {
    pub fn len(&self) -> usize {
        match self {
            MemberOutputs::Classification(r) => r.len(),
            MemberOutputs::Regression(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Converts raw per-member batches into per-input [`MemberOutputs`]
/// (softmax at unit temperature, or `variance = exp(raw)`).
pub fn member_outputs(task: Task, raw: &[Matrix]) -> Vec<MemberOutputs> {
    let batch = raw.first().map_or(0, Matrix::rows);
    (0..batch)
        .map(|i| match task {
            Task::Classification { .. } => MemberOutputs::Classification(
                raw.iter()
                    .map(|m| {
                        let mut row = m.row_slice(i).to_vec();
                        crate::nn::layer::softmax_in_place(&mut row, 1.0);
                        row
                    })
                    .collect(),
            ),
            Task::Regression => MemberOutputs::Regression(
                raw.iter()
                    .map(|m| Gaussian {
                        mean: m[(i, 0)],
                        variance: m[(i, 1)].exp(),
                    })
                    .collect(),
            ),
        })
        .collect()
}

pub fn predict_members<P: Predictor + ?Sized>(
    model: &P,
    inputs: &Matrix,
) -> Result<Vec<MemberOutputs>> {
    let raw = model.raw_outputs(inputs)?;
    Ok(member_outputs(model.task(), &raw))
}

/// Forward pass for a single input: the core runs once and every head reads
/// its output.
pub fn student_forward(model: &MultiHeadNet, x: &[f64]) -> Result<MemberOutputs> {
    let batch = Matrix::row(x);
    Ok(predict_members(model, &batch)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Combined {
    Classification(Vec<f64>),
    Regression(Gaussian),
}

/// Averages probabilities after the softmax, or combines Gaussians into the
/// mean of means with predictive variance (mean aleatoric + variance of means).
pub fn combine_predictions(out: &MemberOutputs) -> Result<Combined> {
    match out {
        MemberOutputs::Classification(rows) => {
            let k = rows.first().map_or(0, Vec::len);
            if rows.is_empty() || k == 0 {
                return Err(Error::Input("no member outputs to combine".into()));
            }
            Ok(Combined::Classification(crate::uncertainty::mean_rows(
                rows,
            )))
        }
        MemberOutputs::Regression(pairs) => {
            let t = decompose_regression(pairs)?;
            let mean = crate::uncertainty::running_mean(pairs.iter().map(|g| g.mean));
            Ok(Combined::Regression(Gaussian {
                mean,
                variance: t.predictive,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_counts_match_published_totals() {
        let ens = EnsembleSpec {
            member: MlpSpec::spiral(),
            members: 20,
        };
        assert_eq!(count_params(&ens), 618_060);
        assert_eq!(count_flops(&ens), 626_060);
        let s = MultiHeadSpec::spiral(20);
        assert_eq!(count_params(&s), 228_560);
        assert_eq!(count_flops(&s), 230_860);
    }

    #[test]
    fn regression_counts_match_published_totals() {
        let ens = EnsembleSpec {
            member: MlpSpec::cubic_sine(),
            members: 20,
        };
        assert_eq!(count_params(&ens), 106_040);
        assert_eq!(count_flops(&ens), 109_040);
        let s = MultiHeadSpec::cubic_sine(20);
        assert_eq!(count_params(&s), 55_690);
        assert_eq!(count_flops(&s), 56_790);
    }

    #[test]
    fn single_layer_counts() {
        let layer = LinearLayer::new(Matrix::zeros(3, 2), vec![0.0; 3]).unwrap();
        assert_eq!(count_params(&layer), 9);
        assert_eq!(count_flops(&layer), 9);
    }

    #[test]
    fn built_models_hold_exactly_the_counted_parameters() {
        let student = build_student(MultiHeadSpec::spiral(20), 0).unwrap();
        assert_eq!(student.store().scalar_count(), 228_560);
        let teacher = EnsembleTeacher::new(MlpSpec::cubic_sine(), 20, 0).unwrap();
        let stored: usize = teacher
            .members()
            .iter()
            .map(|m| m.store().scalar_count())
            .sum();
        assert_eq!(stored, 106_040);
        assert_eq!(teacher.seeds()[7], 7);
    }

    #[test]
    fn student_needs_two_heads() {
        assert!(matches!(
            build_student(MultiHeadSpec::spiral(1), 0),
            Err(Error::Config(_))
        ));
        let s = build_student(MultiHeadSpec::spiral(2), 0).unwrap();
        match student_forward(&s, &[0.1, 0.2]).unwrap() {
            MemberOutputs::Classification(rows) => assert_eq!(rows.len(), 2),
            _ => panic!("wrong task"),
        }
    }

    #[test]
    fn removing_a_head_subtracts_one_head() {
        let mut s = build_student(MultiHeadSpec::cubic_sine(5), 1).unwrap();
        let before = count_params(&s);
        let (head, _) = s.spec().head_complexity();
        s.remove_last_head().unwrap();
        assert_eq!(count_params(&s), before - head);
        assert_eq!(s.store().scalar_count(), before - head);
    }

    #[test]
    fn identical_heads_give_identical_rows() {
        let mut s = build_student(MultiHeadSpec::spiral(3), 5).unwrap();
        for layer in 0..2 {
            let src = s.head_layers(0)[layer];
            for h in 1..3 {
                let dst = s.head_layers(h)[layer];
                let w = s.store().value(src.weight).clone();
                let b = s.store().value(src.bias).clone();
                *s.store_mut().value_mut(dst.weight) = w;
                *s.store_mut().value_mut(dst.bias) = b;
            }
        }
        match student_forward(&s, &[0.4, -0.3]).unwrap() {
            MemberOutputs::Classification(rows) => {
                assert_eq!(rows[0], rows[1]);
                assert_eq!(rows[1], rows[2]);
                for r in &rows {
                    assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
            _ => panic!("wrong task"),
        }
    }

    #[test]
    fn regression_variances_are_positive() {
        let s = build_student(MultiHeadSpec::cubic_sine(4), 2).unwrap();
        for x in [-100.0, -3.0, 0.0, 2.5, 1e3] {
            match student_forward(&s, &[x]).unwrap() {
                MemberOutputs::Regression(pairs) => {
                    assert!(pairs.iter().all(|p| p.variance > 0.0))
                }
                _ => panic!("wrong task"),
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let s = build_student(MultiHeadSpec::cubic_sine(2), 2).unwrap();
        assert!(matches!(
            student_forward(&s, &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn combine_cases() {
        let out = MemberOutputs::Classification(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(
            combine_predictions(&out).unwrap(),
            Combined::Classification(vec![0.5, 0.5])
        );
        let single = MemberOutputs::Classification(vec![vec![0.2, 0.3, 0.5]]);
        assert_eq!(
            combine_predictions(&single).unwrap(),
            Combined::Classification(vec![0.2, 0.3, 0.5])
        );
        let reg = MemberOutputs::Regression(vec![
            Gaussian {
                mean: 0.0,
                variance: 1.0,
            },
            Gaussian {
                mean: 2.0,
                variance: 1.0,
            },
        ]);
        assert_eq!(
            combine_predictions(&reg).unwrap(),
            Combined::Regression(Gaussian {
                mean: 1.0,
                variance: 2.0
            })
        );
    }

    proptest::proptest! {
        #[test]
        fn student_params_decompose_into_core_plus_heads(m in 2usize..40) {
            for spec in [MultiHeadSpec::spiral(m), MultiHeadSpec::cubic_sine(m)] {
                let (core, _) = spec.core_complexity();
                let (head, _) = spec.head_complexity();
                proptest::prop_assert_eq!(count_params(&spec), core + m * head);
            }
        }
    }
}
