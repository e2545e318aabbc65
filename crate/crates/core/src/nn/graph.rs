//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`ValueGraph`] is a tape: every operation appends a node holding its
//! forward value, so node order is already a topological order and the
//! backward sweep is a single reverse pass. Nodes that do not depend on a
//! parameter or a tracked input are skipped during the sweep.
//!
//! Shape mismatches inside the graph are programmer errors and panic; the
//! model and loss entry points validate user-supplied shapes first.

use super::layer::{softmax_in_place, ParamId, ParamStore};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Floor applied before every logarithm taken inside the graph.
pub const LOG_FLOOR: f64 = 1e-12;

/// Norm below which a vector is treated as zero by [`ValueGraph::row_cosine`].
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMulT(Value, Value),
    AddBias(Value, Value),
    Relu(Value),
    Exp(Value),
    Ln(Value),
    Softmax(Value, f64),
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Div(Value, Value),
    Scale(Value, f64),
    Shift(Value),
    Sum(Value),
    SumSquares(Value),
    Column(Value, usize),
    Pick(Value, Vec<usize>),
    RowCosine(Value, Value),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct ValueGraph {
    nodes: Vec<Node>,
}

impl ValueGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Value) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Forward value of a `1 × 1` node.
    pub fn scalar(&self, v: Value) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "node is not a scalar");
        m[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Value {
        self.nodes.push(Node { value, op, tracked });
        Value(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Value) -> bool {
        self.nodes[v.0].tracked
    }

    /// Untracked leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Value {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf whose gradient can be read back with [`ValueGraph::gradients`].
    pub fn input(&mut self, value: Matrix) -> Value {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Value {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// `x · wᵀ` for a batch `x` (B × in) and weight `w` (out × in).
    pub fn matmul_t(&mut self, x: Value, w: Value) -> Value {
        let out = self
            .value(x)
            .matmul_t(self.value(w))
            .unwrap_or_else(|e| panic!("{e}"));
        let t = self.tracked(x) || self.tracked(w);
        self.push(out, Op::MatMulT(x, w), t)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Value, bias: Value) -> Value {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width mismatch");
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            for (o, bv) in out.row_slice_mut(r).iter_mut().zip(b.as_slice()) {
                *o += bv;
            }
        }
        let t = self.tracked(a) || self.tracked(bias);
        self.push(out, Op::AddBias(a, bias), t)
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let out = self.value(a).map(|v| v.max(0.0));
        let t = self.tracked(a);
        self.push(out, Op::Relu(a), t)
    }

    pub fn exp(&mut self, a: Value) -> Value {
        let out = self.value(a).map(f64::exp);
        let t = self.tracked(a);
        self.push(out, Op::Exp(a), t)
    }

    /// `ln(max(a, LOG_FLOOR))`; entries at the floor get zero gradient.
    pub fn ln(&mut self, a: Value) -> Value {
        let out = self.value(a).map(|v| v.max(LOG_FLOOR).ln());
        let t = self.tracked(a);
        self.push(out, Op::Ln(a), t)
    }

    /// Row-wise `softmax(a / temperature)`.
    pub fn softmax(&mut self, a: Value, temperature: f64) -> Value {
        assert!(temperature > 0.0, "temperature must be positive");
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_slice_mut(r), temperature);
        }
        let t = self.tracked(a);
        self.push(out, Op::Softmax(a, temperature), t)
    }

    fn binary(&mut self, a: Value, b: Value, op: Op, f: impl Fn(f64, f64) -> f64) -> Value {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "elementwise operands differ in shape"
        );
        let out = self.value(a).zip_map(self.value(b), f);
        let t = self.tracked(a) || self.tracked(b);
        self.push(out, op, t)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Value {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Value, b: Value) -> Value {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn square(&mut self, a: Value) -> Value {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Value, factor: f64) -> Value {
        let out = self.value(a).map(|v| v * factor);
        let t = self.tracked(a);
        self.push(out, Op::Scale(a, factor), t)
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: Value, offset: f64) -> Value {
        let out = self.value(a).map(|v| v + offset);
        let t = self.tracked(a);
        self.push(out, Op::Shift(a), t)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: Value) -> Value {
        let out = Matrix::scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(out, Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Value) -> Value {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_squares(&mut self, a: Value) -> Value {
        let out = Matrix::scalar(self.value(a).sum_squares());
        let t = self.tracked(a);
        self.push(out, Op::SumSquares(a), t)
    }

    /// Sum of equally shaped nodes.
    pub fn add_all(&mut self, values: &[Value]) -> Value {
        let (&first, rest) = values
            .split_first()
            .expect("add_all needs at least one node");
        rest.iter().fold(first, |acc, &v| self.add(acc, v))
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn average(&mut self, values: &[Value]) -> Value {
        let total = self.add_all(values);
        self.scale(total, 1.0 / values.len() as f64)
    }

    /// Column `j` as a `B × 1` node.
    pub fn column(&mut self, a: Value, j: usize) -> Value {
        let src = self.value(a);
        assert!(j < src.cols(), "column {j} out of range");
        let data = (0..src.rows()).map(|r| src[(r, j)]).collect::<Vec<_>>();
        let out = Matrix::column(&data);
        let t = self.tracked(a);
        self.push(out, Op::Column(a, j), t)
    }

    /// Entry `a[i, indices[i]]` for every row, as a `B × 1` node.
    pub fn pick(&mut self, a: Value, indices: &[usize]) -> Value {
        let src = self.value(a);
        assert_eq!(src.rows(), indices.len(), "one index per row required");
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < src.cols(), "index {c} out of range");
                src[(r, c)]
            })
            .collect::<Vec<_>>();
        let out = Matrix::column(&data);
        let t = self.tracked(a);
        self.push(out, Op::Pick(a, indices.to_vec()), t)
    }

    /// Cosine similarity between matching rows of `a` and `b` as a `rows × 1`
    /// node. Rows where either norm is below [`COSINE_EPS`] yield 0.
    pub fn row_cosine(&mut self, a: Value, b: Value) -> Value {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.shape(), mb.shape(), "cosine operands differ in shape");
        let data = (0..ma.rows())
            .map(|r| cosine_parts(ma.row_slice(r), mb.row_slice(r)).0)
            .collect::<Vec<_>>();
        let out = Matrix::column(&data);
        let t = self.tracked(a) || self.tracked(b);
        self.push(out, Op::RowCosine(a, b), t)
    }

    fn sweep(&self, output: Value) -> Result<Vec<Option<Matrix>>> {
        if self.value(output).shape() != (1, 1) {
            let (r, c) = self.value(output).shape();
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got a {r}x{c} node"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Zeroes the gradient buffers in `store`, then fills them with
    /// `∂output/∂θ` for every parameter that appears in the graph.
    pub fn backward(&self, output: Value, store: &mut ParamStore) -> Result<()> {
        let grads = self.sweep(output)?;
        store.zero_grads();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.grad_mut(*id).axpy(1.0, &g);
            }
        }
        Ok(())
    }

    /// Gradients of `output` with respect to the given nodes (zeros for
    /// nodes the output does not depend on).
    pub fn gradients(&self, output: Value, wrt: &[Value]) -> Result<Vec<Matrix>> {
        let mut grads = self.sweep(output)?;
        Ok(wrt
            .iter()
            .map(|v| {
                grads[v.0].take().unwrap_or_else(|| {
                    let (r, c) = self.value(*v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect())
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let mut send = |v: Value, delta: Matrix| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.axpy(1.0, &delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMulT(x, w) => {
                if self.tracked(*x) {
                    send(
                        *x,
                        g.matmul(self.value(*w)).expect("shapes fixed at forward"),
                    );
                }
                if self.tracked(*w) {
                    send(
                        *w,
                        g.t_matmul(self.value(*x)).expect("shapes fixed at forward"),
                    );
                }
            }
            Op::AddBias(a, b) => {
                send(*a, g.clone());
                if self.tracked(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(g.row_slice(r)) {
                            *d += v;
                        }
                    }
                    send(*b, db);
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                send(*a, d);
            }
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Ln(a) => {
                let d = g.zip_map(
                    self.value(*a),
                    |gv, x| {
                        if x > LOG_FLOOR {
                            gv / x
                        } else {
                            0.0
                        }
                    },
                );
                send(*a, d);
            }
            Op::Softmax(a, temperature) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, yv), gv) in d.row_slice_mut(r).iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot) / temperature;
                    }
                }
                send(*a, d);
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if a == b {
                    let d = g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x);
                    send(*a, d);
                } else {
                    send(*a, g.zip_map(self.value(*b), |gv, y| gv * y));
                    send(*b, g.zip_map(self.value(*a), |gv, x| gv * x));
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                send(*a, g.zip_map(vb, |gv, y| gv / y));
                if self.tracked(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = node.value.zip_map(vb, |o, y| o / y);
                    send(*b, g.zip_map(&q, |gv, qv| -gv * qv));
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|v| v * f)),
            Op::Shift(a) => send(*a, g.clone()),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                send(*a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g[(0, 0)];
                send(*a, self.value(*a).map(|x| s * x));
            }
            Op::Column(a, j) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for row in 0..r {
                    d[(row, *j)] = g[(row, 0)];
                }
                send(*a, d);
            }
            Op::Pick(a, indices) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for (row, &col) in indices.iter().enumerate() {
                    d[(row, col)] = g[(row, 0)];
                }
                send(*a, d);
            }
            Op::RowCosine(a, b) => {
                let (ma, mb) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(ma.rows(), ma.cols());
                let mut db = Matrix::zeros(mb.rows(), mb.cols());
                for r in 0..ma.rows() {
                    let (ra, rb) = (ma.row_slice(r), mb.row_slice(r));
                    let (cos, na, nb) = cosine_parts(ra, rb);
                    if na < COSINE_EPS || nb < COSINE_EPS {
                        continue;
                    }
                    let gr = g[(r, 0)];
                    let inv = 1.0 / (na * nb);
                    for (k, (&x, &y)) in ra.iter().zip(rb).enumerate() {
                        da[(r, k)] = gr * (y * inv - cos * x / (na * na));
                        db[(r, k)] = gr * (x * inv - cos * y / (nb * nb));
                    }
                }
                send(*a, da);
                send(*b, db);
            }
        }
    }
}

/// `(cos, |a|, |b|)` with `cos = 0` when either norm is below [`COSINE_EPS`].
fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < COSINE_EPS || nb < COSINE_EPS {
        return (0.0, na, nb);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb), na, nb)
}
