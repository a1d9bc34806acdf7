use rand::Rng;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Rows whose Euclidean norm falls below this are rejected by [`Graph::row_l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
///
/// Handles are only meaningful for the graph that issued them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Transpose(Tensor),
    Add(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Mul(Tensor, Tensor),
    MulConst(Tensor, Matrix),
    Scale(Tensor, f64),
    MixRows {
        input: Tensor,
        partner: Vec<usize>,
        weights: Vec<f64>,
    },
    SelectRows(Tensor, Vec<usize>),
    Relu(Tensor),
    Exp(Tensor),
    LogSoftmaxRows {
        input: Tensor,
        probs: Matrix,
    },
    SoftmaxRows(Tensor),
    RowL2Normalize {
        input: Tensor,
        norms: Vec<f64>,
    },
    Dropout {
        input: Tensor,
        mask: Matrix,
    },
    ConcatColumns(Vec<Tensor>),
    Sum(Tensor),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Append-only computation record.
///
/// Every operation pushes one node whose inputs were pushed earlier, so node
/// order is a topological order and [`Graph::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf (parameter or input).
    pub fn leaf(&mut self, value: Matrix) -> Tensor {
        self.push(value, Op::Leaf)
    }

    pub fn is_leaf(&self, t: Tensor) -> bool {
        matches!(self.nodes[t.0].op, Op::Leaf)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.0].value.shape()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.0].value.item()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Tensor {
        self.nodes.push(Node { value, op });
        Tensor(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        let (ar, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::shape("add_row", (ar, ac), self.shape(row)));
        }
        let bias = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for r in 0..ar {
            for (v, b) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Tensor, c: Matrix) -> Result<Tensor> {
        let value = self.value(a).zip_map(&c, |x, y| x * y)?;
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// Row `i` of the output is `w_i * a[i] + (1 - w_i) * a[partner[i]]`.
    ///
    /// Rows with `w_i == 1` (resp. `0`) are copied verbatim from `a[i]` (resp. `a[partner[i]]`).
    pub fn mix_rows(&mut self, a: Tensor, partner: &[usize], weights: &[f64]) -> Result<Tensor> {
        let (rows, cols) = self.shape(a);
        if partner.len() != rows || weights.len() != rows {
            return Err(Error::Shape {
                op: "mix_rows",
                left: format!("{rows}x{cols}"),
                right: format!("{} partners / {} weights", partner.len(), weights.len()),
            });
        }
        if let Some(&bad) = partner.iter().find(|&&p| p >= rows) {
            return Err(Error::Index {
                index: bad,
                len: rows,
            });
        }
        let x = self.value(a);
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let w = weights[i];
            let out = value.row_mut(i);
            if w == 1.0 {
                out.copy_from_slice(x.row(i));
            } else if w == 0.0 {
                out.copy_from_slice(x.row(partner[i]));
            } else {
                for ((o, &own), &other) in out.iter_mut().zip(x.row(i)).zip(x.row(partner[i])) {
                    *o = w * own + (1.0 - w) * other;
                }
            }
        }
        Ok(self.push(
            value,
            Op::MixRows {
                input: a,
                partner: partner.to_vec(),
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn select_rows(&mut self, a: Tensor, indices: &[usize]) -> Result<Tensor> {
        let value = self.value(a).select_rows(indices)?;
        Ok(self.push(value, Op::SelectRows(a, indices.to_vec())))
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Row-wise log-softmax using max subtraction.
    pub fn log_softmax_rows(&mut self, a: Tensor) -> Tensor {
        let (value, probs) = log_softmax_and_softmax(self.value(a));
        self.push(value, Op::LogSoftmaxRows { input: a, probs })
    }

    /// Row-wise softmax using max subtraction.
    pub fn softmax_rows(&mut self, a: Tensor) -> Tensor {
        let (_, probs) = log_softmax_and_softmax(self.value(a));
        self.push(probs, Op::SoftmaxRows(a))
    }

    /// Divides each row by its Euclidean norm.
    pub fn row_l2_normalize(&mut self, a: Tensor) -> Result<Tensor> {
        let x = self.value(a);
        let mut value = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= NORM_EPS) {
                return Err(Error::DegenerateRow {
                    row: r,
                    norm,
                    eps: NORM_EPS,
                });
            }
            for v in value.row_mut(r) {
                *v /= norm;
            }
            norms.push(norm);
        }
        Ok(self.push(value, Op::RowL2Normalize { input: a, norms }))
    }

    /// Inverted dropout. Returns `a` itself (no new node) when not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Tensor,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_fn(rows, cols, |_, _| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        self.dropout_with_mask(a, mask)
    }

    /// Dropout with a caller-supplied (already scaled) mask.
    pub fn dropout_with_mask(&mut self, a: Tensor, mask: Matrix) -> Result<Tensor> {
        let value = self.value(a).zip_map(&mask, |x, m| x * m)?;
        Ok(self.push(value, Op::Dropout { input: a, mask }))
    }

    pub fn concat_columns(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let first = *parts.first().ok_or_else(|| {
            Error::Contract("concat_columns needs at least one part".into())
        })?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::shape("concat_columns", self.shape(first), self.shape(p)));
            }
            cols += self.shape(p).1;
        }
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let out = value.row_mut(r);
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatColumns(parts.to_vec())))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Sum of a list of nodes of identical shape.
    pub fn add_all(&mut self, terms: &[Tensor]) -> Result<Tensor> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all needs at least one term".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Tensor) -> Result<GradientMap> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = gemm(&g, false, self.value(*b), true);
                    let gb = gemm(self.value(*a), true, &g, false);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in g.row_iter() {
                        for (acc, v) in gr.data_mut().iter_mut().zip(r) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut grads, *a, g.zip_map(c, |x, y| x * y)?);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::MixRows {
                    input,
                    partner,
                    weights,
                } => {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let w = weights[i];
                        for (acc, &v) in ga.row_mut(i).iter_mut().zip(g.row(i)) {
                            *acc += w * v;
                        }
                        for (acc, &v) in ga.row_mut(partner[i]).iter_mut().zip(g.row(i)) {
                            *acc += (1.0 - w) * v;
                        }
                    }
                    accumulate(&mut grads, *input, ga);
                }
                Op::SelectRows(a, indices) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    for (i, &src) in indices.iter().enumerate() {
                        for (acc, &v) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, *a, g.zip_map(&node.value, |x, y| x * y)?);
                }
                Op::LogSoftmaxRows { input, probs } => {
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        if total != 0.0 {
                            for (acc, &p) in ga.row_mut(r).iter_mut().zip(probs.row(r)) {
                                *acc -= p * total;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for (acc, &p) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *acc = p * (*acc - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowL2Normalize { input, norms } => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (r, &norm) in norms.iter().enumerate() {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        for (acc, &yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *acc = (*acc - yv * dot) / norm;
                        }
                    }
                    accumulate(&mut grads, *input, ga);
                }
                Op::Dropout { input, mask } => {
                    accumulate(&mut grads, *input, g.zip_map(mask, |x, m| x * m)?);
                }
                Op::ConcatColumns(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.shape(p);
                        let gp = Matrix::from_fn(rows, cols, |r, c| g.get(r, offset + c));
                        accumulate(&mut grads, p, gp);
                        offset += cols;
                    }
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.item()));
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        // leaves the loss does not depend on get explicit zeros
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(id, n)| {
                let grad = grads[id]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols()));
                (id, grad)
            })
            .collect();
        Ok(GradientMap { leaves })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], t: Tensor, g: Matrix) {
    match &mut grads[t.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise log-softmax on a plain matrix.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    log_softmax_and_softmax(x).0
}

fn log_softmax_and_softmax(x: &Matrix) -> (Matrix, Matrix) {
    let mut logs = x.clone();
    let mut probs = x.clone();
    for r in 0..x.rows() {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
        let lse = max + total.ln();
        for v in logs.row_mut(r) {
            *v -= lse;
        }
    }
    (logs, probs)
}

/// Gradients of a scalar with respect to every leaf of a [`Graph`].
#[derive(Debug, Clone)]
pub struct GradientMap {
    leaves: std::collections::BTreeMap<usize, Matrix>,
}

impl GradientMap {
    /// Gradient for a leaf; zeros when the loss does not depend on it.
    /// Returns `None` only for non-leaf handles.
    pub fn get(&self, t: Tensor) -> Option<&Matrix> {
        self.leaves.get(&t.0)
    }

    pub fn take(&mut self, t: Tensor) -> Option<Matrix> {
        self.leaves.remove(&t.0)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
