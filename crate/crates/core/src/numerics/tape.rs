//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward sweep is a single reverse pass.
//! A tape is built per batch and dropped after the parameter update.

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(usize),
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    Sum(Var),
    Mean(Vec<Var>),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every parameter leaf on the tape,
/// indexed by the parameter slot given to [`Tape::param`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, slot: usize) -> Option<&Matrix> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    /// One gradient per slot in `shapes`, zero where the parameter did not
    /// influence the loss.
    pub fn dense(self, shapes: impl IntoIterator<Item = (usize, usize)>) -> Vec<Matrix> {
        let mut slots = self.slots.into_iter();
        shapes
            .into_iter()
            .map(|(r, c)| slots.next().flatten().unwrap_or_else(|| Matrix::zeros(r, c)))
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Constant => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Scale(a, _) | Op::ScaleRows(a, _) | Op::Sum(a) => self.needs(*a),
            Op::Mean(vs) => vs.iter().any(|v| self.needs(*v)),
            Op::SoftmaxCrossEntropy { logits, .. } => self.needs(*logits),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a learnable leaf bound to parameter `slot`.
    pub fn param(&mut self, slot: usize, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(slot))
    }

    /// Registers a leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `x + bias` with a `1 x n` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_bias(self.value(bias))?;
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    /// Affine layer `x * w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let value = self.value(a).scale_rows(factors)?;
        Ok(self.push(value, Op::ScaleRows(a, factors.to_vec())))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Mean of `1 x 1` nodes.
    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::Usage("mean of zero terms".into()));
        }
        let mut total = 0.0;
        for &v in scalars {
            let m = self.value(v);
            if m.shape() != (1, 1) {
                return Err(Error::shape("mean", m.shape(), (1, 1)));
            }
            total += m.get(0, 0);
        }
        let value = Matrix::filled(1, 1, total / scalars.len() as f64);
        Ok(self.push(value, Op::Mean(scalars.to_vec())))
    }

    /// Batch-mean cross-entropy of row-wise softmax against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    ///
    /// The tape is not modified, so repeated calls give identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Usage(format!("backward from a non-scalar {shape:?} node")));
        }
        let slot_count = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(slot) => Some(slot + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut slots: Vec<Option<Matrix>> = vec![None; slot_count];
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param(slot) => accumulate(&mut slots[*slot], g)?,
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.matmul(&self.value(*b).transpose())?;
                        self.send(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        let db = self.value(*a).transpose().matmul(&g)?;
                        self.send(&mut grads, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    self.send(&mut grads, *b, g.clone())?;
                    self.send(&mut grads, *a, g)?;
                }
                Op::AddBias(x, bias) => {
                    self.send(&mut grads, *bias, g.sum_rows())?;
                    self.send(&mut grads, *x, g)?;
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let da = g.hadamard(self.value(*b))?;
                        self.send(&mut grads, *a, da)?;
                    }
                    if self.needs(*b) {
                        let db = g.hadamard(self.value(*a))?;
                        self.send(&mut grads, *b, db)?;
                    }
                }
                Op::Tanh(a) => {
                    let local = node.value.map(|y| 1.0 - y * y);
                    self.send(&mut grads, *a, g.hadamard(&local)?)?;
                }
                Op::Sigmoid(a) => {
                    let local = node.value.map(|y| y * (1.0 - y));
                    self.send(&mut grads, *a, g.hadamard(&local)?)?;
                }
                Op::Concat(a, b) => {
                    let (ga, gb) = g.split_cols(self.value(*a).cols());
                    self.send(&mut grads, *a, ga)?;
                    self.send(&mut grads, *b, gb)?;
                }
                Op::Scale(a, s) => self.send(&mut grads, *a, g.scale(*s))?,
                Op::ScaleRows(a, factors) => {
                    let ga = g.scale_rows(factors)?;
                    self.send(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    self.send(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::Mean(vs) => {
                    let share = g.get(0, 0) / vs.len() as f64;
                    for v in vs {
                        self.send(&mut grads, *v, Matrix::filled(1, 1, share))?;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let mut d = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        let v = d.get(r, label);
                        d.set(r, label, v - 1.0);
                    }
                    self.send(&mut grads, *logits, d.scale(scale))?;
                }
            }
        }
        Ok(Gradients { slots })
    }

    fn send(&self, grads: &mut [Option<Matrix>], to: Var, g: Matrix) -> Result<()> {
        if self.needs(to) {
            accumulate(&mut grads[to.0], g)?;
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Mean over rows of `-log softmax(logits)[label]`, plus the softmax rows.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), (labels.len(), 1)));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    let probs = logits.softmax_rows();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += log_norm - row[label];
    }
    Ok((total / labels.len().max(1) as f64, probs))
}
