//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every loss evaluation. Nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward pass is a single reverse sweep.

use std::collections::HashMap;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable primitives.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimitiveOp {
    Add,
    Sub,
    Mul,
    MatMul,
    /// Sum of all elements, producing a scalar.
    Sum,
    /// Mean of all elements, producing a scalar.
    Mean,
    /// Row sums of an `[n, d]` matrix, producing `[n, 1]`.
    SumRows,
    /// Expands size-1 (or missing leading) dimensions to the target shape.
    Broadcast(Vec<usize>),
    Tanh,
    Silu,
    Square,
    Sqrt,
    /// Column-wise concatenation of `[n, d_i]` matrices.
    Concat,
    Scale(f64),
    Sigmoid,
    /// `ln(1 + e^x)`, used for log-sigmoid terms.
    Softplus,
}

impl PrimitiveOp {
    fn name(&self) -> &'static str {
        match self {
            PrimitiveOp::Add => "add",
            PrimitiveOp::Sub => "sub",
            PrimitiveOp::Mul => "mul",
            PrimitiveOp::MatMul => "matmul",
            PrimitiveOp::Sum => "sum",
            PrimitiveOp::Mean => "mean",
            PrimitiveOp::SumRows => "sum_rows",
            PrimitiveOp::Broadcast(_) => "broadcast",
            PrimitiveOp::Tanh => "tanh",
            PrimitiveOp::Silu => "silu",
            PrimitiveOp::Square => "square",
            PrimitiveOp::Sqrt => "sqrt",
            PrimitiveOp::Concat => "concat",
            PrimitiveOp::Scale(_) => "scale",
            PrimitiveOp::Sigmoid => "sigmoid",
            PrimitiveOp::Softplus => "softplus",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            PrimitiveOp::Add | PrimitiveOp::Sub | PrimitiveOp::Mul | PrimitiveOp::MatMul => Some(2),
            PrimitiveOp::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
enum NodeKind {
    Parameter,
    Constant,
    Op(PrimitiveOp, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    kind: NodeKind,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient for a parameter leaf. Panics on vars that are not parameters
    /// of the graph the gradients came from.
    pub fn get(&self, var: Var) -> &Tensor {
        &self.grads[&var]
    }

    pub fn try_get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
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

    /// Registers a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, NodeKind::Parameter)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, NodeKind::Constant)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, kind: NodeKind) -> Var {
        self.nodes.push(Node { value, kind });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and appends the result to the graph.
    pub fn record(&mut self, op: PrimitiveOp, inputs: &[Var]) -> Result<Var> {
        match op.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::invalid(format!(
                    "{} takes {n} inputs, got {}",
                    op.name(),
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => return Err(Error::invalid("concat of no inputs")),
            _ => {}
        }
        let value = self.forward(&op, inputs)?;
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        Ok(self.push(value, NodeKind::Op(op, inputs.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(PrimitiveOp::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(PrimitiveOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(PrimitiveOp::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(PrimitiveOp::MatMul, &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Mean, &[a])
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::SumRows, &[a])
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(PrimitiveOp::Broadcast(shape.to_vec()), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Tanh, &[a])
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Silu, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Square, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Sqrt, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(PrimitiveOp::Concat, parts)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(PrimitiveOp::Scale(c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Sigmoid, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.record(PrimitiveOp::Softplus, &[a])
    }

    /// `a + c` for a constant `c`.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let k = self.constant(Tensor::full(&shape, c));
        self.add(a, k)
    }

    fn forward(&self, op: &PrimitiveOp, inputs: &[Var]) -> Result<Tensor> {
        let x = self.value(inputs[0]);
        match op {
            PrimitiveOp::Add => x.add(self.value(inputs[1])),
            PrimitiveOp::Sub => x.sub(self.value(inputs[1])),
            PrimitiveOp::Mul => x.mul(self.value(inputs[1])),
            PrimitiveOp::MatMul => x.matmul(self.value(inputs[1])),
            PrimitiveOp::Sum => Ok(Tensor::scalar(x.sum())),
            PrimitiveOp::Mean => Ok(Tensor::scalar(x.sum() / x.numel() as f64)),
            PrimitiveOp::SumRows => {
                let (n, d) = x.as_matrix("sum_rows", x)?;
                let sums = (0..n)
                    .map(|i| x.data()[i * d..(i + 1) * d].iter().sum())
                    .collect();
                Tensor::new(vec![n, 1], sums)
            }
            PrimitiveOp::Broadcast(shape) => broadcast_forward(x, shape),
            PrimitiveOp::Tanh => Ok(x.map(f64::tanh)),
            PrimitiveOp::Silu => Ok(x.map(|v| v * sigmoid(v))),
            PrimitiveOp::Square => Ok(x.map(|v| v * v)),
            PrimitiveOp::Sqrt => {
                if x.data().iter().any(|&v| v < 0.0) {
                    return Err(Error::NonFinite("sqrt of a negative value".into()));
                }
                Ok(x.map(f64::sqrt))
            }
            PrimitiveOp::Concat => {
                let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                concat_forward(&parts)
            }
            PrimitiveOp::Scale(c) => Ok(x.scale(*c)),
            PrimitiveOp::Sigmoid => Ok(x.map(sigmoid)),
            PrimitiveOp::Softplus => Ok(x.map(softplus)),
        }
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not
    /// depend on receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.kind {
                NodeKind::Parameter | NodeKind::Constant => {
                    adjoints[idx] = Some(upstream);
                }
                NodeKind::Op(op, inputs) => {
                    let local = self.vjp(op, inputs, &node.value, &upstream)?;
                    for (input, grad) in inputs.iter().zip(local) {
                        accumulate(&mut adjoints[input.0], grad)?;
                    }
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, NodeKind::Parameter))
            .map(|(i, n)| {
                let g = adjoints
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one node with respect to each input.
    fn vjp(
        &self,
        op: &PrimitiveOp,
        inputs: &[Var],
        out: &Tensor,
        g: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let x = self.value(inputs[0]);
        let grads = match op {
            PrimitiveOp::Add => vec![g.clone(), g.clone()],
            PrimitiveOp::Sub => vec![g.clone(), g.scale(-1.0)],
            PrimitiveOp::Mul => {
                let y = self.value(inputs[1]);
                vec![g.mul(y)?, g.mul(x)?]
            }
            PrimitiveOp::MatMul => {
                let y = self.value(inputs[1]);
                let (m, k) = x.as_matrix("matmul", y)?;
                let (_, n) = y.as_matrix("matmul", x)?;
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, y.data(), true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, x.data(), true, g.data(), false, &mut db, 0.0);
                vec![Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?]
            }
            PrimitiveOp::Sum => vec![Tensor::full(x.shape(), g.item())],
            PrimitiveOp::Mean => vec![Tensor::full(x.shape(), g.item() / x.numel() as f64)],
            PrimitiveOp::SumRows => {
                let d = x.row_len();
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, _)| g.data()[i / d])
                    .collect();
                vec![Tensor::new(x.shape().to_vec(), data)?]
            }
            PrimitiveOp::Broadcast(_) => vec![broadcast_backward(g, x.shape())],
            PrimitiveOp::Tanh => vec![g.zip_map(out, "tanh", |g, y| g * (1.0 - y * y))?],
            PrimitiveOp::Silu => vec![g.zip_map(x, "silu", |g, v| {
                let s = sigmoid(v);
                g * (s + v * s * (1.0 - s))
            })?],
            PrimitiveOp::Square => vec![g.zip_map(x, "square", |g, v| 2.0 * g * v)?],
            PrimitiveOp::Sqrt => vec![g.zip_map(out, "sqrt", |g, y| 0.5 * g / y)?],
            PrimitiveOp::Concat => {
                let (n, total) = g.as_matrix("concat", g)?;
                let mut offset = 0;
                let mut parts = Vec::with_capacity(inputs.len());
                for &input in inputs {
                    let w = self.value(input).row_len();
                    let mut data = Vec::with_capacity(n * w);
                    for r in 0..n {
                        data.extend_from_slice(
                            &g.data()[r * total + offset..r * total + offset + w],
                        );
                    }
                    parts.push(Tensor::new(vec![n, w], data)?);
                    offset += w;
                }
                parts
            }
            PrimitiveOp::Scale(c) => vec![g.scale(*c)],
            PrimitiveOp::Sigmoid => vec![g.zip_map(out, "sigmoid", |g, s| g * s * (1.0 - s))?],
            PrimitiveOp::Softplus => vec![g.zip_map(x, "softplus", |g, v| g * sigmoid(v))?],
        };
        for grad in &grads {
            if !grad.all_finite() {
                return Err(Error::NonFinite(format!("{} backward", op.name())));
            }
        }
        Ok(grads)
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(existing) => existing.add(&grad)?,
        None => grad,
    });
    Ok(())
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Left-pads `shape` with ones to `rank` dimensions.
fn padded(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut out = vec![1; rank - shape.len()];
    out.extend_from_slice(shape);
    out
}

fn broadcast_forward(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "broadcast",
        left: x.shape().to_vec(),
        right: target.to_vec(),
    };
    if x.shape().len() > target.len() {
        if x.numel() == 1 {
            return Ok(Tensor::full(target, x.item()));
        }
        return Err(mismatch());
    }
    let src = padded(x.shape(), target.len());
    if src.iter().zip(target).any(|(&s, &t)| s != t && s != 1) {
        return Err(mismatch());
    }
    let strides = source_strides(&src);
    let numel: usize = target.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut index = vec![0usize; target.len()];
    for _ in 0..numel {
        let offset: usize = index
            .iter()
            .zip(&src)
            .zip(&strides)
            .map(|((&i, &s), &st)| if s == 1 { 0 } else { i * st })
            .sum();
        data.push(x.data()[offset]);
        increment(&mut index, target);
    }
    Tensor::new(target.to_vec(), data)
}

fn broadcast_backward(g: &Tensor, source_shape: &[usize]) -> Tensor {
    let target = g.shape();
    let mut out = Tensor::zeros(source_shape);
    if source_shape.len() > target.len() {
        // scalar source expanded to a lower-rank target
        out.data_mut()[0] = g.sum();
        return out;
    }
    let src = padded(source_shape, target.len());
    let strides = source_strides(&src);
    let mut index = vec![0usize; target.len()];
    for &v in g.data() {
        let offset: usize = index
            .iter()
            .zip(&src)
            .zip(&strides)
            .map(|((&i, &s), &st)| if s == 1 { 0 } else { i * st })
            .sum();
        out.data_mut()[offset] += v;
        increment(&mut index, target);
    }
    out
}

fn source_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn increment(index: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        index[d] += 1;
        if index[d] < shape[d] {
            return;
        }
        index[d] = 0;
    }
}

fn concat_forward(parts: &[&Tensor]) -> Result<Tensor> {
    let n = parts[0].rows();
    for p in parts {
        if p.shape().len() != 2 || p.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: parts[0].shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.row_len()).sum();
    let mut data = Vec::with_capacity(n * total);
    for r in 0..n {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![n, total], data)
}
