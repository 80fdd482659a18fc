//! Reverse-mode differentiation over [`DenseTensor`] values.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. [`Tape::backward`] walks the nodes in reverse creation order
//! and applies each op's backward rule, accumulating into its inputs.
//! `stop_gradient` produces a node that carries the value but blocks the
//! backward pass.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{matmul_a_bt_into, matmul_at_b_into};
use super::DenseTensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Tanh(usize),
    Sum(usize),
    Mean(usize),
    StopGradient,
    Reshape(usize),
    GatherRows {
        table: usize,
        rows: Rc<Vec<usize>>,
        positions: usize,
    },
    GroupExpand {
        input: usize,
        weight: usize,
        bias: usize,
    },
    GroupCombine {
        input: usize,
        weight: usize,
        bias: usize,
    },
}

struct Node {
    value: Rc<DenseTensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: DenseTensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: DenseTensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: DenseTensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    fn value_of(&self, id: usize) -> Rc<DenseTensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Gradients of the single-element `output` with respect to every node.
    pub fn backward(&self, output: Var<'_>) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let root = &nodes[output.id].value;
        if root.len() != 1 {
            return Err(Error::shape(format!(
                "backward from non-scalar node of shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<DenseTensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(DenseTensor::full(root.shape(), 1.0)?);

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                backward_node(&nodes, node, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }
}

fn accumulate(grads: &mut [Option<DenseTensor>], id: usize, g: DenseTensor) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn backward_node(
    nodes: &[Node],
    node: &Node,
    g: &DenseTensor,
    grads: &mut [Option<DenseTensor>],
) -> Result<()> {
    let val = |id: usize| -> &DenseTensor { &nodes[id].value };
    let needs = |id: usize| nodes[id].needs_grad;
    match &node.op {
        Op::Leaf | Op::Constant | Op::StopGradient => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone())?;
            }
            if needs(*b) {
                accumulate(grads, *b, g.clone())?;
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone())?;
            }
            if needs(*b) {
                accumulate(grads, *b, g.scale(-1.0))?;
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.mul(val(*b))?)?;
            }
            if needs(*b) {
                accumulate(grads, *b, g.mul(val(*a))?)?;
            }
        }
        Op::Scale(a, k) => accumulate(grads, *a, g.scale(*k))?,
        Op::AddScalar(a) => accumulate(grads, *a, g.clone())?,
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).as_matrix("matmul backward")?;
            let (_, n) = val(*b).as_matrix("matmul backward")?;
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                matmul_a_bt_into(g.data(), val(*b).data(), &mut ga, m, k, n);
                accumulate(grads, *a, DenseTensor::new(vec![m, k], ga)?)?;
            }
            if needs(*b) {
                let mut gb = vec![0.0; k * n];
                matmul_at_b_into(val(*a).data(), g.data(), &mut gb, m, k, n);
                accumulate(grads, *b, DenseTensor::new(vec![k, n], gb)?)?;
            }
        }
        Op::AddBias(a, bias) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone())?;
            }
            if needs(*bias) {
                let n = val(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *bias, DenseTensor::new(val(*bias).shape().to_vec(), gb)?)?;
            }
        }
        Op::Tanh(a) => {
            // d tanh = 1 - tanh^2, read from this node's own output.
            let y = &node.value;
            let ga = DenseTensor::new(
                y.shape().to_vec(),
                y.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&t, &gv)| gv * (1.0 - t * t))
                    .collect(),
            )?;
            accumulate(grads, *a, ga)?;
        }
        Op::Sum(a) => {
            let gv = g.item()?;
            accumulate(grads, *a, DenseTensor::full(val(*a).shape(), gv)?)?;
        }
        Op::Mean(a) => {
            let x = val(*a);
            let gv = g.item()? / x.len() as f64;
            accumulate(grads, *a, DenseTensor::full(x.shape(), gv)?)?;
        }
        Op::Reshape(a) => {
            accumulate(grads, *a, g.reshape(val(*a).shape())?)?;
        }
        Op::GatherRows {
            table,
            rows,
            positions,
        } => {
            let t = val(*table);
            let (_, width) = t.as_matrix("gather backward")?;
            let mut gt = vec![0.0; t.len()];
            scatter_rows_into(g.data(), rows, *positions, width, &mut gt);
            accumulate(grads, *table, DenseTensor::new(t.shape().to_vec(), gt)?)?;
        }
        Op::GroupExpand {
            input,
            weight,
            bias,
        } => {
            let (gi, gw, gb) = group_expand_backward(val(*input), val(*weight), g)?;
            if needs(*input) {
                accumulate(grads, *input, gi)?;
            }
            if needs(*weight) {
                accumulate(grads, *weight, gw)?;
            }
            if needs(*bias) {
                accumulate(grads, *bias, gb)?;
            }
        }
        Op::GroupCombine {
            input,
            weight,
            bias,
        } => {
            let (gi, gw, gb) = group_combine_backward(val(*input), val(*weight), g)?;
            if needs(*input) {
                accumulate(grads, *input, gi)?;
            }
            if needs(*weight) {
                accumulate(grads, *weight, gw)?;
            }
            if needs(*bias) {
                accumulate(grads, *bias, gb)?;
            }
        }
    }
    Ok(())
}

pub struct Grads {
    grads: Vec<Option<DenseTensor>>,
}

impl Grads {
    /// Gradient for `var`; `None` if no path from the output reaches it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&DenseTensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Grads::wrt`] but an unreached input yields zeros of its shape.
    pub fn wrt_or_zero(&self, var: Var<'_>) -> DenseTensor {
        match self.wrt(var) {
            Some(g) => g.clone(),
            None => {
                let v = var.value();
                DenseTensor::zeros(v.shape()).expect("existing tensor shape is valid")
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<DenseTensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(&self, value: DenseTensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        self.tape.push(value, op, needs)
    }

    fn binary(&self, other: Var<'t>, value: DenseTensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(value, op, needs)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add(&other.value())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().mul(&other.value())?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(*self)
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        let v = self.value().scale(k);
        self.unary(v, Op::Scale(self.id, k))
    }

    pub fn add_scalar(&self, k: f64) -> Var<'t> {
        let v = self.value().add_scalar(k);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    /// `[m, n] + [n]`, the bias broadcast over rows.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let b = bias.value();
        let (_, n) = x.as_matrix("add_bias")?;
        if b.len() != n {
            return Err(Error::shape(format!(
                "add_bias: {:?} + {:?}",
                x.shape(),
                b.shape()
            )));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let v = DenseTensor::new(x.shape().to_vec(), out)?;
        Ok(self.binary(bias, v, Op::AddBias(self.id, bias.id)))
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = DenseTensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let v = DenseTensor::scalar(self.value().mean());
        self.unary(v, Op::Mean(self.id))
    }

    /// Same value, no gradient flows back through it.
    pub fn stop_gradient(&self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.push(v, Op::StopGradient, false)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Rows of a `[k, width]` table laid out as `[batch, width, positions]`,
    /// where `rows` holds `batch * positions` row indices.
    pub fn gather_rows(&self, rows: Vec<usize>, out_shape: &[usize]) -> Result<Var<'t>> {
        let v = gather_rows_forward(&self.value(), &rows, out_shape)?;
        let (batch, _, _, _) = expanded_dims(out_shape)?;
        Ok(self.unary(
            v,
            Op::GatherRows {
                table: self.id,
                positions: rows.len() / batch,
                rows: Rc::new(rows),
            },
        ))
    }

    /// Per-channel affine expansion `[B,C,H,W] -> [B,q,C,H,W]` with weight and bias `[C,q]`.
    pub fn group_expand(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let v = group_expand_forward(&self.value(), &weight.value(), &bias.value())?;
        let needs = [self.id, weight.id, bias.id]
            .iter()
            .any(|&i| self.tape.needs(i));
        Ok(self.tape.push(
            v,
            Op::GroupExpand {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
            },
            needs,
        ))
    }

    /// Per-channel affine reduction `[B,q,C,H,W] -> [B,C,H,W]` with weight `[C,q]`, bias `[C]`.
    pub fn group_combine(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let v = group_combine_forward(&self.value(), &weight.value(), &bias.value())?;
        let needs = [self.id, weight.id, bias.id]
            .iter()
            .any(|&i| self.tape.needs(i));
        Ok(self.tape.push(
            v,
            Op::GroupCombine {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
            },
            needs,
        ))
    }
}

// Shared forward/backward kernels. The converter's inference path calls the
// forward kernels directly so that training and inference agree bit for bit.

/// Splits a `[B, C, H, W]` (or `[C, H, W]`) latent shape into `(batch, channels, spatial)`.
pub(crate) fn latent_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((1, *c, h * w)),
        [b, c, h, w] => Ok((*b, *c, h * w)),
        _ => Err(Error::shape(format!(
            "expected [C,H,W] or [B,C,H,W] latent, got {shape:?}"
        ))),
    }
}

/// Splits a `[B, q, C, H, W]` (or `[q, C, H, W]`) shape into `(batch, q, channels, spatial)`.
pub(crate) fn expanded_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [q, c, h, w] => Ok((1, *q, *c, h * w)),
        [b, q, c, h, w] => Ok((*b, *q, *c, h * w)),
        _ => Err(Error::shape(format!(
            "expected [q,C,H,W] or [B,q,C,H,W] tensor, got {shape:?}"
        ))),
    }
}

fn expanded_shape(latent: &[usize], q: usize) -> Vec<usize> {
    let mut shape = latent.to_vec();
    let at = if latent.len() == 4 { 1 } else { 0 };
    shape.insert(at, q);
    shape
}

fn reduced_shape(expanded: &[usize]) -> Vec<usize> {
    let mut shape = expanded.to_vec();
    let at = if expanded.len() == 5 { 1 } else { 0 };
    shape.remove(at);
    shape
}

pub(crate) fn group_expand_forward(
    input: &DenseTensor,
    weight: &DenseTensor,
    bias: &DenseTensor,
) -> Result<DenseTensor> {
    let (batch, channels, spatial) = latent_dims(input.shape())?;
    let (wc, q) = weight.as_matrix("group_expand weight")?;
    if wc != channels || bias.shape() != weight.shape() {
        return Err(Error::shape(format!(
            "group_expand: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let s = input.data();
    let (w, b) = (weight.data(), bias.data());
    let mut out = vec![0.0; batch * q * channels * spatial];
    for n in 0..batch {
        for j in 0..q {
            for c in 0..channels {
                let (wv, bv) = (w[c * q + j], b[c * q + j]);
                let src = &s[(n * channels + c) * spatial..][..spatial];
                let dst = &mut out[((n * q + j) * channels + c) * spatial..][..spatial];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o = wv * x + bv;
                }
            }
        }
    }
    DenseTensor::new(expanded_shape(input.shape(), q), out)
}

fn group_expand_backward(
    input: &DenseTensor,
    weight: &DenseTensor,
    g: &DenseTensor,
) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
    let (batch, channels, spatial) = latent_dims(input.shape())?;
    let (_, q) = weight.as_matrix("group_expand weight")?;
    let (s, w, gd) = (input.data(), weight.data(), g.data());
    let mut gi = vec![0.0; s.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; w.len()];
    for n in 0..batch {
        for j in 0..q {
            for c in 0..channels {
                let wv = w[c * q + j];
                let src = &s[(n * channels + c) * spatial..][..spatial];
                let gsrc = &gd[((n * q + j) * channels + c) * spatial..][..spatial];
                let gdst = &mut gi[(n * channels + c) * spatial..][..spatial];
                let mut acc_w = 0.0;
                let mut acc_b = 0.0;
                for ((gx, &x), &gv) in gdst.iter_mut().zip(src).zip(gsrc) {
                    *gx += gv * wv;
                    acc_w += gv * x;
                    acc_b += gv;
                }
                gw[c * q + j] += acc_w;
                gb[c * q + j] += acc_b;
            }
        }
    }
    Ok((
        DenseTensor::new(input.shape().to_vec(), gi)?,
        DenseTensor::new(weight.shape().to_vec(), gw)?,
        DenseTensor::new(weight.shape().to_vec(), gb)?,
    ))
}

pub(crate) fn group_combine_forward(
    input: &DenseTensor,
    weight: &DenseTensor,
    bias: &DenseTensor,
) -> Result<DenseTensor> {
    let (batch, q, channels, spatial) = expanded_dims(input.shape())?;
    let (wc, wq) = weight.as_matrix("group_combine weight")?;
    if wc != channels || wq != q || bias.len() != channels {
        return Err(Error::shape(format!(
            "group_combine: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let (z, w, b) = (input.data(), weight.data(), bias.data());
    let mut out = vec![0.0; batch * channels * spatial];
    for n in 0..batch {
        for c in 0..channels {
            let dst = &mut out[(n * channels + c) * spatial..][..spatial];
            dst.iter_mut().for_each(|o| *o = b[c]);
            for j in 0..q {
                let wv = w[c * q + j];
                let src = &z[((n * q + j) * channels + c) * spatial..][..spatial];
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o += wv * x;
                }
            }
        }
    }
    DenseTensor::new(reduced_shape(input.shape()), out)
}

fn group_combine_backward(
    input: &DenseTensor,
    weight: &DenseTensor,
    g: &DenseTensor,
) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
    let (batch, q, channels, spatial) = expanded_dims(input.shape())?;
    let (z, w, gd) = (input.data(), weight.data(), g.data());
    let mut gi = vec![0.0; z.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; channels];
    for n in 0..batch {
        for c in 0..channels {
            let gsrc = &gd[(n * channels + c) * spatial..][..spatial];
            gb[c] += gsrc.iter().sum::<f64>();
            for j in 0..q {
                let wv = w[c * q + j];
                let off = ((n * q + j) * channels + c) * spatial;
                let zsrc = &z[off..][..spatial];
                let gdst = &mut gi[off..][..spatial];
                let mut acc = 0.0;
                for ((gz, &x), &gv) in gdst.iter_mut().zip(zsrc).zip(gsrc) {
                    *gz += gv * wv;
                    acc += gv * x;
                }
                gw[c * q + j] += acc;
            }
        }
    }
    Ok((
        DenseTensor::new(input.shape().to_vec(), gi)?,
        DenseTensor::new(weight.shape().to_vec(), gw)?,
        DenseTensor::new(vec![channels], gb)?,
    ))
}

pub(crate) fn gather_rows_forward(
    table: &DenseTensor,
    rows: &[usize],
    out_shape: &[usize],
) -> Result<DenseTensor> {
    let (k, width) = table.as_matrix("gather table")?;
    let (batch, q, _, _) = expanded_dims(out_shape)?;
    if q != width || out_shape.iter().product::<usize>() != rows.len() * width {
        return Err(Error::shape(format!(
            "gather: {} rows of width {width} into {out_shape:?}",
            rows.len()
        )));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= k) {
        return Err(Error::invalid(format!("gather: row {bad} out of range 0..{k}")));
    }
    let positions = rows.len() / batch;
    let t = table.data();
    let mut out = vec![0.0; rows.len() * width];
    for n in 0..batch {
        for p in 0..positions {
            let r = rows[n * positions + p];
            for j in 0..width {
                out[(n * width + j) * positions + p] = t[r * width + j];
            }
        }
    }
    DenseTensor::new(out_shape.to_vec(), out)
}

fn scatter_rows_into(g: &[f64], rows: &[usize], positions: usize, width: usize, out: &mut [f64]) {
    let batch = rows.len() / positions;
    for n in 0..batch {
        for p in 0..positions {
            let r = rows[n * positions + p];
            for j in 0..width {
                out[r * width + j] += g[(n * width + j) * positions + p];
            }
        }
    }
}
