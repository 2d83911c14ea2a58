//! The computation tape: forward ops record nodes, backward replays them once
//! in reverse topological order.
//!
//! Nodes are appended in creation order, so every node's inputs precede it and
//! reverse index order is a valid reverse-topological traversal. A single
//! training step owns one tape; tapes are not shared across threads.

use std::cell::RefCell;

use super::{
    broadcast_shapes, expand_to, matmul_nt, matmul_raw, matmul_tn, reduce_to_shape, strides_of,
    Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ClampMin(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    Gather(Var, usize, Vec<usize>),
    Concat(Vec<Var>, usize),
    LayerNorm { x: Var, gain: Var, bias: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Ordered record of primitive operations with saved activations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {:?}",
            op
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, data, op, needs_grad });
        Var { index: nodes.len() - 1 }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.index].needs_grad
    }

    /// Lift a tensor onto the tape; gradient tracking follows `requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Untracked data (soft labels, masks, reference log-probs).
    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.push(vec![1], vec![v], Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.index].shape.clone()
    }

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.index];
        Tensor { shape: n.shape.clone(), data: n.data.clone(), requires_grad: false, grad: None }
    }

    pub fn item(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.index].data.len(), 1);
        nodes[v.index].data[0]
    }

    // ── Forward operations ───────────────────────────────────────────

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.index], &nodes[b.index]);
            if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: na.shape.clone(),
                    rhs: nb.shape.clone(),
                });
            }
            let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
            (
                matmul_raw(&na.data, &nb.data, m, k, n),
                vec![m, n],
                na.needs_grad || nb.needs_grad,
            )
        };
        Ok(self.push(shape, data, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            if na.shape.len() != 2 {
                return Err(Error::Dimension {
                    op: "transpose",
                    msg: format!("expected rank 2, got {:?}", na.shape),
                });
            }
            let (r, c) = (na.shape[0], na.shape[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = na.data[i * c + j];
                }
            }
            (out, vec![c, r], na.needs_grad)
        };
        Ok(self.push(shape, data, Op::Transpose(a), needs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn broadcast_binary(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.index], &nodes[b.index]);
            let shape = broadcast_shapes(name, &na.shape, &nb.shape)?;
            let lhs = expand_to(&na.data, &na.shape, &shape);
            let rhs = expand_to(&nb.data, &nb.shape, &shape);
            let data: Vec<f64> = lhs.iter().zip(&rhs).map(|(x, y)| f(*x, *y)).collect();
            (data, shape, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(shape, data, op, needs))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            (na.data.iter().map(|v| v * c).collect(), na.shape.clone(), na.needs_grad)
        };
        self.push(shape, data, Op::Scale(a, c), needs)
    }

    /// Elementwise max(x, floor); gradient is zero where the floor is active.
    pub fn clamp_min(&self, a: Var, floor: f64) -> Var {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            (na.data.iter().map(|v| v.max(floor)).collect(), na.shape.clone(), na.needs_grad)
        };
        self.push(shape, data, Op::ClampMin(a, floor), needs)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            (na.data.iter().map(|v| f(*v)).collect(), na.shape.clone(), na.needs_grad)
        };
        self.push(shape, data, op, needs)
    }

    /// Numerically stable softmax along the last axis.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        self.rowwise(a, "softmax", Op::Softmax(a), |row, out| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = (x - m).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        })
    }

    /// Numerically stable (max-subtracted) log-softmax along the last axis.
    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        self.rowwise(a, "log_softmax", Op::LogSoftmax(a), |row, out| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
            for (o, &x) in out.iter_mut().zip(row) {
                *o = x - lse;
            }
        })
    }

    fn rowwise(
        &self,
        a: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(&[f64], &mut [f64]),
    ) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            let dim = *na.shape.last().unwrap_or(&0);
            if dim == 0 {
                return Err(Error::Dimension {
                    op: name,
                    msg: format!("empty last axis in shape {:?}", na.shape),
                });
            }
            let mut out = vec![0.0; na.data.len()];
            for (row, orow) in na.data.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
                f(row, orow);
            }
            (out, na.shape.clone(), na.needs_grad)
        };
        Ok(self.push(shape, data, op, needs))
    }

    /// Sum along `axis`, keeping it as a size-1 dimension.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    /// Mean along `axis`, keeping it as a size-1 dimension.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    fn reduce_axis(&self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            if axis >= na.shape.len() || na.shape[axis] == 0 {
                return Err(Error::Dimension {
                    op: if mean { "mean_axis" } else { "sum_axis" },
                    msg: format!("axis {} invalid for shape {:?}", axis, na.shape),
                });
            }
            let mut out_shape = na.shape.clone();
            out_shape[axis] = 1;
            let out_numel: usize = out_shape.iter().product();
            let mut out = vec![0.0; out_numel];
            let strides = strides_of(&na.shape);
            let out_strides = strides_of(&out_shape);
            let mut coords = vec![0usize; na.shape.len()];
            for &v in &na.data {
                let mut dst = 0;
                for d in 0..na.shape.len() {
                    if d != axis {
                        dst += coords[d] * out_strides[d];
                    }
                }
                out[dst] += v;
                for d in (0..na.shape.len()).rev() {
                    coords[d] += 1;
                    if coords[d] < na.shape[d] {
                        break;
                    }
                    coords[d] = 0;
                }
            }
            let _ = strides;
            if mean {
                let denom = na.shape[axis] as f64;
                for o in out.iter_mut() {
                    *o /= denom;
                }
            }
            (out, out_shape, na.needs_grad)
        };
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        Ok(self.push(shape, data, op, needs))
    }

    /// Sum of all elements, as a shape-[1] scalar.
    pub fn sum_all(&self, a: Var) -> Var {
        let (total, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            (na.data.iter().sum::<f64>(), na.needs_grad)
        };
        self.push(vec![1], vec![total], Op::SumAll(a), needs)
    }

    /// Select rows (axis 0) or columns (axis 1) of a rank-2 tensor by index,
    /// with repetition allowed. Gradient scatter-adds back.
    pub fn gather(&self, a: Var, axis: usize, idx: &[usize]) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.index];
            if na.shape.len() != 2 || axis > 1 {
                return Err(Error::Dimension {
                    op: "gather",
                    msg: format!("expected rank 2 and axis 0|1, got {:?} axis {}", na.shape, axis),
                });
            }
            let (r, c) = (na.shape[0], na.shape[1]);
            let bound = if axis == 0 { r } else { c };
            if let Some(&bad) = idx.iter().find(|&&i| i >= bound) {
                return Err(Error::Dimension {
                    op: "gather",
                    msg: format!("index {} out of range for axis {} of size {}", bad, axis, bound),
                });
            }
            if axis == 0 {
                let mut out = Vec::with_capacity(idx.len() * c);
                for &i in idx {
                    out.extend_from_slice(&na.data[i * c..(i + 1) * c]);
                }
                (out, vec![idx.len(), c], na.needs_grad)
            } else {
                let mut out = Vec::with_capacity(r * idx.len());
                for row in 0..r {
                    for &j in idx {
                        out.push(na.data[row * c + j]);
                    }
                }
                (out, vec![r, idx.len()], na.needs_grad)
            }
        };
        Ok(self.push(shape, data, Op::Gather(a, axis, idx.to_vec()), needs))
    }

    /// Concatenate rank-2 tensors along rows (axis 0) or columns (axis 1).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension { op: "concat", msg: "no inputs".into() });
        }
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts[0].index];
            if first.shape.len() != 2 || axis > 1 {
                return Err(Error::Dimension {
                    op: "concat",
                    msg: format!("expected rank 2 and axis 0|1, got {:?}", first.shape),
                });
            }
            let other_axis = 1 - axis;
            let fixed = first.shape[other_axis];
            let mut along = 0;
            for p in parts {
                let np = &nodes[p.index];
                if np.shape.len() != 2 || np.shape[other_axis] != fixed {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape.clone(),
                        rhs: np.shape.clone(),
                    });
                }
                along += np.shape[axis];
            }
            let needs = parts.iter().any(|p| nodes[p.index].needs_grad);
            if axis == 0 {
                let mut out = Vec::with_capacity(along * fixed);
                for p in parts {
                    out.extend_from_slice(&nodes[p.index].data);
                }
                (out, vec![along, fixed], needs)
            } else {
                let rows = fixed;
                let mut out = Vec::with_capacity(rows * along);
                for row in 0..rows {
                    for p in parts {
                        let np = &nodes[p.index];
                        let cols = np.shape[1];
                        out.extend_from_slice(&np.data[row * cols..(row + 1) * cols]);
                    }
                }
                (out, vec![rows, along], needs)
            }
        };
        Ok(self.push(shape, data, Op::Concat(parts.to_vec(), axis), needs))
    }

    /// Per-row layer normalization over the last axis with learned gain/bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (data, shape, needs) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.index];
            let d = *nx.shape.last().unwrap_or(&0);
            let (ng, nb) = (&nodes[gain.index], &nodes[bias.index]);
            if d == 0 || ng.shape != [d] || nb.shape != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: nx.shape.clone(),
                    rhs: ng.shape.clone(),
                });
            }
            let mut out = vec![0.0; nx.data.len()];
            for (row, orow) in nx.data.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..d {
                    orow[j] = (row[j] - mean) * inv * ng.data[j] + nb.data[j];
                }
            }
            (
                out,
                nx.shape.clone(),
                nx.needs_grad || ng.needs_grad || nb.needs_grad,
            )
        };
        Ok(self.push(shape, data, Op::LayerNorm { x, gain, bias }, needs))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Each node is visited exactly
    /// once, in reverse creation order; leaf gradients become readable via
    /// [`Tape::grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.index].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.index].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(&nodes, i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        drop(nodes);
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`, if one was accumulated.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(v.index)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes.borrow()[v.index].shape.clone(),
            data: g.clone(),
            requires_grad: false,
            grad: None,
        })
    }

    /// Write the accumulated gradient into the tensor's `grad` field
    /// (zeros if the leaf never received a contribution).
    pub fn populate_grad(&self, v: Var, t: &mut Tensor) {
        t.grad = Some(match self.grad(v) {
            Some(g) => g.data,
            None => vec![0.0; t.numel()],
        });
    }

    #[allow(clippy::needless_range_loop)]
    fn propagate(&self, nodes: &[Node], i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>| {
            if !nodes[v.index].needs_grad {
                return;
            }
            match &mut grads[v.index] {
                Some(g) => {
                    for (gv, c) in g.iter_mut().zip(&contrib) {
                        *gv += c;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };

        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (na, nb) = (&nodes[a.index], &nodes[b.index]);
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                if nodes[a.index].needs_grad {
                    acc(grads, *a, matmul_nt(gout, &nb.data, m, n, k));
                }
                if nodes[b.index].needs_grad {
                    acc(grads, *b, matmul_tn(&na.data, gout, n, m, k));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let mut g = vec![0.0; gout.len()];
                for i2 in 0..r {
                    for j in 0..c {
                        g[j * r + i2] = gout[i2 * c + j];
                    }
                }
                acc(grads, *a, g);
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if nodes[v.index].needs_grad {
                        let target = &nodes[v.index].shape;
                        acc(grads, *v, reduce_to_shape(gout, &node.shape, target));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (na, nb) = (&nodes[a.index], &nodes[b.index]);
                if na.needs_grad {
                    let other = expand_to(&nb.data, &nb.shape, &node.shape);
                    let g: Vec<f64> = gout.iter().zip(&other).map(|(g, o)| g * o).collect();
                    acc(grads, *a, reduce_to_shape(&g, &node.shape, &na.shape));
                }
                if nb.needs_grad {
                    let other = expand_to(&na.data, &na.shape, &node.shape);
                    let g: Vec<f64> = gout.iter().zip(&other).map(|(g, o)| g * o).collect();
                    acc(grads, *b, reduce_to_shape(&g, &node.shape, &nb.shape));
                }
            }
            Op::Scale(a, c) => {
                acc(grads, *a, gout.iter().map(|g| g * c).collect());
            }
            Op::ClampMin(a, floor) => {
                let na = &nodes[a.index];
                let g = na
                    .data
                    .iter()
                    .zip(gout)
                    .map(|(x, g)| if *x > *floor { *g } else { 0.0 })
                    .collect();
                acc(grads, *a, g);
            }
            Op::Exp(a) => {
                acc(grads, *a, node.data.iter().zip(gout).map(|(y, g)| y * g).collect());
            }
            Op::Log(a) => {
                let na = &nodes[a.index];
                acc(grads, *a, na.data.iter().zip(gout).map(|(x, g)| g / x).collect());
            }
            Op::Tanh(a) => {
                acc(
                    grads,
                    *a,
                    node.data.iter().zip(gout).map(|(y, g)| g * (1.0 - y * y)).collect(),
                );
            }
            Op::Softmax(a) => {
                let d = *node.shape.last().unwrap();
                let mut g = vec![0.0; gout.len()];
                for (rs, (srow, grow)) in node
                    .data
                    .chunks_exact(d)
                    .zip(gout.chunks_exact(d))
                    .enumerate()
                    .map(|(r, p)| (r * d, p))
                {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                    for j in 0..d {
                        g[rs + j] = srow[j] * (grow[j] - dot);
                    }
                }
                acc(grads, *a, g);
            }
            Op::LogSoftmax(a) => {
                let d = *node.shape.last().unwrap();
                let mut g = vec![0.0; gout.len()];
                for (rs, (yrow, grow)) in node
                    .data
                    .chunks_exact(d)
                    .zip(gout.chunks_exact(d))
                    .enumerate()
                    .map(|(r, p)| (r * d, p))
                {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..d {
                        g[rs + j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                acc(grads, *a, g);
            }
            Op::SumAxis(a, axis) => {
                let na = &nodes[a.index];
                acc(grads, *a, expand_to(gout, &node.shape, &na.shape));
            }
            Op::MeanAxis(a, axis) => {
                let na = &nodes[a.index];
                let denom = na.shape[*axis] as f64;
                let g: Vec<f64> =
                    expand_to(gout, &node.shape, &na.shape).iter().map(|v| v / denom).collect();
                acc(grads, *a, g);
            }
            Op::SumAll(a) => {
                let na = &nodes[a.index];
                acc(grads, *a, vec![gout[0]; na.data.len()]);
            }
            Op::Gather(a, axis, idx) => {
                let na = &nodes[a.index];
                let (r, c) = (na.shape[0], na.shape[1]);
                let mut g = vec![0.0; r * c];
                if *axis == 0 {
                    for (pos, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            g[src * c + j] += gout[pos * c + j];
                        }
                    }
                } else {
                    for row in 0..r {
                        for (pos, &src) in idx.iter().enumerate() {
                            g[row * c + src] += gout[row * idx.len() + pos];
                        }
                    }
                }
                acc(grads, *a, g);
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let np = &nodes[p.index];
                        let len = np.data.len();
                        if np.needs_grad {
                            acc(grads, *p, gout[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                } else {
                    let rows = node.shape[0];
                    let total_cols = node.shape[1];
                    let mut col_offset = 0;
                    for p in parts {
                        let np = &nodes[p.index];
                        let cols = np.shape[1];
                        if np.needs_grad {
                            let mut g = vec![0.0; rows * cols];
                            for row in 0..rows {
                                let src = row * total_cols + col_offset;
                                g[row * cols..(row + 1) * cols]
                                    .copy_from_slice(&gout[src..src + cols]);
                            }
                            acc(grads, *p, g);
                        }
                        col_offset += cols;
                    }
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let (nx, ng) = (&nodes[x.index], &nodes[gain.index]);
                let d = *nx.shape.last().unwrap();
                let rows = nx.data.len() / d;
                let mut gx = vec![0.0; nx.data.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let row = &nx.data[r * d..(r + 1) * d];
                    let grow = &gout[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    // xhat_j = (x_j - mean) * inv
                    let mut dxhat = vec![0.0; d];
                    let mut dxhat_mean = 0.0;
                    let mut dxhat_xhat_mean = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        ggain[j] += grow[j] * xhat;
                        gbias[j] += grow[j];
                        dxhat[j] = grow[j] * ng.data[j];
                        dxhat_mean += dxhat[j];
                        dxhat_xhat_mean += dxhat[j] * xhat;
                    }
                    dxhat_mean /= d as f64;
                    dxhat_xhat_mean /= d as f64;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        gx[r * d + j] = inv * (dxhat[j] - dxhat_mean - xhat * dxhat_xhat_mean);
                    }
                }
                if nx.needs_grad {
                    acc(grads, *x, gx);
                }
                if ng.needs_grad {
                    acc(grads, *gain, ggain);
                }
                if nodes[bias.index].needs_grad {
                    acc(grads, *bias, gbias);
                }
            }
        }
    }
}
