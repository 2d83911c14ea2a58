//! Dense row-major f64 tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is an immutable value: shape plus flat data, with an optional
//! gradient buffer of identical shape. Differentiation happens on an explicit
//! [`Tape`]: operations push nodes in topological order and [`Tape::backward`]
//! replays them once, in reverse, accumulating vector-Jacobian products.
//!
//! Everything is 64-bit; the gradient-check tolerances in the test suite
//! depend on it.

mod tape;

pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Immutable dense array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, validating shape/data agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "Tensor::new",
                msg: format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("tensor data contains non-finite values"));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    /// Like [`Tensor::new`] with `requires_grad` set; used for learnable arrays.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for the optimizer; the tensor must not be on a live tape
    /// (tapes copy leaf data when lifting, so this cannot corrupt saved
    /// activations).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix of `last_dim` columns.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }
}

// ── Shape helpers ────────────────────────────────────────────────────

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Right-aligned broadcast of two shapes, NumPy-style.
pub(crate) fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Expand `data` of shape `from` to `to` by repeating broadcast dimensions.
pub(crate) fn expand_to(data: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    let rank = to.len();
    let mut padded = vec![1usize; rank];
    padded[rank - from.len()..].copy_from_slice(from);
    let from_strides = strides_of(&padded);
    let numel: usize = to.iter().product();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    for item in out.iter_mut().take(numel) {
        let mut src = 0;
        for d in 0..rank {
            if padded[d] != 1 {
                src += coords[d] * from_strides[d];
            }
        }
        *item = data[src];
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < to[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}

/// Sum `grad` of shape `from` down to `target` (the reverse of a broadcast).
pub(crate) fn reduce_to_shape(grad: &[f64], from: &[usize], target: &[usize]) -> Vec<f64> {
    if from == target {
        return grad.to_vec();
    }
    let rank = from.len();
    let mut padded = vec![1usize; rank];
    padded[rank - target.len()..].copy_from_slice(target);
    let target_strides = strides_of(&padded);
    let target_numel: usize = target.iter().product();
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; rank];
    for &g in grad {
        let mut dst = 0;
        for d in 0..rank {
            if padded[d] != 1 {
                dst += coords[d] * target_strides[d];
            }
        }
        out[dst] += g;
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < from[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}

/// C[m×n] = A[m×k]·B[k×n].
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m×n] = A[m×k]·B[n×k]ᵀ.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[m×n] = A[k×m]ᵀ·B[k×n].
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[cfg(test)]
mod shape_tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[3, 4], &[4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shapes("t", &[1], &[2, 3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shapes("t", &[2, 1], &[2, 5]).unwrap(), vec![2, 5]);
        assert!(broadcast_shapes("t", &[3, 4], &[2, 4]).is_err());
    }

    #[test]
    fn expand_and_reduce_are_adjoint() {
        // <expand(x), g> == <x, reduce(g)> for random data
        let x = [1.0, -2.0, 3.0];
        let expanded = expand_to(&x, &[3], &[2, 3]);
        assert_eq!(expanded, vec![1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
        let g = [0.5, 1.0, 2.0, -1.0, 0.25, 4.0];
        let reduced = reduce_to_shape(&g, &[2, 3], &[3]);
        let lhs: f64 = expanded.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&reduced).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let c = matmul_raw(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
        // A·Bᵀ with B stored transposed equals plain product
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // 2x3 = Bᵀ
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), c);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2 = Aᵀ
        assert_eq!(matmul_tn(&at, &b, 2, 3, 2), c);
    }

    #[test]
    fn tensor_new_validates() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::NAN, 0.0]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.last_dim(), 3);
    }
}
