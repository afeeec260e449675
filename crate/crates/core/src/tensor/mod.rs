//! Minimal dense tensor with reverse-mode gradient rules.
//!
//! Values are stored contiguously in row-major order. Every operation is a
//! pure function returning a fresh tensor; gradient propagation is done by
//! explicit vector-Jacobian products (`*_vjp`) rather than a taped graph,
//! which is all the fixed pyramid composition needs.

mod check;
mod ops;

pub use check::finite_diff_check;
pub use ops::{
    add, channels_to_rows, conv1x1, conv1x1_vjp, matmul, matmul_vjp, maxpool_to, maxpool_to_vjp,
    mean_stack, mean_stack_vjp, resize_nearest, resize_nearest_vjp, rows_to_channels,
    softmax_rows, softmax_rows_vjp, transpose2,
};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Dense n-dimensional array with an optional gradient buffer of the same
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Real> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Real> Tensor<S> {
    /// Builds a tensor from a shape and row-major data.
    ///
    /// Fails when an extent is zero, the element count does not match the
    /// shape product, or any value is non-finite.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() {
            return Err(invalid("tensor shape must have at least one extent"));
        }
        if shape.contains(&0) {
            return Err(invalid(format!("tensor extents must be positive: {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("tensor values must be finite"));
        }
        Ok(Self { shape, data, grad: None })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        Self::new(shape, vec![S::zero(); len])
    }

    /// Constant-filled tensor.
    pub fn full(shape: Vec<usize>, value: S) -> Result<Self> {
        let len: usize = shape.iter().product();
        Self::new(shape, vec![value; len])
    }

    /// Tensor built by evaluating `f` at each flat row-major index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Result<Self> {
        let len: usize = shape.iter().product();
        Self::new(shape, (0..len).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Sum of all elements.
    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b)
    }

    /// Attaches a gradient buffer; the buffer must match the data length.
    pub fn with_grad(mut self, grad: Vec<S>) -> Result<Self> {
        if grad.len() != self.data.len() {
            return Err(invalid(format!(
                "gradient length {} does not match tensor length {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, creating a zeroed buffer first
    /// if none is present.
    pub fn accumulate_grad(&mut self, delta: &Tensor<S>) -> Result<()> {
        if delta.shape != self.shape {
            return Err(invalid(format!(
                "gradient shape {:?} does not match tensor shape {:?}",
                delta.shape, self.shape
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![S::zero(); self.data.len()]);
        for (g, &d) in grad.iter_mut().zip(delta.data.iter()) {
            *g = *g + d;
        }
        Ok(())
    }

    /// Flat index of `[c, h, w]` in a rank-3 tensor.
    pub(crate) fn idx3(&self, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (c * self.shape[1] + h) * self.shape[2] + w
    }

    /// Flat index of `[r, c]` in a rank-2 tensor.
    pub(crate) fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        r * self.shape[1] + c
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(invalid(format!(
                "{what} expects rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Serializes as: extent count (u64 LE), extents (u64 LE each), then all
    /// values as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (1 + self.shape.len() + self.data.len()));
        out.extend_from_slice(&(self.shape.len() as u64).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            let v = v.to_f64().expect("finite scalar converts to f64");
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

impl Tensor<f64> {
    /// Inverse of [`Tensor::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take_u64 = |at: usize| -> Result<u64> {
            let end = at + 8;
            let chunk = bytes
                .get(at..end)
                .ok_or_else(|| invalid("truncated tensor dump"))?;
            Ok(u64::from_le_bytes(chunk.try_into().unwrap()))
        };
        let rank = take_u64(0)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for i in 0..rank {
            shape.push(take_u64(8 * (1 + i))? as usize);
        }
        let len: usize = shape.iter().product();
        let header = 8 * (1 + rank);
        let body = bytes
            .get(header..header + 8 * len)
            .ok_or_else(|| invalid("truncated tensor dump"))?;
        if bytes.len() != header + 8 * len {
            return Err(invalid("trailing bytes after tensor dump"));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, data)
    }
}
