//! Dense operations and their reverse-mode rules.
//!
//! Each forward op has a matching `*_vjp` that maps an upstream gradient
//! (same shape as the op output) back to gradients of the inputs.

use crate::error::{invalid, Result};
use crate::scalar::{lit, Real};

use super::Tensor;

/// Nearest-neighbor resize of a `[C, H, W]` tensor to `(H', W')`.
///
/// `out[c, i, j] = in[c, floor(i * H / H'), floor(j * W / W')]`.
pub fn resize_nearest<S: Real>(t: &Tensor<S>, target: (usize, usize)) -> Result<Tensor<S>> {
    t.expect_rank(3, "resize_nearest")?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(invalid("resize_nearest target extents must be positive"));
    }
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = Tensor::zeros(vec![c, th, tw])?;
    for ch in 0..c {
        for i in 0..th {
            let si = i * h / th;
            for j in 0..tw {
                let sj = j * w / tw;
                let v = t.data()[t.idx3(ch, si, sj)];
                let oi = out.idx3(ch, i, j);
                out.data_mut()[oi] = v;
            }
        }
    }
    Ok(out)
}

/// Scatters the upstream gradient of [`resize_nearest`] back onto the
/// sampled source cells.
pub fn resize_nearest_vjp<S: Real>(
    input_shape: &[usize],
    target: (usize, usize),
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    if input_shape.len() != 3 {
        return Err(invalid("resize_nearest_vjp expects a rank-3 input shape"));
    }
    upstream.expect_rank(3, "resize_nearest_vjp upstream")?;
    let (th, tw) = target;
    if upstream.shape() != [input_shape[0], th, tw] {
        return Err(invalid("upstream shape does not match resize target"));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let mut grad = Tensor::zeros(vec![c, h, w])?;
    for ch in 0..c {
        for i in 0..th {
            let si = i * h / th;
            for j in 0..tw {
                let sj = j * w / tw;
                let g = upstream.data()[upstream.idx3(ch, i, j)];
                let gi = grad.idx3(ch, si, sj);
                grad.data_mut()[gi] = grad.data()[gi] + g;
            }
        }
    }
    Ok(grad)
}

/// Max-pools a `[C, H, W]` tensor down to `(H', W')`; window sizes must
/// divide the input extents.
pub fn maxpool_to<S: Real>(t: &Tensor<S>, target: (usize, usize)) -> Result<Tensor<S>> {
    let (out, _) = maxpool_with_argmax(t, target)?;
    Ok(out)
}

/// Routes the upstream gradient of [`maxpool_to`] to each window's argmax
/// cell (first in row-major order on ties).
pub fn maxpool_to_vjp<S: Real>(
    input: &Tensor<S>,
    target: (usize, usize),
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (out, argmax) = maxpool_with_argmax(input, target)?;
    if upstream.shape() != out.shape() {
        return Err(invalid("upstream shape does not match maxpool output"));
    }
    let mut grad = Tensor::zeros(input.shape().to_vec())?;
    for (cell, &src) in argmax.iter().enumerate() {
        grad.data_mut()[src] = grad.data()[src] + upstream.data()[cell];
    }
    Ok(grad)
}

fn maxpool_with_argmax<S: Real>(
    t: &Tensor<S>,
    target: (usize, usize),
) -> Result<(Tensor<S>, Vec<usize>)> {
    t.expect_rank(3, "maxpool_to")?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(invalid("maxpool_to target extents must be positive"));
    }
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if h % th != 0 || w % tw != 0 {
        return Err(invalid(format!(
            "maxpool_to target ({th}, {tw}) does not divide input ({h}, {w})"
        )));
    }
    let (kh, kw) = (h / th, w / tw);
    let mut out = Tensor::zeros(vec![c, th, tw])?;
    let mut argmax = vec![0usize; out.len()];
    for ch in 0..c {
        for i in 0..th {
            for j in 0..tw {
                let mut best = t.data()[t.idx3(ch, i * kh, j * kw)];
                let mut best_idx = t.idx3(ch, i * kh, j * kw);
                for wi in 0..kh {
                    for wj in 0..kw {
                        let idx = t.idx3(ch, i * kh + wi, j * kw + wj);
                        let v = t.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let oi = out.idx3(ch, i, j);
                out.data_mut()[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Elementwise mean of equally-shaped tensors.
///
/// Computed as `t0 + mean(t_j - t0)` so that a stack of identical tensors
/// reproduces the input bit-for-bit.
pub fn mean_stack<S: Real>(ts: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = ts.first().ok_or_else(|| invalid("mean_stack of empty list"))?;
    for t in &ts[1..] {
        if t.shape() != first.shape() {
            return Err(invalid(format!(
                "mean_stack shape mismatch: {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let inv_len = S::one() / lit::<S>(ts.len() as f64);
    let mut out = first.clone();
    out.clear_grad();
    for i in 0..out.len() {
        let base = first.data()[i];
        let mut delta = S::zero();
        for t in &ts[1..] {
            delta = delta + (t.data()[i] - base);
        }
        out.data_mut()[i] = base + delta * inv_len;
    }
    Ok(out)
}

/// Gradient of [`mean_stack`] with respect to any single input:
/// `upstream / len`.
pub fn mean_stack_vjp<S: Real>(len: usize, upstream: &Tensor<S>) -> Result<Tensor<S>> {
    if len == 0 {
        return Err(invalid("mean_stack_vjp with zero inputs"));
    }
    let inv_len = S::one() / lit::<S>(len as f64);
    let mut grad = upstream.clone();
    grad.clear_grad();
    for v in grad.data_mut() {
        *v = *v * inv_len;
    }
    Ok(grad)
}

/// Dense matrix product of `[m, k]` and `[k, n]`.
pub fn matmul<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(invalid(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(vec![m, n])?;
    for i in 0..m {
        for l in 0..k {
            let av = a.data()[a.idx2(i, l)];
            for j in 0..n {
                let oi = out.idx2(i, j);
                out.data_mut()[oi] = out.data()[oi] + av * b.data()[b.idx2(l, j)];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`matmul`]: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_vjp<S: Real>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let da = matmul(upstream, &transpose2(b)?)?;
    let db = matmul(&transpose2(a)?, upstream)?;
    Ok((da, db))
}

/// Transpose of a rank-2 tensor.
pub fn transpose2<S: Real>(t: &Tensor<S>) -> Result<Tensor<S>> {
    t.expect_rank(2, "transpose2")?;
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = Tensor::zeros(vec![c, r])?;
    for i in 0..r {
        for j in 0..c {
            let v = t.data()[t.idx2(i, j)];
            let oi = out.idx2(j, i);
            out.data_mut()[oi] = v;
        }
    }
    Ok(out)
}

/// Row-wise softmax of a rank-2 tensor (max-shifted for stability).
pub fn softmax_rows<S: Real>(t: &Tensor<S>) -> Result<Tensor<S>> {
    t.expect_rank(2, "softmax_rows")?;
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = Tensor::zeros(vec![r, c])?;
    for i in 0..r {
        let row = &t.data()[i * c..(i + 1) * c];
        let max = row.iter().fold(row[0], |a, &b| if b > a { b } else { a });
        let mut sum = S::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.data_mut()[i * c + j] = e;
            sum = sum + e;
        }
        for j in 0..c {
            let oi = i * c + j;
            out.data_mut()[oi] = out.data()[oi] / sum;
        }
    }
    Ok(out)
}

/// Gradient of [`softmax_rows`] given the forward output `y`:
/// `dx_ij = y_ij (dy_ij - sum_k dy_ik y_ik)`.
pub fn softmax_rows_vjp<S: Real>(output: &Tensor<S>, upstream: &Tensor<S>) -> Result<Tensor<S>> {
    output.expect_rank(2, "softmax_rows_vjp output")?;
    if upstream.shape() != output.shape() {
        return Err(invalid("upstream shape does not match softmax output"));
    }
    let (r, c) = (output.shape()[0], output.shape()[1]);
    let mut grad = Tensor::zeros(vec![r, c])?;
    for i in 0..r {
        let mut dot = S::zero();
        for j in 0..c {
            dot = dot + upstream.data()[i * c + j] * output.data()[i * c + j];
        }
        for j in 0..c {
            let oi = i * c + j;
            grad.data_mut()[oi] = output.data()[oi] * (upstream.data()[oi] - dot);
        }
    }
    Ok(grad)
}

/// 1x1 convolution: `x` is `[Cin, H, W]`, `w` is `[Cout, Cin]`, output is
/// `[Cout, H, W]`.
pub fn conv1x1<S: Real>(x: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    x.expect_rank(3, "conv1x1 input")?;
    w.expect_rank(2, "conv1x1 weight")?;
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, cin2) = (w.shape()[0], w.shape()[1]);
    if cin != cin2 {
        return Err(invalid(format!(
            "conv1x1 weight expects {cin2} input channels, tensor has {cin}"
        )));
    }
    let mut out = Tensor::zeros(vec![cout, h, wd])?;
    for co in 0..cout {
        for ci in 0..cin {
            let wv = w.data()[w.idx2(co, ci)];
            for i in 0..h {
                for j in 0..wd {
                    let oi = out.idx3(co, i, j);
                    out.data_mut()[oi] = out.data()[oi] + wv * x.data()[x.idx3(ci, i, j)];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1x1`] with respect to the input and the weight.
pub fn conv1x1_vjp<S: Real>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    x.expect_rank(3, "conv1x1_vjp input")?;
    w.expect_rank(2, "conv1x1_vjp weight")?;
    upstream.expect_rank(3, "conv1x1_vjp upstream")?;
    let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = w.shape()[0];
    if upstream.shape() != [cout, h, wd] {
        return Err(invalid("upstream shape does not match conv1x1 output"));
    }
    let mut dx = Tensor::zeros(vec![cin, h, wd])?;
    let mut dw = Tensor::zeros(vec![cout, cin])?;
    for co in 0..cout {
        for ci in 0..cin {
            let wv = w.data()[w.idx2(co, ci)];
            let mut acc = S::zero();
            for i in 0..h {
                for j in 0..wd {
                    let u = upstream.data()[upstream.idx3(co, i, j)];
                    let xi = dx.idx3(ci, i, j);
                    dx.data_mut()[xi] = dx.data()[xi] + wv * u;
                    acc = acc + u * x.data()[x.idx3(ci, i, j)];
                }
            }
            let wi = dw.idx2(co, ci);
            dw.data_mut()[wi] = dw.data()[wi] + acc;
        }
    }
    Ok((dx, dw))
}

/// Elementwise sum of two equally-shaped tensors; the gradient rule passes
/// the upstream gradient to both inputs unchanged.
pub fn add<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    out.clear_grad();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data().iter()) {
        *o = *o + v;
    }
    Ok(out)
}

/// Reinterprets `[C, H, W]` as a `[H*W, C]` matrix (one row per spatial
/// position). Its gradient rule is [`rows_to_channels`] on the upstream.
pub fn channels_to_rows<S: Real>(t: &Tensor<S>) -> Result<Tensor<S>> {
    t.expect_rank(3, "channels_to_rows")?;
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let n = h * w;
    let mut out = Tensor::zeros(vec![n, c])?;
    for ch in 0..c {
        for pos in 0..n {
            let v = t.data()[ch * n + pos];
            let oi = out.idx2(pos, ch);
            out.data_mut()[oi] = v;
        }
    }
    Ok(out)
}

/// Inverse of [`channels_to_rows`].
pub fn rows_to_channels<S: Real>(m: &Tensor<S>, spatial: (usize, usize)) -> Result<Tensor<S>> {
    m.expect_rank(2, "rows_to_channels")?;
    let (h, w) = spatial;
    let (n, c) = (m.shape()[0], m.shape()[1]);
    if n != h * w {
        return Err(invalid(format!(
            "rows_to_channels: {n} rows cannot fill a {h}x{w} grid"
        )));
    }
    let mut out = Tensor::zeros(vec![c, h, w])?;
    for ch in 0..c {
        for pos in 0..n {
            let v = m.data()[m.idx2(pos, ch)];
            out.data_mut()[ch * n + pos] = v;
        }
    }
    Ok(out)
}
