//! Layer primitives on channel-major batch tensors (`C x (B*L)`).

use rayon::prelude::*;

use super::linalg::{gemm, Op, Real};
use super::{BatchNorm, ConvLayer, FcnError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Left zero padding for a length-preserving convolution. Even kernels get
/// the extra zero on the right.
pub fn pad_left(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Unfold `x` (`c_in x (batch*len)`) into `(c_in*kernel) x (batch*len)`.
pub(crate) fn im2col<T: Real>(x: &[T], c_in: usize, batch: usize, len: usize, kernel: usize) -> Vec<T> {
    let bl = batch * len;
    let pad = pad_left(kernel) as isize;
    let mut col = vec![T::ZERO; c_in * kernel * bl];
    col.par_chunks_mut(bl).enumerate().for_each(|(row, dst_row)| {
        let (ci, j) = (row / kernel, row % kernel);
        let shift = j as isize - pad;
        let src_row = &x[ci * bl..(ci + 1) * bl];
        for b in 0..batch {
            let src = &src_row[b * len..(b + 1) * len];
            let dst = &mut dst_row[b * len..(b + 1) * len];
            if shift >= 0 {
                let s = (shift as usize).min(len);
                dst[..len - s].copy_from_slice(&src[s..]);
            } else {
                let s = ((-shift) as usize).min(len);
                dst[s..].copy_from_slice(&src[..len - s]);
            }
        }
    });
    col
}

/// Adjoint of [`im2col`]: fold column gradients back onto the input.
pub(crate) fn col2im<T: Real>(col: &[T], c_in: usize, batch: usize, len: usize, kernel: usize) -> Vec<T> {
    let bl = batch * len;
    let pad = pad_left(kernel) as isize;
    let mut dx = vec![T::ZERO; c_in * bl];
    dx.par_chunks_mut(bl).enumerate().for_each(|(ci, dst_row)| {
        for j in 0..kernel {
            let shift = j as isize - pad;
            let src_row = &col[(ci * kernel + j) * bl..(ci * kernel + j + 1) * bl];
            for b in 0..batch {
                let src = &src_row[b * len..(b + 1) * len];
                let dst = &mut dst_row[b * len..(b + 1) * len];
                if shift >= 0 {
                    let s = (shift as usize).min(len);
                    for (d, &g) in dst[s..].iter_mut().zip(&src[..len - s]) {
                        *d += g;
                    }
                } else {
                    let s = ((-shift) as usize).min(len);
                    for (d, &g) in dst[..len - s].iter_mut().zip(&src[s..]) {
                        *d += g;
                    }
                }
            }
        }
    });
    dx
}

/// Stride-1, length-preserving cross-correlation with per-channel bias.
///
/// Returns the output (`c_out x (batch*len)`) and the im2col buffer used to
/// compute it.
pub(crate) fn conv_forward_with_col<T: Real>(
    layer: &ConvLayer<T>,
    x: &[T],
    batch: usize,
    len: usize,
) -> (Vec<T>, Vec<T>) {
    let bl = batch * len;
    let ck = layer.c_in * layer.kernel;
    let col = im2col(x, layer.c_in, batch, len, layer.kernel);
    let mut y = vec![T::ZERO; layer.c_out * bl];
    for (row, &b) in y.chunks_mut(bl).zip(&layer.bias) {
        row.fill(b);
    }
    gemm(layer.c_out, ck, bl, &layer.weight, Op::N, &col, Op::N, T::ONE, &mut y);
    (y, col)
}

/// Public convolution entry point on a `c_in x (batch*len)` tensor.
pub fn conv1d_forward<T: Real>(
    x: &[T],
    batch: usize,
    len: usize,
    layer: &ConvLayer<T>,
) -> Result<Vec<T>, FcnError> {
    if x.len() != layer.c_in * batch * len {
        return Err(FcnError::ShapeMismatch(format!(
            "input has {} values, expected {} channels x {} x {}",
            x.len(),
            layer.c_in,
            batch,
            len
        )));
    }
    if layer.weight.len() != layer.c_out * layer.c_in * layer.kernel || layer.bias.len() != layer.c_out {
        return Err(FcnError::ShapeMismatch("weight or bias size disagrees with layer shape".into()));
    }
    Ok(conv_forward_with_col(layer, x, batch, len).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel intermediates kept for the backward pass.
pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) fn bn_forward_cached<T: Real>(
    norm: &BatchNorm<T>,
    x: &[T],
    channels: usize,
    mode: BnMode,
) -> (Vec<T>, BnCache<T>) {
    let n = x.len() / channels;
    let eps = T::from_f64(BN_EPS);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut y = vec![T::ZERO; x.len()];
    let mut xhat = vec![T::ZERO; x.len()];
    let mut inv_std = vec![T::ZERO; channels];
    let mut means = vec![T::ZERO; channels];
    let mut vars = vec![T::ZERO; channels];
    for c in 0..channels {
        let row = &x[c * n..(c + 1) * n];
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut s = T::ZERO;
                for &v in row {
                    s += v;
                }
                let mean = s * inv_n;
                let mut ss = T::ZERO;
                for &v in row {
                    let d = v - mean;
                    ss += d * d;
                }
                (mean, ss * inv_n)
            }
            BnMode::Infer => (norm.running_mean[c], norm.running_var[c]),
        };
        let is = T::ONE / (var + eps).sqrt();
        let (g, b) = (norm.gamma[c], norm.beta[c]);
        for ((yo, xo), &v) in y[c * n..(c + 1) * n]
            .iter_mut()
            .zip(&mut xhat[c * n..(c + 1) * n])
            .zip(row)
        {
            let h = (v - mean) * is;
            *xo = h;
            *yo = g * h + b;
        }
        inv_std[c] = is;
        means[c] = mean;
        vars[c] = var;
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean: means,
            var: vars,
        },
    )
}

/// Batch normalization over batch and time per channel.
///
/// In training mode the running statistics are blended toward the batch
/// statistics with momentum 0.9.
pub fn batchnorm_forward<T: Real>(
    x: &[T],
    channels: usize,
    batch: usize,
    norm: &mut BatchNorm<T>,
    mode: BnMode,
) -> Result<Vec<T>, FcnError> {
    if channels == 0 || x.len() % channels != 0 || norm.gamma.len() != channels {
        return Err(FcnError::ShapeMismatch(format!(
            "{} values do not split into {} channels",
            x.len(),
            channels
        )));
    }
    if mode == BnMode::Train && batch < 2 {
        return Err(FcnError::DegenerateBatch(batch));
    }
    let (y, cache) = bn_forward_cached(norm, x, channels, mode);
    if mode == BnMode::Train {
        update_running(norm, &cache.mean, &cache.var);
    }
    Ok(y)
}

pub(crate) fn update_running<T: Real>(norm: &mut BatchNorm<T>, mean: &[T], var: &[T]) {
    let m = T::from_f64(BN_MOMENTUM);
    let k = T::ONE - m;
    for c in 0..mean.len() {
        norm.running_mean[c] = m * norm.running_mean[c] + k * mean[c];
        norm.running_var[c] = m * norm.running_var[c] + k * var[c];
    }
}

/// Returns (dx, dgamma, dbeta) for a training-mode batch norm.
pub(crate) fn bn_backward<T: Real>(
    norm: &BatchNorm<T>,
    cache: &BnCache<T>,
    dy: &[T],
    channels: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = dy.len() / channels;
    let nf = T::from_f64(n as f64);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut dx = vec![T::ZERO; dy.len()];
    let mut dgamma = vec![T::ZERO; channels];
    let mut dbeta = vec![T::ZERO; channels];
    for c in 0..channels {
        let g = &dy[c * n..(c + 1) * n];
        let h = &cache.xhat[c * n..(c + 1) * n];
        let (mut sum_g, mut sum_gh) = (T::ZERO, T::ZERO);
        for (&gi, &hi) in g.iter().zip(h) {
            sum_g += gi;
            sum_gh += gi * hi;
        }
        dgamma[c] = sum_gh;
        dbeta[c] = sum_g;
        let gamma = norm.gamma[c];
        let scale = gamma * cache.inv_std[c] * inv_n;
        for ((d, &gi), &hi) in dx[c * n..(c + 1) * n].iter_mut().zip(g).zip(h) {
            *d = scale * (nf * gi - sum_g - hi * sum_gh);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Zero gradients where the ReLU output was clipped.
pub(crate) fn relu_backward<T: Real>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// Global average pooling: `channels x (batch*len)` to `channels x batch`.
pub fn gap<T: Real>(x: &[T], channels: usize, batch: usize, len: usize) -> Vec<T> {
    assert_eq!(x.len(), channels * batch * len);
    let inv = T::from_f64(1.0 / len as f64);
    let mut out = vec![T::ZERO; channels * batch];
    for c in 0..channels {
        for b in 0..batch {
            let mut s = T::ZERO;
            for &v in &x[c * batch * len + b * len..c * batch * len + (b + 1) * len] {
                s += v;
            }
            out[c * batch + b] = s * inv;
        }
    }
    out
}

pub(crate) fn gap_backward<T: Real>(d: &[T], channels: usize, batch: usize, len: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / len as f64);
    let mut dx = vec![T::ZERO; channels * batch * len];
    for c in 0..channels {
        for b in 0..batch {
            let g = d[c * batch + b] * inv;
            dx[c * batch * len + b * len..c * batch * len + (b + 1) * len].fill(g);
        }
    }
    dx
}

/// Column-wise softmax of a `classes x batch` logit matrix, returned as
/// `batch` rows of `classes` probabilities.
pub(crate) fn softmax_columns<T: Real>(logits: &[T], classes: usize, batch: usize) -> Vec<Vec<T>> {
    (0..batch)
        .map(|b| {
            let col: Vec<T> = (0..classes).map(|k| logits[k * batch + b]).collect();
            let max = col
                .iter()
                .copied()
                .fold(col[0], |m, v| if v > m { v } else { m });
            let exps: Vec<T> = col.iter().map(|&v| (v - max).exp()).collect();
            let mut sum = T::ZERO;
            for &e in &exps {
                sum += e;
            }
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}
