//! Forward pass and exact backpropagation for both architectures.

use super::layers::{
    bn_backward, bn_forward_cached, col2im, conv_forward_with_col, gap, gap_backward,
    relu_backward, relu_inplace, softmax_columns, BnCache, BnMode,
};
use super::linalg::{gemm, Op, Real};
use super::{ArchKind, Dense, FcnError, ModelParams};

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the stored running statistics.
    Infer,
}

/// Per batch-norm layer batch mean and (biased) variance seen in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<Vec<T>>,
    pub var: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct GradientOutput<T> {
    /// One gradient per tensor of [`ModelParams::learnable`], same order.
    pub grads: Vec<Vec<T>>,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub stats: BatchStats<T>,
}

struct ConvTrace<T> {
    col: Vec<T>,
    bn: BnCache<T>,
    act: Vec<T>,
}

struct Pass<T> {
    conv: Vec<ConvTrace<T>>,
    /// Input of every dense layer, `n_in x batch`.
    dense_in: Vec<Vec<T>>,
    logits: Vec<T>,
}

fn dense_forward<T: Real>(d: &Dense<T>, input: &[T], batch: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; d.n_out * batch];
    for (row, &b) in out.chunks_mut(batch).zip(&d.bias) {
        row.fill(b);
    }
    gemm(d.n_out, d.n_in, batch, &d.weight, Op::N, input, Op::N, T::ONE, &mut out);
    out
}

fn check_input<T: Real>(model: &ModelParams<T>, frames: &[T], batch: usize) -> Result<(), FcnError> {
    let len = model.arch.input_len;
    if batch == 0 {
        return Err(FcnError::ShapeMismatch("empty batch".into()));
    }
    if frames.len() != batch * len {
        return Err(FcnError::ShapeMismatch(format!(
            "{} values for {} frames of length {}",
            frames.len(),
            batch,
            len
        )));
    }
    Ok(())
}

fn run<T: Real>(model: &ModelParams<T>, frames: &[T], batch: usize, mode: Mode) -> Pass<T> {
    let len = model.arch.input_len;
    let bn_mode = match mode {
        Mode::Train => BnMode::Train,
        Mode::Infer => BnMode::Infer,
    };
    let mut conv = Vec::with_capacity(model.convs.len());
    let mut dense_in = Vec::with_capacity(model.dense.len());

    let mut x = match model.arch.kind {
        ArchKind::Fcn => {
            // Single input channel: the frames laid end to end already form
            // the 1 x (B*L) tensor.
            let mut x = frames.to_vec();
            for (layer, norm) in model.convs.iter().zip(&model.norms) {
                let (pre, col) = conv_forward_with_col(layer, &x, batch, len);
                let (mut act, bn) = bn_forward_cached(norm, &pre, layer.c_out, bn_mode);
                relu_inplace(&mut act);
                x = act.clone();
                conv.push(ConvTrace { col, bn, act });
            }
            let channels = model.convs.last().map(|c| c.c_out).unwrap_or(1);
            gap(&x, channels, batch, len)
        }
        ArchKind::Mlp => {
            let mut t = vec![T::ZERO; len * batch];
            for b in 0..batch {
                for i in 0..len {
                    t[i * batch + b] = frames[b * len + i];
                }
            }
            t
        }
    };

    let last = model.dense.len() - 1;
    for (i, d) in model.dense.iter().enumerate() {
        let mut out = dense_forward(d, &x, batch);
        if i < last {
            relu_inplace(&mut out);
        }
        dense_in.push(std::mem::replace(&mut x, out));
    }
    Pass {
        conv,
        dense_in,
        logits: x,
    }
}

/// Class-probability rows, one per frame. `frames` holds `batch` frames of
/// `input_len` values back to back.
pub fn forward<T: Real>(
    model: &ModelParams<T>,
    frames: &[T],
    batch: usize,
    mode: Mode,
) -> Result<Vec<Vec<T>>, FcnError> {
    check_input(model, frames, batch)?;
    if mode == Mode::Train && model.arch.kind == ArchKind::Fcn && batch < 2 {
        return Err(FcnError::DegenerateBatch(batch));
    }
    let pass = run(model, frames, batch, mode);
    Ok(softmax_columns(&pass.logits, model.arch.n_classes, batch))
}

fn row_sums<T: Real>(m: &[T], cols: usize) -> Vec<T> {
    m.chunks(cols)
        .map(|r| {
            let mut s = T::ZERO;
            for &v in r {
                s += v;
            }
            s
        })
        .collect()
}

/// Mean cross-entropy and its exact gradient with respect to every learnable
/// tensor. Batch norm runs in training mode.
pub fn gradients<T: Real>(
    model: &ModelParams<T>,
    frames: &[T],
    labels: &[usize],
) -> Result<GradientOutput<T>, FcnError> {
    let batch = labels.len();
    check_input(model, frames, batch)?;
    let classes = model.arch.n_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(FcnError::ShapeMismatch(format!("label {bad} outside {classes} classes")));
    }
    if model.arch.kind == ArchKind::Fcn && batch < 2 {
        return Err(FcnError::DegenerateBatch(batch));
    }
    let len = model.arch.input_len;
    let pass = run(model, frames, batch, Mode::Train);

    // Loss via log-sum-exp, gradient p - onehot, both averaged over the batch.
    let mut loss = 0.0;
    let mut dout = vec![T::ZERO; classes * batch];
    let inv_b = T::from_f64(1.0 / batch as f64);
    for (b, &label) in labels.iter().enumerate() {
        let z: Vec<f64> = (0..classes).map(|k| pass.logits[k * batch + b].to_f64()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        for k in 0..classes {
            let p = (z[k] - lse).exp();
            let target = if k == label { 1.0 } else { 0.0 };
            dout[k * batch + b] = T::from_f64(p - target) * inv_b;
        }
    }
    loss /= batch as f64;

    let mut dense_grads: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(model.dense.len());
    for (i, d) in model.dense.iter().enumerate().rev() {
        let input = &pass.dense_in[i];
        let mut dw = vec![T::ZERO; d.n_out * d.n_in];
        gemm(d.n_out, batch, d.n_in, &dout, Op::N, input, Op::T, T::ZERO, &mut dw);
        let db = row_sums(&dout, batch);
        dense_grads.push((dw, db));
        let needs_input_grad = i > 0 || model.arch.kind == ArchKind::Fcn;
        if needs_input_grad {
            let mut din = vec![T::ZERO; d.n_in * batch];
            gemm(d.n_in, d.n_out, batch, &d.weight, Op::T, &dout, Op::N, T::ZERO, &mut din);
            if i > 0 {
                relu_backward(input, &mut din);
            }
            dout = din;
        }
    }
    dense_grads.reverse();

    let mut conv_grads: Vec<[Vec<T>; 4]> = Vec::with_capacity(model.convs.len());
    let mut stats = BatchStats {
        mean: Vec::new(),
        var: Vec::new(),
    };
    if model.arch.kind == ArchKind::Fcn {
        let channels = model.convs.last().unwrap().c_out;
        let mut dx = gap_backward(&dout, channels, batch, len);
        for (i, (layer, norm)) in model.convs.iter().zip(&model.norms).enumerate().rev() {
            let trace = &pass.conv[i];
            relu_backward(&trace.act, &mut dx);
            let (dpre, dgamma, dbeta) = bn_backward(norm, &trace.bn, &dx, layer.c_out);
            let bl = batch * len;
            let ck = layer.c_in * layer.kernel;
            let mut dw = vec![T::ZERO; layer.c_out * ck];
            gemm(layer.c_out, bl, ck, &dpre, Op::N, &trace.col, Op::T, T::ZERO, &mut dw);
            let db = row_sums(&dpre, bl);
            if i > 0 {
                let mut dcol = vec![T::ZERO; ck * bl];
                gemm(ck, layer.c_out, bl, &layer.weight, Op::T, &dpre, Op::N, T::ZERO, &mut dcol);
                dx = col2im(&dcol, layer.c_in, batch, len, layer.kernel);
            }
            conv_grads.push([dw, db, dgamma, dbeta]);
        }
        conv_grads.reverse();
        for t in &pass.conv {
            stats.mean.push(t.bn.mean.clone());
            stats.var.push(t.bn.var.clone());
        }
    }

    let mut grads = Vec::new();
    for g in conv_grads {
        grads.extend(g);
    }
    for (dw, db) in dense_grads {
        grads.push(dw);
        grads.push(db);
    }
    Ok(GradientOutput { grads, loss, stats })
}
