//! Retrieval classifiers written from scratch: a fully convolutional network
//! (three conv/batch-norm/ReLU blocks, global average pooling, softmax) and a
//! multilayer perceptron baseline.
//!
//! Activations are stored channel-major over the whole batch: a tensor with
//! `C` channels, batch `B` and length `L` is a row-major `C x (B*L)` matrix.
//! Each convolution is then one matrix product against an im2col buffer.

mod checkpoint;
mod layers;
pub mod linalg;
mod network;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use layers::{batchnorm_forward, conv1d_forward, gap, BnMode};
pub use linalg::Real;
pub use network::{forward, gradients, BatchStats, GradientOutput, Mode};
pub use train::{
    lr_at_epoch, predict_song, query_accuracy, rank_songs, train, EpochRecord, TrainConfig, TrainOutcome,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FcnError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("DegenerateBatch: batch-norm training needs at least 2 samples, got {0}")]
    DegenerateBatch(usize),
    #[error("EmptySplit: {0} split has no frames")]
    EmptySplit(&'static str),
    #[error("NoFrames: cannot rank songs without frames")]
    NoFrames,
    #[error("InvalidArch: {0}")]
    InvalidArch(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("BadCheckpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Fcn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    #[serde(default)]
    pub blocks: Vec<ConvBlockSpec>,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    pub input_len: usize,
}

impl ArchSpec {
    /// 128/256/128 filters with kernels 8/5/3.
    pub fn fcn(n_classes: usize, input_len: usize) -> Self {
        Self::fcn_with_blocks(n_classes, input_len, &[(128, 8), (256, 5), (128, 3)])
    }

    pub fn fcn_with_blocks(n_classes: usize, input_len: usize, blocks: &[(usize, usize)]) -> Self {
        Self {
            kind: ArchKind::Fcn,
            blocks: blocks
                .iter()
                .map(|&(filters, kernel)| ConvBlockSpec { filters, kernel })
                .collect(),
            hidden: Vec::new(),
            n_classes,
            input_len,
        }
    }

    /// Four hidden layers of 300 ReLU units and a softmax layer.
    pub fn mlp(n_classes: usize, input_len: usize) -> Self {
        Self::mlp_with_hidden(n_classes, input_len, &[300, 300, 300, 300])
    }

    pub fn mlp_with_hidden(n_classes: usize, input_len: usize, hidden: &[usize]) -> Self {
        Self {
            kind: ArchKind::Mlp,
            blocks: Vec::new(),
            hidden: hidden.to_vec(),
            n_classes,
            input_len,
        }
    }

    pub fn validate(&self) -> Result<(), FcnError> {
        let bad = |m: String| Err(FcnError::InvalidArch(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.input_len == 0 {
            return bad("input_len must be positive".into());
        }
        match self.kind {
            ArchKind::Fcn => {
                if self.blocks.is_empty() {
                    return bad("fcn needs at least one conv block".into());
                }
                if self.blocks.iter().any(|b| b.filters == 0 || b.kernel == 0) {
                    return bad("conv blocks need positive filters and kernel".into());
                }
            }
            ArchKind::Mlp => {
                if self.hidden.contains(&0) {
                    return bad("hidden layers need positive width".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// `c_out x (c_in * kernel)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out x n_in`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Weights, biases and batch-norm statistics of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchSpec,
    pub convs: Vec<ConvLayer<T>>,
    pub norms: Vec<BatchNorm<T>>,
    pub dense: Vec<Dense<T>>,
}

fn glorot<T: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, count: usize) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect()
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, unit scale and zero shift.
    pub fn init<R: Rng>(arch: &ArchSpec, rng: &mut R) -> Result<Self, FcnError> {
        arch.validate()?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut dense = Vec::new();
        let push_dense = |rng: &mut R, n_in: usize, n_out: usize, dense: &mut Vec<Dense<T>>| {
            dense.push(Dense {
                n_in,
                n_out,
                weight: glorot(rng, n_in, n_out, n_in * n_out),
                bias: vec![T::ZERO; n_out],
            })
        };
        match arch.kind {
            ArchKind::Fcn => {
                let mut c_in = 1;
                for b in &arch.blocks {
                    convs.push(ConvLayer {
                        c_in,
                        c_out: b.filters,
                        kernel: b.kernel,
                        weight: glorot(rng, c_in * b.kernel, b.filters * b.kernel, b.filters * c_in * b.kernel),
                        bias: vec![T::ZERO; b.filters],
                    });
                    norms.push(BatchNorm {
                        gamma: vec![T::ONE; b.filters],
                        beta: vec![T::ZERO; b.filters],
                        running_mean: vec![T::ZERO; b.filters],
                        running_var: vec![T::ONE; b.filters],
                    });
                    c_in = b.filters;
                }
                push_dense(rng, c_in, arch.n_classes, &mut dense);
            }
            ArchKind::Mlp => {
                let mut n_in = arch.input_len;
                for &h in &arch.hidden {
                    push_dense(rng, n_in, h, &mut dense);
                    n_in = h;
                }
                push_dense(rng, n_in, arch.n_classes, &mut dense);
            }
        }
        Ok(Self {
            arch: arch.clone(),
            convs,
            norms,
            dense,
        })
    }

    /// Learnable tensors in declaration order: per block conv weight, conv
    /// bias, scale, shift; then per dense layer weight and bias.
    pub fn learnable(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            out.extend([&c.weight[..], &c.bias, &n.gamma, &n.beta]);
        }
        for d in &self.dense {
            out.extend([&d.weight[..], &d.bias]);
        }
        out
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        for d in self.dense.iter_mut() {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Names and shapes of every stored tensor, running statistics included.
    pub fn inventory(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, (c, _)) in self.convs.iter().zip(&self.norms).enumerate() {
            out.push((format!("conv{i}.weight"), vec![c.c_out, c.c_in, c.kernel]));
            out.push((format!("conv{i}.bias"), vec![c.c_out]));
            for name in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("bn{i}.{name}"), vec![c.c_out]));
            }
        }
        for (i, d) in self.dense.iter().enumerate() {
            out.push((format!("dense{i}.weight"), vec![d.n_out, d.n_in]));
            out.push((format!("dense{i}.bias"), vec![d.n_out]));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.learnable().iter().map(|t| t.len()).sum()
    }

    /// Element-type conversion, e.g. an `f64` copy of an `f32` model.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        ModelParams {
            arch: self.arch.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| ConvLayer {
                    c_in: c.c_in,
                    c_out: c.c_out,
                    kernel: c.kernel,
                    weight: cv(&c.weight),
                    bias: cv(&c.bias),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| BatchNorm {
                    gamma: cv(&n.gamma),
                    beta: cv(&n.beta),
                    running_mean: cv(&n.running_mean),
                    running_var: cv(&n.running_var),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| Dense {
                    n_in: d.n_in,
                    n_out: d.n_out,
                    weight: cv(&d.weight),
                    bias: cv(&d.bias),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fcn_inventory_is_length_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ModelParams::<f32>::init(&ArchSpec::fcn(48, 300), &mut rng).unwrap();
        let b = ModelParams::<f32>::init(&ArchSpec::fcn(48, 500), &mut rng).unwrap();
        assert_eq!(a.inventory(), b.inventory());
        assert_eq!(a.dense[0].n_in, 128);
        assert_eq!(a.dense[0].n_out, 48);
    }

    #[test]
    fn mlp_has_five_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ModelParams::<f32>::init(&ArchSpec::mlp(10, 500), &mut rng).unwrap();
        assert_eq!(m.dense.len(), 5);
        assert_eq!(m.dense[0].n_in, 500);
        assert!(m.dense[..4].iter().all(|d| d.n_out == 300));
        assert_eq!(m.dense[4].n_out, 10);
    }

    #[test]
    fn rejects_single_class() {
        assert!(ArchSpec::fcn(1, 100).validate().is_err());
        assert!(ArchSpec::mlp(2, 0).validate().is_err());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ModelParams::<f64>::init(&ArchSpec::fcn(5, 50), &mut rng).unwrap();
        let limit = (6.0f64 / (128.0 * 5.0 + 256.0 * 5.0)).sqrt();
        assert!(m.convs[1].weight.iter().all(|w| w.abs() <= limit));
        assert!(m.convs.iter().all(|c| c.bias.iter().all(|&b| b == 0.0)));
    }
}
