//! Mini-batch SGD with a step-then-decay schedule and plateau stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::update_running;
use super::linalg::Real;
use super::network::{forward, gradients, Mode};
use super::{ArchSpec, FcnError, ModelParams};
use crate::dataset::{LabeledDataset, SplitSide, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Epochs trained at `initial_lr` before decay and plateau checks start.
    pub constant_epochs: usize,
    pub decay_factor: f64,
    pub plateau_patience: usize,
    /// Minimum validation-accuracy gain, in percentage points, that counts as
    /// progress.
    pub plateau_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.005,
            constant_epochs: 30,
            decay_factor: 0.7,
            plateau_patience: 5,
            plateau_delta: 0.1,
            batch_size: 64,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FcnError> {
        let bad = |m: &str| Err(FcnError::InvalidConfig(m.into()));
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must lie in (0, 1]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be positive");
        }
        Ok(())
    }
}

/// Learning rate of a 1-based epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch <= cfg.constant_epochs {
        cfg.initial_lr
    } else {
        cfg.initial_lr * cfg.decay_factor.powi((epoch - cfg.constant_epochs) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over the epoch's training frames.
    pub train_loss: f64,
    /// Query-level validation accuracy.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch.
    pub params: ModelParams<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Songs ranked by mean frame probability, ties by class index.
pub fn rank_songs<T: Real>(
    model: &ModelParams<T>,
    frames: &[T],
    n_frames: usize,
) -> Result<Vec<(usize, f64)>, FcnError> {
    if n_frames == 0 {
        return Err(FcnError::NoFrames);
    }
    let probs = forward(model, frames, n_frames, Mode::Infer)?;
    let classes = model.arch.n_classes;
    let mut score = vec![0.0; classes];
    for row in &probs {
        for (s, p) in score.iter_mut().zip(row) {
            *s += p.to_f64();
        }
    }
    let mut ranked: Vec<(usize, f64)> = score
        .into_iter()
        .map(|s| s / n_frames as f64)
        .enumerate()
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Song ids ranked by mean frame probability, ties by class index.
pub fn predict_song<T: Real>(
    model: &ModelParams<T>,
    frames: &[T],
    n_frames: usize,
    class_names: &[String],
) -> Result<Vec<(String, f64)>, FcnError> {
    if class_names.len() != model.arch.n_classes {
        return Err(FcnError::ShapeMismatch(format!(
            "{} class names for {} classes",
            class_names.len(),
            model.arch.n_classes
        )));
    }
    Ok(rank_songs(model, frames, n_frames)?
        .into_iter()
        .map(|(k, s)| (class_names[k].clone(), s))
        .collect())
}

fn gather<T: Real>(ds: &LabeledDataset, idx: &[usize]) -> Vec<T> {
    idx.iter()
        .flat_map(|&i| ds.frames[i].values.iter().map(|&v| T::from_f64(v as f64)))
        .collect()
}

/// Fraction of one side's queries whose top-ranked song is correct.
pub fn query_accuracy<T: Real>(model: &ModelParams<T>, ds: &LabeledDataset, side: SplitSide) -> Result<f64, FcnError> {
    let groups = ds.query_groups(side, Some(Variant::Raw));
    if groups.is_empty() {
        return Err(FcnError::EmptySplit(side_name(side)));
    }
    let mut hits = 0usize;
    for (_, idx) in &groups {
        let ranked = rank_songs(model, &gather::<T>(ds, idx), idx.len())?;
        if ranked[0].0 == ds.frames[idx[0]].label {
            hits += 1;
        }
    }
    Ok(hits as f64 / groups.len() as f64)
}

fn side_name(side: SplitSide) -> &'static str {
    match side {
        SplitSide::Train => "training",
        SplitSide::Validation => "validation",
    }
}

/// Batches of the shuffled order. A trailing batch of one frame joins the
/// previous batch, since batch norm needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().unwrap().len() == 1 {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Train a fresh model of `arch` on the dataset's training split.
pub fn train<T: Real>(
    ds: &LabeledDataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, FcnError> {
    cfg.validate()?;
    if arch.input_len != ds.frame_len() {
        return Err(FcnError::ShapeMismatch(format!(
            "architecture expects {} values per frame, dataset has {}",
            arch.input_len,
            ds.frame_len()
        )));
    }
    if arch.n_classes != ds.n_classes {
        return Err(FcnError::ShapeMismatch(format!(
            "architecture has {} classes, dataset has {}",
            arch.n_classes, ds.n_classes
        )));
    }
    let train_idx = ds.indices(SplitSide::Train);
    if train_idx.len() < 2 {
        return Err(FcnError::EmptySplit("training"));
    }
    if ds.indices(SplitSide::Validation).is_empty() {
        return Err(FcnError::EmptySplit("validation"));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let mut model = ModelParams::<T>::init(arch, &mut init_rng)?;
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut reference_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut history = Vec::new();
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.max_epochs {
        let lr = lr_at_epoch(cfg, epoch);
        let step = T::from_f64(lr);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let x = gather::<T>(ds, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| ds.frames[i].label).collect();
            let out = gradients(&model, &x, &labels)?;
            loss_sum += out.loss * batch.len() as f64;
            for (p, g) in model.learnable_mut().into_iter().zip(&out.grads) {
                for (w, d) in p.iter_mut().zip(g) {
                    *w -= step * *d;
                }
            }
            for (norm, (mean, var)) in model.norms.iter_mut().zip(out.stats.mean.iter().zip(&out.stats.var)) {
                update_running(norm, mean, var);
            }
        }
        let acc = query_accuracy(&model, ds, SplitSide::Validation)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy: acc,
        };
        on_epoch(&record);
        history.push(record);

        if acc > best_acc {
            best_acc = acc;
            best = model.clone();
            best_epoch = epoch;
        }
        if 100.0 * (acc - reference_acc) > cfg.plateau_delta {
            reference_acc = acc;
            stale = 0;
        } else if epoch > cfg.constant_epochs {
            stale += 1;
            if stale >= cfg.plateau_patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{QueryFrame, Variant};

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 1), 0.005);
        assert_eq!(lr_at_epoch(&cfg, 30), 0.005);
        assert!((lr_at_epoch(&cfg, 31) - 0.0035).abs() < 1e-15);
        assert!((lr_at_epoch(&cfg, 32) - 0.00245).abs() < 1e-15);
    }

    #[test]
    fn single_frame_tail_is_merged() {
        let order: Vec<usize> = (0..129).collect();
        let b = batches(&order, 64);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![64, 65]);
        let order: Vec<usize> = (0..130).collect();
        assert_eq!(batches(&order, 64).len(), 3);
    }

    fn toy(n_val_queries: usize) -> LabeledDataset {
        let mut frames = Vec::new();
        let mut split = Vec::new();
        for q in 0..4 + n_val_queries {
            let label = q % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            frames.push(QueryFrame {
                values: (0..16).map(|i| sign * ((i as f32) * 0.4 + q as f32 * 0.1).sin()).collect(),
                label,
                source_query: format!("q{q}"),
                variant: Variant::Raw,
            });
            split.push(if q < 4 { SplitSide::Train } else { SplitSide::Validation });
        }
        LabeledDataset {
            frames,
            n_classes: 2,
            class_names: vec!["a".into(), "b".into()],
            split,
            frame_rate: 100.0,
        }
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let arch = ArchSpec::mlp_with_hidden(3, 4, &[]);
        let mut m = ModelParams::<f64>::init(&arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.dense[0].weight.fill(0.0);
        let r = rank_songs(&m, &[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert_eq!(r.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let p = predict_song(&m, &[1.0, 2.0, 3.0, 4.0], 1, &names).unwrap();
        assert_eq!(p[0].0, "x");
        assert!((p.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(predict_song(&m, &[], 0, &names), Err(FcnError::NoFrames));
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let ds = toy(1);
        let arch = ArchSpec::fcn_with_blocks(2, 15, &[(2, 3)]);
        assert!(matches!(
            train::<f32>(&ds, &arch, &TrainConfig::default(), |_| {}),
            Err(FcnError::ShapeMismatch(_))
        ));
        let arch = ArchSpec::fcn_with_blocks(2, 16, &[(2, 3)]);
        assert_eq!(
            train::<f32>(&toy(0), &arch, &TrainConfig::default(), |_| {}).unwrap_err(),
            FcnError::EmptySplit("validation")
        );
    }

    #[test]
    fn plateau_stops_after_constant_phase() {
        let ds = toy(2);
        let arch = ArchSpec::fcn_with_blocks(2, 16, &[(4, 3)]);
        let cfg = TrainConfig {
            constant_epochs: 3,
            plateau_patience: 2,
            max_epochs: 100,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&ds, &arch, &cfg, |_| {}).unwrap();
        assert!(out.history.len() < 100);
        assert!(out.history.len() >= 5);
        assert!(out.best_epoch >= 1 && out.best_epoch <= out.history.len());
    }
}
