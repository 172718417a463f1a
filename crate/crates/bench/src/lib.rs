//! Seeded inputs shared by the benchmarks.

use hummit_core::corpus::SampledAudio;
use hummit_core::fcn::{ArchSpec, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noisy piecewise-constant semitone contour of `len` frames.
pub fn noisy_steps(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = 60.0;
    (0..len)
        .map(|i| {
            if i % 40 == 0 {
                level += rng.random_range(-5.0..5.0f64).round();
            }
            level + rng.random_range(-0.3..0.3)
        })
        .collect()
}

/// `seconds` of a 220 Hz tone with two harmonics at 8 kHz.
pub fn hum(seconds: f64) -> SampledAudio {
    let sr = 8000u32;
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let w = std::f64::consts::TAU * 220.0 * t;
            (0.5 * w.sin() + 0.25 * (2.0 * w).sin() + 0.12 * (3.0 * w).sin()) as f32
        })
        .collect();
    SampledAudio::new(sr, samples)
}

/// Frames of `len` values, `batch` of them back to back.
pub fn frames(batch: usize, len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch * len).map(|_| rng.random_range(-3.0..3.0)).collect()
}

pub fn model(arch: &ArchSpec, seed: u64) -> ModelParams<f32> {
    ModelParams::init(arch, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid architecture")
}
