use hummit_core::corpus::{encode_wav, SampledAudio};
use hummit_core::pipeline::{extract_from_wav, FrontEnd};
use hummit_core::pitch::semitone_to_hz;
use hummit_core::synth::{render_hum, MelodyNote};
use hummit_core::tvr::{denoise_tv, tv_objective, TvrConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dual projected gradient for min TV(u) + lambda/2 |f - u|^2, used as an
/// independent reference for the direct solver.
fn dual_reference(f: &[f64], lambda: f64) -> Vec<f64> {
    let n = f.len();
    let w = 1.0 / lambda;
    let mut z = vec![0.0; n.saturating_sub(1)];
    let primal = |z: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let left = if i > 0 { z[i - 1] } else { 0.0 };
                let right = if i + 1 < n { z[i] } else { 0.0 };
                f[i] - left + right
            })
            .collect()
    };
    for _ in 0..1_000_000 {
        let u = primal(&z);
        let mut moved: f64 = 0.0;
        for i in 0..z.len() {
            let next = (z[i] + 0.25 * (u[i + 1] - u[i])).clamp(-w, w);
            moved = moved.max((next - z[i]).abs());
            z[i] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    primal(&z)
}

proptest! {
    #[test]
    fn solver_matches_dual_reference(
        f in prop::collection::vec(-10.0f64..10.0, 1..14),
        log_lambda in -2.0f64..2.0,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let cfg = TvrConfig { lambda_fidelity: lambda };
        let u = denoise_tv(&f, &cfg).unwrap();
        let v = dual_reference(&f, lambda);
        prop_assert!(tv_objective(&f, &u, &cfg).unwrap() <= tv_objective(&f, &v, &cfg).unwrap() + 1e-9);
        for (a, b) in u.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn clean_hum_recovers_notes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sr = 8000;
    for _ in 0..5 {
        // Steps of at least two semitones: the per-frame slope detector does
        // not resolve one-semitone steps smeared over several analysis frames.
        let mut melody: Vec<MelodyNote> = Vec::new();
        let mut pitch: i32 = rng.random_range(57..=67);
        let mut onset_s = 0.0;
        while onset_s < 4.0 {
            let duration_s = [0.3, 0.45, 0.6, 0.9][rng.random_range(0..4)];
            melody.push(MelodyNote { onset_s, duration_s, pitch: pitch as u8 });
            onset_s += duration_s;
            let step = rng.random_range(2..=5);
            pitch += if pitch > 64 { -step } else { step };
        }
        let end = melody.last().map(|n| n.onset_s + n.duration_s).unwrap();
        let f0: Vec<Option<f64>> = (0..(end * sr as f64) as usize)
            .map(|s| {
                let t = s as f64 / sr as f64;
                let note = melody.iter().rev().find(|n| n.onset_s <= t).unwrap();
                Some(semitone_to_hz(note.pitch as f64))
            })
            .collect();
        let audio = SampledAudio::new(sr, render_hum(&mut rng, &f0, sr, 30.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.wav");
        std::fs::write(&path, encode_wav(&audio)).unwrap();

        let ex = extract_from_wav(&path, &FrontEnd::default()).unwrap();
        let segs = &ex.trace.contour.segments;
        assert_eq!(segs.len(), melody.len(), "{segs:?}");
        for (s, n) in segs.iter().zip(&melody) {
            assert!((s.pitch - n.pitch as f64).abs() < 0.5, "{} vs {}", s.pitch, n.pitch);
        }
    }
}
