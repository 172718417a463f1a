//! Frame-wise F0 estimation by normalized autocorrelation, expressed on the
//! MIDI semitone scale.

use serde::{Deserialize, Serialize};

use crate::corpus::SampledAudio;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PitchError {
    #[error("AudioTooShort: {samples} samples, need at least {needed} for one frame")]
    AudioTooShort { samples: usize, needed: usize },
    #[error("NonPositiveFrequency: {0}")]
    NonPositiveFrequency(f64),
    #[error("AllUnvoiced: no voiced frame in pitch vector")]
    AllUnvoiced,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("MalformedPitchFile: line {line}: {msg}")]
    MalformedPitchFile { line: usize, msg: String },
}

/// Uniformly sampled pitch trajectory in semitones.
///
/// Unvoiced frames hold `0.0` in `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchVector {
    pub frame_rate: f64,
    pub values: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl PitchVector {
    /// Build from a value list where `0` marks an unvoiced frame.
    pub fn from_zero_marked(frame_rate: f64, values: Vec<f64>) -> Self {
        let voiced = values.iter().map(|&v| v != 0.0).collect();
        Self {
            frame_rate,
            values,
            voiced,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub frame_length_s: f64,
    pub hop_s: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Minimum normalized autocorrelation peak for a frame to count as voiced.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            frame_length_s: 0.040,
            hop_s: 0.010,
            f0_min_hz: 60.0,
            f0_max_hz: 500.0,
            voicing_threshold: 0.45,
        }
    }
}

impl PitchConfig {
    pub fn validate(&self) -> Result<(), PitchError> {
        let bad = |m: &str| Err(PitchError::InvalidConfig(m.to_string()));
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz < self.f0_max_hz) {
            return bad("need 0 < f0_min_hz < f0_max_hz");
        }
        if !(self.hop_s > 0.0) {
            return bad("hop_s must be positive");
        }
        // Small slack so that 0.040 s at 50 Hz is not rejected on rounding.
        if self.frame_length_s < 2.0 / self.f0_min_hz - 1e-12 {
            return bad("frame_length_s must cover two periods of f0_min_hz");
        }
        if !(0.0..=1.0).contains(&self.voicing_threshold) {
            return bad("voicing_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

/// MIDI pitch of a frequency: `69 + 12 log2(f / 440)`.
pub fn hz_to_semitone(f: f64) -> Result<f64, PitchError> {
    if f > 0.0 && f.is_finite() {
        Ok(69.0 + 12.0 * (f / 440.0).log2())
    } else {
        Err(PitchError::NonPositiveFrequency(f))
    }
}

pub fn semitone_to_hz(s: f64) -> f64 {
    440.0 * ((s - 69.0) / 12.0).exp2()
}

/// Per-octave preference for shorter lags. Pure tones have near-identical
/// correlation peaks at every period multiple; this breaks the tie toward the
/// fundamental.
const OCTAVE_COST: f64 = 0.01;

/// Mean-square frame energy below which a frame is silent.
const ENERGY_FLOOR: f64 = 1e-6;

struct LagSearch {
    lag_min: usize,
    lag_max: usize,
}

/// Normalized autocorrelation of `x` at `lag`, each half normalized by its
/// own energy so that a perfectly periodic frame scores 1 at its period.
fn nacf(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let a = x[i];
        let b = x[i + lag];
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let denom = (xx * yy).sqrt();
    if denom > 0.0 {
        xy / denom
    } else {
        0.0
    }
}

/// Best refined (lag, peak value) in the search range, if any peak exists.
fn best_peak(frame: &[f64], search: &LagSearch, sample_rate: f64, f0_min: f64) -> Option<(f64, f64)> {
    let lo = search.lag_min.saturating_sub(1).max(1);
    let hi = (search.lag_max + 1).min(frame.len() - 1);
    let r: Vec<f64> = (lo..=hi).map(|lag| nacf(frame, lag)).collect();
    let at = |lag: usize| r[lag - lo];

    let mut best: Option<(f64, f64, f64)> = None;
    for lag in search.lag_min.max(lo + 1)..=search.lag_max.min(hi - 1) {
        let (prev, cur, next) = (at(lag - 1), at(lag), at(lag + 1));
        if !(cur >= prev && cur > next && cur > 0.0) {
            continue;
        }
        let curvature = prev - 2.0 * cur + next;
        let (shift, value) = if curvature < 0.0 {
            let d = 0.5 * (prev - next) / curvature;
            (d, cur - 0.25 * (prev - next) * d)
        } else {
            (0.0, cur)
        };
        let refined = lag as f64 + shift;
        let value = value.min(1.0);
        let score = value - OCTAVE_COST * (f0_min * refined / sample_rate).log2();
        if best.is_none_or(|(_, _, s)| score > s) {
            best = Some((refined, value, score));
        }
    }
    best.map(|(lag, value, _)| (lag, value))
}

/// Estimate a semitone pitch vector with one frame per hop.
pub fn estimate_f0(audio: &SampledAudio, cfg: &PitchConfig) -> Result<PitchVector, PitchError> {
    cfg.validate()?;
    let sr = audio.sample_rate as f64;
    let frame_len = (cfg.frame_length_s * sr).round() as usize;
    let hop = ((cfg.hop_s * sr).round() as usize).max(1);
    let needed = frame_len.max(2);
    if audio.samples.len() < needed {
        return Err(PitchError::AudioTooShort {
            samples: audio.samples.len(),
            needed,
        });
    }
    let search = LagSearch {
        lag_min: ((sr / cfg.f0_max_hz).floor() as usize).max(2),
        lag_max: ((sr / cfg.f0_min_hz).ceil() as usize).min(frame_len.saturating_sub(2)),
    };
    let n_frames = (audio.samples.len() - frame_len) / hop + 1;
    let mut values = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    let mut frame = vec![0.0f64; frame_len];

    for k in 0..n_frames {
        let src = &audio.samples[k * hop..k * hop + frame_len];
        let mean = src.iter().map(|&s| s as f64).sum::<f64>() / frame_len as f64;
        for (dst, &s) in frame.iter_mut().zip(src) {
            *dst = s as f64 - mean;
        }
        let energy = frame.iter().map(|v| v * v).sum::<f64>() / frame_len as f64;

        let estimate = if energy < ENERGY_FLOOR || search.lag_min >= search.lag_max {
            None
        } else {
            best_peak(&frame, &search, sr, cfg.f0_min_hz)
                .filter(|&(_, value)| value >= cfg.voicing_threshold)
        };
        match estimate {
            Some((lag, _)) => {
                let f0 = (sr / lag).clamp(cfg.f0_min_hz, cfg.f0_max_hz);
                values.push(hz_to_semitone(f0)?);
                voiced.push(true);
            }
            None => {
                values.push(0.0);
                voiced.push(false);
            }
        }
    }

    Ok(PitchVector {
        frame_rate: sr / hop as f64,
        values,
        voiced,
    })
}

/// Close unvoiced gaps: interior runs are linearly interpolated, the leading
/// run takes the first voiced value and the trailing run the last one.
pub fn fill_unvoiced(pv: &PitchVector) -> Result<PitchVector, PitchError> {
    let first = pv.voiced.iter().position(|&v| v).ok_or(PitchError::AllUnvoiced)?;
    let mut values = pv.values.clone();
    let mut last_voiced = first;
    for v in values.iter_mut().take(first) {
        *v = pv.values[first];
    }
    for i in first + 1..values.len() {
        if !pv.voiced[i] {
            continue;
        }
        let gap = i - last_voiced;
        if gap > 1 {
            let (a, b) = (pv.values[last_voiced], pv.values[i]);
            for j in 1..gap {
                values[last_voiced + j] = a + (b - a) * j as f64 / gap as f64;
            }
        }
        last_voiced = i;
    }
    let tail = pv.values[last_voiced];
    for v in values.iter_mut().skip(last_voiced + 1) {
        *v = tail;
    }
    Ok(PitchVector {
        frame_rate: pv.frame_rate,
        values,
        voiced: vec![true; pv.values.len()],
    })
}

/// Parse the one-value-per-line pitch text format (`0` = unvoiced).
pub fn parse_pitch_text(text: &str, frame_rate: f64) -> Result<PitchVector, PitchError> {
    if !(frame_rate > 0.0) {
        return Err(PitchError::InvalidConfig("frame rate must be positive".into()));
    }
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| PitchError::MalformedPitchFile {
            line: i + 1,
            msg: format!("`{t}` is not a number"),
        })?;
        if !v.is_finite() || v < 0.0 {
            return Err(PitchError::MalformedPitchFile {
                line: i + 1,
                msg: format!("`{t}` is not a non-negative finite pitch"),
            });
        }
        values.push(v);
    }
    Ok(PitchVector::from_zero_marked(frame_rate, values))
}

/// Render values one per line; unvoiced frames (when a mask is given) as `0`.
pub fn format_pitch_text(values: &[f64], voiced: Option<&[bool]>) -> String {
    let mut out = String::with_capacity(values.len() * 8);
    for (i, v) in values.iter().enumerate() {
        if voiced.is_some_and(|m| !m[i]) {
            out.push('0');
        } else {
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, seconds: f64, amp: f64) -> SampledAudio {
        let sr = 8000u32;
        let n = (seconds * sr as f64) as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        SampledAudio::new(sr, samples)
    }

    fn voiced_hz(pv: &PitchVector) -> Vec<f64> {
        pv.values
            .iter()
            .zip(&pv.voiced)
            .filter(|(_, &v)| v)
            .map(|(&s, _)| semitone_to_hz(s))
            .collect()
    }

    #[test]
    fn semitone_mapping() {
        assert_eq!(hz_to_semitone(440.0).unwrap(), 69.0);
        assert_eq!(hz_to_semitone(880.0).unwrap(), 81.0);
        assert_eq!(hz_to_semitone(220.0).unwrap(), 57.0);
        assert!(matches!(hz_to_semitone(0.0), Err(PitchError::NonPositiveFrequency(_))));
        assert!(matches!(hz_to_semitone(-3.0), Err(PitchError::NonPositiveFrequency(_))));
    }

    #[test]
    fn sine_440_and_100() {
        for freq in [440.0, 100.0] {
            let pv = estimate_f0(&sine(freq, 2.0, 0.5), &PitchConfig::default()).unwrap();
            assert_eq!(pv.frame_rate, 100.0);
            assert_eq!(pv.voiced_count(), pv.len(), "{freq} Hz: all frames voiced");
            for f in voiced_hz(&pv) {
                assert!((f - freq).abs() <= 0.01 * freq, "{f} vs {freq}");
            }
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let audio = SampledAudio::new(8000, vec![0.0; 16000]);
        let pv = estimate_f0(&audio, &PitchConfig::default()).unwrap();
        assert!(pv.len() > 0);
        assert_eq!(pv.voiced_count(), 0);
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples = (0..16000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let pv = estimate_f0(&SampledAudio::new(8000, samples), &PitchConfig::default()).unwrap();
        assert!(pv.voiced_count() < pv.len() / 5, "{} voiced", pv.voiced_count());
    }

    #[test]
    fn too_short() {
        let audio = SampledAudio::new(8000, vec![0.1; 100]);
        assert!(matches!(
            estimate_f0(&audio, &PitchConfig::default()),
            Err(PitchError::AudioTooShort { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = PitchConfig::default();
        cfg.f0_min_hz = 600.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PitchConfig::default();
        cfg.frame_length_s = 0.02;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn amplitude_scaling_changes_nothing() {
        let loud = sine(220.0, 1.0, 0.8);
        let mut quiet = loud.clone();
        for s in &mut quiet.samples {
            *s *= 0.25;
        }
        let a = estimate_f0(&loud, &PitchConfig::default()).unwrap();
        let b = estimate_f0(&quiet, &PitchConfig::default()).unwrap();
        assert_eq!(a.voiced, b.voiced);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn fill_cases() {
        let all = PitchVector::from_zero_marked(100.0, vec![60.0, 61.0]);
        assert_eq!(fill_unvoiced(&all).unwrap(), all);

        let lead = PitchVector::from_zero_marked(100.0, vec![0.0, 60.0]);
        assert_eq!(fill_unvoiced(&lead).unwrap().values, vec![60.0, 60.0]);

        let gap = PitchVector::from_zero_marked(100.0, vec![60.0, 0.0, 0.0, 66.0]);
        assert_eq!(fill_unvoiced(&gap).unwrap().values, vec![60.0, 62.0, 64.0, 66.0]);

        let trail = PitchVector::from_zero_marked(100.0, vec![61.0, 0.0]);
        assert_eq!(fill_unvoiced(&trail).unwrap().values, vec![61.0, 61.0]);

        let none = PitchVector::from_zero_marked(100.0, vec![0.0, 0.0]);
        assert_eq!(fill_unvoiced(&none), Err(PitchError::AllUnvoiced));
    }

    #[test]
    fn pitch_text_round_trip() {
        let pv = parse_pitch_text("60\n0\n\n61.5\n", 31.25).unwrap();
        assert_eq!(pv.values, vec![60.0, 0.0, 61.5]);
        assert_eq!(pv.voiced, vec![true, false, true]);
        assert_eq!(format_pitch_text(&pv.values, Some(&pv.voiced)), "60\n0\n61.5\n");
        assert!(parse_pitch_text("60\nabc\n", 100.0).is_err());
    }

    proptest! {
        #[test]
        fn octave_is_twelve_semitones(f in 1e-3f64..1e5) {
            let d = hz_to_semitone(2.0 * f).unwrap() - hz_to_semitone(f).unwrap();
            prop_assert!((d - 12.0).abs() < 1e-12);
        }

        #[test]
        fn fill_is_idempotent_and_keeps_voiced(
            raw in proptest::collection::vec(prop_oneof![Just(0.0f64), 40.0f64..80.0], 1..64)
        ) {
            let pv = PitchVector::from_zero_marked(100.0, raw.clone());
            prop_assume!(pv.voiced_count() > 0);
            let once = fill_unvoiced(&pv).unwrap();
            let twice = fill_unvoiced(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            for (i, &v) in raw.iter().enumerate() {
                if v != 0.0 {
                    prop_assert_eq!(once.values[i].to_bits(), v.to_bits());
                }
            }
        }
    }
}
