//! Synthetic humming corpus in the MIR-QBSH directory layout.
//!
//! Songs are random monophonic melodies. Each query hums the opening of a
//! song with a tempo change, a transposition, per-note intonation error,
//! vibrato, slow pitch drift, glides, breath gaps, short octave cracks and
//! additive noise, rendered as a harmonic tone.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_midi, encode_wav, SampledAudio};
use crate::pitch::semitone_to_hz;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_songs: usize,
    pub queries_per_song: usize,
    pub query_s: f64,
    pub sample_rate: u32,
    /// Relative tempo spread, e.g. 0.1 for ±10 %.
    pub tempo_spread: f64,
    /// Maximum transposition in semitones.
    pub transpose_max: f64,
    /// Standard deviation of each hummed note's pitch error, in semitones.
    pub note_error_sd: f64,
    /// Standard deviation of the slow pitch drift, in semitones.
    pub drift_sd: f64,
    pub vibrato_depth: f64,
    /// Mean octave cracks per second.
    pub crack_rate: f64,
    /// Probability of a breath gap before each note.
    pub gap_prob: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_songs: 10,
            queries_per_song: 16,
            query_s: 8.0,
            sample_rate: 8000,
            tempo_spread: 0.1,
            transpose_max: 5.0,
            note_error_sd: 0.3,
            drift_sd: 0.3,
            vibrato_depth: 0.25,
            crack_rate: 0.6,
            gap_prob: 0.25,
            snr_db: 20.0,
            seed: 0,
        }
    }
}

/// One note of a song, in seconds and MIDI pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelodyNote {
    pub onset_s: f64,
    pub duration_s: f64,
    pub pitch: u8,
}

const NOTE_LENGTHS: [f64; 4] = [0.3, 0.45, 0.6, 0.9];

/// A random melody covering at least `min_s` seconds.
pub fn random_melody<R: Rng>(rng: &mut R, min_s: f64) -> Vec<MelodyNote> {
    let mut notes = Vec::new();
    let mut t = 0.0;
    let mut pitch: i32 = rng.random_range(57..=67);
    while t < min_s {
        let duration_s = NOTE_LENGTHS[rng.random_range(0..NOTE_LENGTHS.len())];
        notes.push(MelodyNote {
            onset_s: t,
            duration_s,
            pitch: pitch as u8,
        });
        t += duration_s;
        let mut step = 0;
        while step == 0 || !(50..=76).contains(&(pitch + step)) {
            step = rng.random_range(-5..=5);
        }
        pitch += step;
    }
    notes
}

/// Standard MIDI bytes at 120 bpm.
pub fn melody_to_midi(notes: &[MelodyNote]) -> Vec<u8> {
    // 480 ticks per quarter at 0.5 s per quarter.
    let ticks = |s: f64| (s * 960.0).round() as u32;
    let events: Vec<(u32, u32, u8)> = notes
        .iter()
        .map(|n| (ticks(n.onset_s), ticks(n.duration_s), n.pitch))
        .collect();
    encode_midi(&events, 500_000)
}

/// Per-sample F0 in Hz (`None` while silent) for one hummed rendition.
fn hummed_f0<R: Rng>(rng: &mut R, melody: &[MelodyNote], cfg: &SynthConfig) -> Vec<Option<f64>> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.query_s * sr).round() as usize;
    let tempo = 1.0 + rng.random_range(-cfg.tempo_spread..=cfg.tempo_spread);
    let transpose = rng.random_range(-cfg.transpose_max..=cfg.transpose_max);
    let note_err = Normal::new(0.0, cfg.note_error_sd.max(1e-12)).unwrap();
    let lead = rng.random_range(0.0..0.3);

    // Control curve at 1 kHz in semitones.
    let ctrl_rate = 1000.0;
    let n_ctrl = (cfg.query_s * ctrl_rate).ceil() as usize + 1;
    let mut ctrl: Vec<Option<f64>> = vec![None; n_ctrl];
    let glide = 0.04;
    let mut prev: Option<f64> = None;
    for note in melody {
        let start = lead + note.onset_s * tempo;
        if start >= cfg.query_s {
            break;
        }
        let end = (start + note.duration_s * tempo).min(cfg.query_s);
        let target = note.pitch as f64 + transpose + note_err.sample(rng);
        let gap = if rng.random_bool(cfg.gap_prob) {
            rng.random_range(0.05..0.12)
        } else {
            0.0
        };
        let from = if gap > 0.0 { None } else { prev };
        let (i0, i1) = ((start * ctrl_rate) as usize, (end * ctrl_rate) as usize);
        for (i, c) in ctrl.iter_mut().enumerate().take(i1.min(n_ctrl)).skip(i0) {
            let t = i as f64 / ctrl_rate - start;
            if t < gap {
                *c = None;
                continue;
            }
            let tg = t - gap;
            *c = Some(match from {
                Some(p) if tg < glide => p + (target - p) * tg / glide,
                _ => target,
            });
        }
        prev = Some(target);
    }

    // Drift: first-order autoregressive, stationary sd = drift_sd.
    let rho: f64 = 0.995;
    let drive = Normal::new(0.0, cfg.drift_sd * (1.0 - rho * rho).sqrt() + 1e-12).unwrap();
    let mut drift = 0.0;
    let vib_rate = rng.random_range(4.5..6.5);
    let vib_phase = rng.random_range(0.0..TAU);
    for (i, c) in ctrl.iter_mut().enumerate() {
        drift = rho * drift + drive.sample(rng);
        if let Some(p) = c {
            let t = i as f64 / ctrl_rate;
            *p += drift + cfg.vibrato_depth * (TAU * vib_rate * t + vib_phase).sin();
        }
    }

    // Octave cracks: short jumps a full octave up or down.
    if cfg.crack_rate > 0.0 {
        let mut t = 0.0;
        loop {
            t += -rng.random_range(f64::MIN_POSITIVE..1.0f64).ln() / cfg.crack_rate;
            if t >= cfg.query_s {
                break;
            }
            let len = rng.random_range(0.03..0.08);
            let shift = if rng.random_bool(0.5) { 12.0 } else { -12.0 };
            let (i0, i1) = ((t * ctrl_rate) as usize, (((t + len) * ctrl_rate) as usize).min(n_ctrl));
            for p in ctrl[i0..i1].iter_mut().flatten() {
                *p += shift;
            }
        }
    }

    (0..n)
        .map(|s| ctrl[((s as f64 / sr) * ctrl_rate) as usize].map(semitone_to_hz))
        .collect()
}

/// Harmonic tone following `f0`, with a short fade at voicing edges and
/// white noise at `snr_db` relative to the voiced signal power.
pub fn render_hum<R: Rng>(rng: &mut R, f0: &[Option<f64>], sample_rate: u32, snr_db: f64) -> Vec<f32> {
    let sr = sample_rate as f64;
    let harmonics: Vec<f64> = (1..=6).map(|h| 1.0 / (h as f64).powf(1.2)).collect();
    let mut phase = 0.0;
    let mut env: f64 = 0.0;
    let fade = 1.0 / (0.01 * sr);
    let mut last_f = f0.iter().flatten().next().copied().unwrap_or(100.0);
    let mut out = Vec::with_capacity(f0.len());
    for f in f0 {
        let target = if f.is_some() { 1.0 } else { 0.0 };
        env += (target - env).clamp(-fade, fade);
        if let Some(f) = f {
            last_f = *f;
        }
        phase = (phase + TAU * last_f / sr) % TAU;
        let mut v = 0.0;
        for (h, a) in harmonics.iter().enumerate() {
            if (h + 1) as f64 * last_f < sr / 2.0 {
                v += a * ((h + 1) as f64 * phase).sin();
            }
        }
        out.push(v * env);
    }
    let power = out.iter().map(|v| v * v).sum::<f64>() / out.len().max(1) as f64;
    let noise = Normal::new(0.0, (power / 10f64.powf(snr_db / 10.0)).sqrt() + 1e-12).unwrap();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let gain = 0.5 / peak;
    out.into_iter()
        .map(|v| ((v + noise.sample(rng)) * gain).clamp(-1.0, 1.0) as f32)
        .collect()
}

/// Write `midiFile/<song>.mid` and `waveFile/<year>/<singer>/<song>.wav`
/// under `root`. Returns the written query paths.
pub fn write_synthetic_corpus(root: &Path, cfg: &SynthConfig) -> Result<Vec<PathBuf>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let midi_dir = root.join("midiFile");
    crate::create_dir(&midi_dir)?;
    let melodies: Vec<Vec<MelodyNote>> = (0..cfg.n_songs)
        .map(|_| random_melody(&mut rng, cfg.query_s * (1.0 + cfg.tempo_spread) + 1.0))
        .collect();
    for (s, m) in melodies.iter().enumerate() {
        let path = midi_dir.join(format!("{:05}.mid", s + 1));
        crate::write_atomic(&path, &melody_to_midi(m)).map_err(|e| Error::io(&path, e))?;
    }
    let mut written = Vec::new();
    for singer in 0..cfg.queries_per_song {
        let dir = root.join("waveFile").join("synth").join(format!("person{singer:05}"));
        crate::create_dir(&dir)?;
        for (s, m) in melodies.iter().enumerate() {
            let f0 = hummed_f0(&mut rng, m, cfg);
            let samples = render_hum(&mut rng, &f0, cfg.sample_rate, cfg.snr_db);
            let path = dir.join(format!("{:05}.wav", s + 1));
            crate::write_atomic(&path, &encode_wav(&SampledAudio::new(cfg.sample_rate, samples)))
                .map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
