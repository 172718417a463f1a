//! Slope filtering of a denoised pitch vector into a piecewise-constant note
//! contour.
//!
//! A slope sample `d[i] = x[i+1] - x[i]` that fires marks a boundary between
//! frames `i` and `i + 1`; the new segment starts at frame `i + 1`.

use serde::{Deserialize, Serialize};

use crate::pitch::PitchVector;
use crate::tvr::{denoise_tv, TvError, TvrConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ContourError {
    #[error("SignalTooShort: need at least 2 samples, got {0}")]
    SignalTooShort(usize),
    #[error("InvalidTransitionIndex: {0}")]
    InvalidTransitionIndex(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tv(#[from] TvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeConfig {
    /// Smallest per-frame slope magnitude (semitones) counted as a transition.
    pub threshold_semitones: f64,
    /// Minimal spacing between two transitions.
    pub min_gap_s: f64,
}

impl Default for SlopeConfig {
    fn default() -> Self {
        Self {
            threshold_semitones: 0.5,
            min_gap_s: 0.1,
        }
    }
}

impl SlopeConfig {
    pub fn validate(&self) -> Result<(), ContourError> {
        if !(self.threshold_semitones > 0.0) || !(self.min_gap_s > 0.0) {
            return Err(ContourError::InvalidConfig(
                "threshold_semitones and min_gap_s must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn min_gap_frames(&self, frame_rate: f64) -> usize {
        (self.min_gap_s * frame_rate).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "start")]
    pub start_frame: usize,
    #[serde(rename = "len")]
    pub length_frames: usize,
    pub pitch: f64,
}

/// Ordered segments that tile `[0, total_frames)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteContour {
    pub frame_rate: f64,
    pub segments: Vec<Segment>,
}

impl NoteContour {
    pub fn total_frames(&self) -> usize {
        self.segments
            .last()
            .map(|s| s.start_frame + s.length_frames)
            .unwrap_or(0)
    }

    /// Frame-wise piecewise-constant signal.
    pub fn expand(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_frames());
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.pitch, s.length_frames));
        }
        out
    }
}

pub fn slope(x: &[f64]) -> Result<Vec<f64>, ContourError> {
    if x.len() < 2 {
        return Err(ContourError::SignalTooShort(x.len()));
    }
    Ok(x.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Indices of slope samples that count as note transitions.
///
/// Candidates must reach the threshold in magnitude. Candidates closer than
/// the minimum gap compete left to right and only the largest magnitude
/// survives (the earlier index on ties).
pub fn detect_transitions(d: &[f64], cfg: &SlopeConfig, frame_rate: f64) -> Vec<usize> {
    let gap = cfg.min_gap_frames(frame_rate);
    let mut kept: Vec<usize> = Vec::new();
    for (i, v) in d.iter().enumerate() {
        if v.abs() < cfg.threshold_semitones {
            continue;
        }
        match kept.last_mut() {
            Some(last) if i - *last < gap => {
                if v.abs() > d[*last].abs() {
                    *last = i;
                }
            }
            _ => kept.push(i),
        }
    }
    kept
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rebuild the contour with segment pitch equal to the median of the frames
/// it covers.
pub fn rebuild_contour(pv: &PitchVector, transitions: &[usize]) -> Result<NoteContour, ContourError> {
    let n = pv.values.len();
    if n == 0 {
        return Err(ContourError::SignalTooShort(0));
    }
    let mut bounds = Vec::with_capacity(transitions.len() + 2);
    bounds.push(0);
    for &t in transitions {
        if t + 1 >= n {
            return Err(ContourError::InvalidTransitionIndex(format!(
                "transition {t} leaves no frame after it in a {n}-frame signal"
            )));
        }
        if t + 1 <= *bounds.last().unwrap() {
            return Err(ContourError::InvalidTransitionIndex(format!(
                "transitions must be strictly increasing, saw {t}"
            )));
        }
        bounds.push(t + 1);
    }
    bounds.push(n);

    let segments = bounds
        .windows(2)
        .map(|b| {
            let mut vals = pv.values[b[0]..b[1]].to_vec();
            Segment {
                start_frame: b[0],
                length_frames: b[1] - b[0],
                pitch: median(&mut vals),
            }
        })
        .collect();
    Ok(NoteContour {
        frame_rate: pv.frame_rate,
        segments,
    })
}

/// Intermediate products of [`extract_contour`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContourTrace {
    pub denoised: Vec<f64>,
    pub slope: Vec<f64>,
    pub transitions: Vec<usize>,
    pub contour: NoteContour,
}

/// TV denoising, slope filtering and reconstruction of a gap-free pitch
/// vector. Segment pitches are medians of the denoised signal.
pub fn extract_contour(
    filled: &PitchVector,
    tv: &TvrConfig,
    slope_cfg: &SlopeConfig,
) -> Result<ContourTrace, ContourError> {
    slope_cfg.validate()?;
    let denoised = denoise_tv(&filled.values, tv)?;
    let (d, transitions) = if denoised.len() >= 2 {
        let d = slope(&denoised)?;
        let t = detect_transitions(&d, slope_cfg, filled.frame_rate);
        (d, t)
    } else {
        (Vec::new(), Vec::new())
    };
    let smooth = PitchVector {
        frame_rate: filled.frame_rate,
        voiced: vec![true; denoised.len()],
        values: denoised.clone(),
    };
    let contour = rebuild_contour(&smooth, &transitions)?;
    Ok(ContourTrace {
        denoised,
        slope: d,
        transitions,
        contour,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tvr::tv_norm;
    use proptest::prelude::*;

    fn pv(values: Vec<f64>) -> PitchVector {
        PitchVector {
            frame_rate: 100.0,
            voiced: vec![true; values.len()],
            values,
        }
    }

    #[test]
    fn slope_examples() {
        assert_eq!(slope(&[1.0, 1.0, 2.0, 2.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(slope(&[3.0; 5]).unwrap(), vec![0.0; 4]);
        assert_eq!(slope(&[1.0]), Err(ContourError::SignalTooShort(1)));
    }

    #[test]
    fn detect_examples() {
        let cfg = SlopeConfig::default();
        assert!(detect_transitions(&[0.0; 30], &cfg, 100.0).is_empty());

        let mut d = vec![0.0; 30];
        d[10] = -3.0;
        assert_eq!(detect_transitions(&d, &cfg, 100.0), vec![10]);

        // min gap 5 frames at 50 fps.
        d[12] = 5.0;
        assert_eq!(detect_transitions(&d, &cfg, 50.0), vec![12]);

        // Ties keep the earlier index.
        let mut d = vec![0.0; 30];
        d[3] = 2.0;
        d[5] = -2.0;
        assert_eq!(detect_transitions(&d, &cfg, 50.0), vec![3]);
    }

    #[test]
    fn rebuild_examples() {
        let mut v = vec![60.0; 5];
        v.extend([64.0; 5]);
        let c = rebuild_contour(&pv(v), &[4]).unwrap();
        assert_eq!(
            c.segments,
            vec![
                Segment { start_frame: 0, length_frames: 5, pitch: 60.0 },
                Segment { start_frame: 5, length_frames: 5, pitch: 64.0 },
            ]
        );

        let c = rebuild_contour(&pv(vec![60.0, 61.0, 65.0]), &[]).unwrap();
        assert_eq!(c.segments.len(), 1);
        assert_eq!(c.segments[0].pitch, 61.0);

        let c = rebuild_contour(&pv(vec![60.0, 60.0, 60.0, 60.0, 72.0]), &[]).unwrap();
        assert_eq!(c.segments[0].pitch, 60.0);
    }

    #[test]
    fn rebuild_rejects_bad_indices() {
        let p = pv(vec![1.0; 4]);
        assert!(matches!(rebuild_contour(&p, &[3]), Err(ContourError::InvalidTransitionIndex(_))));
        assert!(matches!(rebuild_contour(&p, &[1, 1]), Err(ContourError::InvalidTransitionIndex(_))));
        assert!(matches!(rebuild_contour(&p, &[2, 0]), Err(ContourError::InvalidTransitionIndex(_))));
    }

    #[test]
    fn pipeline_on_clean_melody() {
        let mut v = vec![60.0; 40];
        v.extend([64.0; 40]);
        v.extend([62.0; 40]);
        let trace = extract_contour(&pv(v), &TvrConfig::default(), &SlopeConfig::default()).unwrap();
        assert_eq!(trace.transitions, vec![39, 79]);
        assert_eq!(trace.contour.segments.len(), 3);
        assert_eq!(trace.contour.total_frames(), 120);
    }

    proptest! {
        #[test]
        fn transitions_respect_gap(
            d in proptest::collection::vec(-3.0f64..3.0, 0..200),
            gap_s in 0.01f64..0.3,
        ) {
            let cfg = SlopeConfig { threshold_semitones: 0.5, min_gap_s: gap_s };
            let t = detect_transitions(&d, &cfg, 100.0);
            let gap = cfg.min_gap_frames(100.0);
            for w in t.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(w[1] - w[0] >= gap);
            }
            for &i in &t {
                prop_assert!(d[i].abs() >= 0.5);
            }
        }

        #[test]
        fn rebuilt_contour_tiles_and_tv_matches(
            values in proptest::collection::vec(50.0f64..70.0, 2..120),
            raw_t in proptest::collection::btree_set(0usize..119, 0..8),
        ) {
            let n = values.len();
            let t: Vec<usize> = raw_t.into_iter().filter(|&i| i + 1 < n).collect();
            let c = rebuild_contour(&pv(values), &t).unwrap();
            let mut next = 0;
            for s in &c.segments {
                prop_assert_eq!(s.start_frame, next);
                prop_assert!(s.length_frames > 0);
                next += s.length_frames;
            }
            prop_assert_eq!(next, n);
            let jumps: f64 = c.segments.windows(2).map(|w| (w[1].pitch - w[0].pitch).abs()).sum();
            prop_assert!((tv_norm(&c.expand()).unwrap() - jumps).abs() < 1e-9);
        }
    }
}
