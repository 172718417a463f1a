//! Query front end: audio or bundled pitch annotation in, contours out.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{extract_contour, ContourTrace, SlopeConfig};
use crate::corpus::{decode_wav, Catalog, Query, Skipped};
use crate::dataset::{resample_nearest, QueryContours};
use crate::pitch::{estimate_f0, fill_unvoiced, parse_pitch_text, PitchConfig, PitchVector};
use crate::tvr::TvrConfig;
use crate::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub pitch: PitchConfig,
    pub tv: TvrConfig,
    pub slope: SlopeConfig,
}

/// Where query pitch comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PitchSource {
    /// Track the WAV file.
    Audio,
    /// Read the corpus `.pv` annotation at the given frame rate, falling back
    /// to the WAV when a query has none.
    Bundled { frame_rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Tracker output with its voicing mask.
    pub pitch: PitchVector,
    /// Gap-filled pitch vector.
    pub filled: PitchVector,
    pub trace: ContourTrace,
}

impl Extraction {
    /// Raw and denoised signals resampled to `frame_rate`.
    pub fn contours(&self, frame_rate: f64) -> QueryContours {
        let from = self.filled.frame_rate;
        QueryContours {
            raw: resample_nearest(&self.filled.values, from, frame_rate),
            denoised: Some(resample_nearest(&self.trace.contour.expand(), from, frame_rate)),
        }
    }
}

pub fn extract_from_pitch(pitch: PitchVector, fe: &FrontEnd) -> Result<Extraction, Error> {
    let filled = fill_unvoiced(&pitch)?;
    let trace = extract_contour(&filled, &fe.tv, &fe.slope)?;
    Ok(Extraction {
        pitch,
        filled,
        trace,
    })
}

pub fn extract_from_wav(path: &Path, fe: &FrontEnd) -> Result<Extraction, Error> {
    let audio = decode_wav(&crate::read_file(path)?)?;
    extract_from_pitch(estimate_f0(&audio, &fe.pitch)?, fe)
}

pub fn extract_from_pitch_file(path: &Path, frame_rate: f64, fe: &FrontEnd) -> Result<Extraction, Error> {
    let bytes = crate::read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    extract_from_pitch(parse_pitch_text(&text, frame_rate)?, fe)
}

fn extract_query(q: &Query, fe: &FrontEnd, source: PitchSource) -> Result<Extraction, Error> {
    match (source, &q.pv_path) {
        (PitchSource::Bundled { frame_rate }, Some(pv)) => extract_from_pitch_file(pv, frame_rate, fe),
        _ => extract_from_wav(&q.wav_path, fe),
    }
}

/// Contours for every query, computed in parallel. Queries whose extraction
/// fails are dropped from the returned catalog and reported as skipped.
pub fn extract_catalog(
    catalog: &Catalog,
    fe: &FrontEnd,
    source: PitchSource,
    frame_rate: f64,
) -> (Catalog, BTreeMap<String, QueryContours>) {
    let results: Vec<Result<QueryContours, Error>> = catalog
        .queries
        .par_iter()
        .map(|q| extract_query(q, fe, source).map(|e| e.contours(frame_rate)))
        .collect();
    let mut kept = catalog.clone();
    kept.queries.clear();
    let mut contours = BTreeMap::new();
    for (q, r) in catalog.queries.iter().zip(results) {
        match r {
            Ok(c) => {
                contours.insert(q.id.clone(), c);
                kept.queries.push(q.clone());
            }
            Err(e) => kept.skipped.push(Skipped {
                path: q.wav_path.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (kept, contours)
}
