//! Training corpus assembly: fixed-length windows over query contours,
//! key normalization, TV-denoised augmentation and a query-level split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, CorpusTag};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DatasetError {
    #[error("EmptyContour: contour has no frames")]
    EmptyContour,
    #[error("MissingContour: no contour for query `{0}`")]
    MissingContour(String),
    #[error("SingleClassDataset: need at least 2 classes, got {0}")]
    SingleClassDataset(usize),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("MalformedCache: {0}")]
    MalformedCache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub frame_rate: f64,
    pub augment_with_denoised: bool,
    pub include_mtg: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            hop_s: 2.0,
            frame_rate: 100.0,
            augment_with_denoised: false,
            include_mtg: false,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(DatasetError::InvalidConfig("need 0 < hop_s <= window_s".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(DatasetError::InvalidConfig("frame_rate must be positive".into()));
        }
        if self.window_frames() == 0 || self.hop_frames() == 0 {
            return Err(DatasetError::InvalidConfig(
                "window and hop must each span at least one frame".into(),
            ));
        }
        Ok(())
    }

    pub fn window_frames(&self) -> usize {
        (self.window_s * self.frame_rate).round() as usize
    }

    pub fn hop_frames(&self) -> usize {
        (self.hop_s * self.frame_rate).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Denoised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryFrame {
    pub values: Vec<f32>,
    pub label: usize,
    pub source_query: String,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub frames: Vec<QueryFrame>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    /// Split side of each frame, parallel to `frames`.
    pub split: Vec<SplitSide>,
    pub frame_rate: f64,
}

impl LabeledDataset {
    pub fn frame_len(&self) -> usize {
        self.frames.first().map(|f| f.values.len()).unwrap_or(0)
    }

    pub fn indices(&self, side: SplitSide) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.split[i] == side).collect()
    }

    /// Frame indices grouped by source query, for one split side, in first
    /// appearance order.
    pub fn query_groups(&self, side: SplitSide, variant: Option<Variant>) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            if self.split[i] != side || variant.is_some_and(|v| v != f.variant) {
                continue;
            }
            let entry = groups.entry(f.source_query.as_str()).or_default();
            if entry.is_empty() {
                order.push(f.source_query.clone());
            }
            entry.push(i);
        }
        order
            .into_iter()
            .map(|q| {
                let idx = groups.remove(q.as_str()).unwrap();
                (q, idx)
            })
            .collect()
    }
}

/// Per-query contours at the dataset frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContours {
    /// Gap-filled pitch vector.
    pub raw: Vec<f64>,
    /// Frame-wise expansion of the TV-denoised, slope-filtered contour.
    pub denoised: Option<Vec<f64>>,
}

/// Windows of `window_s` every `hop_s`. A contour shorter than one window
/// yields a single window padded with its last value.
pub fn frame_query(values: &[f64], cfg: &DatasetConfig) -> Result<Vec<Vec<f64>>, DatasetError> {
    cfg.validate()?;
    let Some(&last) = values.last() else {
        return Err(DatasetError::EmptyContour);
    };
    let (w, h) = (cfg.window_frames(), cfg.hop_frames());
    if values.len() < w {
        let mut padded = values.to_vec();
        padded.resize(w, last);
        return Ok(vec![padded]);
    }
    let count = (values.len() - w) / h + 1;
    Ok((0..count).map(|i| values[i * h..i * h + w].to_vec()).collect())
}

/// Subtract the frame mean (transposition invariance).
pub fn normalize_frame(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

/// Sample-and-hold resampling to another frame rate.
pub fn resample_nearest(values: &[f64], from_rate: f64, to_rate: f64) -> Vec<f64> {
    if values.is_empty() || from_rate == to_rate {
        return values.to_vec();
    }
    let n_out = ((values.len() as f64 * to_rate / from_rate).floor() as usize).max(1);
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * from_rate / to_rate - 0.5).round().max(0.0) as usize;
            values[src.min(values.len() - 1)]
        })
        .collect()
}

/// Assemble frames, labels and the 75/25 query-level split.
pub fn build_dataset(
    catalog: &Catalog,
    contours: &BTreeMap<String, QueryContours>,
    cfg: &DatasetConfig,
) -> Result<LabeledDataset, DatasetError> {
    cfg.validate()?;
    let included = |tag: CorpusTag| cfg.include_mtg || tag != CorpusTag::MtgQbh;

    let class_names: Vec<String> = catalog
        .songs
        .iter()
        .filter(|s| included(s.corpus))
        .map(|s| s.id.clone())
        .collect();
    if class_names.len() < 2 {
        return Err(DatasetError::SingleClassDataset(class_names.len()));
    }
    let label_of: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let queries: Vec<_> = catalog.queries.iter().filter(|q| included(q.corpus)).collect();
    for q in &queries {
        let c = contours
            .get(&q.id)
            .ok_or_else(|| DatasetError::MissingContour(q.id.clone()))?;
        if cfg.augment_with_denoised && c.denoised.is_none() {
            return Err(DatasetError::MissingContour(format!("{} (denoised)", q.id)));
        }
    }

    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = (0.25 * queries.len() as f64).round() as usize;
    let validation: BTreeSet<usize> = order[..n_val].iter().copied().collect();

    let mut frames = Vec::new();
    let mut split = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let side = if validation.contains(&qi) {
            SplitSide::Validation
        } else {
            SplitSide::Train
        };
        let label = label_of[q.song_id.as_str()];
        let c = &contours[&q.id];
        let mut sources = vec![(Variant::Raw, &c.raw)];
        if cfg.augment_with_denoised && side == SplitSide::Train {
            sources.push((Variant::Denoised, c.denoised.as_ref().unwrap()));
        }
        for (variant, signal) in sources {
            for w in frame_query(signal, cfg)? {
                frames.push(QueryFrame {
                    values: normalize_frame(&w).into_iter().map(|v| v as f32).collect(),
                    label,
                    source_query: q.id.clone(),
                    variant,
                });
                split.push(side);
            }
        }
    }

    Ok(LabeledDataset {
        frames,
        n_classes: class_names.len(),
        class_names,
        split,
        frame_rate: cfg.frame_rate,
    })
}

const MAGIC: &[u8; 6] = b"HUMDS1";
const QUERY_SECTION: &[u8; 4] = b"QRYS";

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serialize to the `HUMDS1` cache format.
///
/// Layout: magic, `n_classes`, `n_frames`, `frame_len` (u32 LE), the class
/// name table (u32 length + UTF-8 each), then per frame `label: u32`,
/// `variant: u8`, `split: u8` and `frame_len` f32 values. A trailing `QRYS`
/// section carries the frame rate (f64), a query-id table and one u32 query
/// index per frame.
pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let frame_len = ds.frame_len();
    let mut out = Vec::with_capacity(16 + ds.frames.len() * (6 + 4 * frame_len));
    out.extend_from_slice(MAGIC);
    for v in [ds.n_classes, ds.frames.len(), frame_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for name in &ds.class_names {
        put_str(&mut out, name);
    }
    let mut query_ids: Vec<&str> = Vec::new();
    let mut query_index: BTreeMap<&str, u32> = BTreeMap::new();
    for (f, side) in ds.frames.iter().zip(&ds.split) {
        out.extend_from_slice(&(f.label as u32).to_le_bytes());
        out.push(match f.variant {
            Variant::Raw => 0,
            Variant::Denoised => 1,
        });
        out.push(match side {
            SplitSide::Train => 0,
            SplitSide::Validation => 1,
        });
        for v in &f.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        query_index.entry(f.source_query.as_str()).or_insert_with(|| {
            query_ids.push(f.source_query.as_str());
            (query_ids.len() - 1) as u32
        });
    }
    out.extend_from_slice(QUERY_SECTION);
    out.extend_from_slice(&ds.frame_rate.to_le_bytes());
    out.extend_from_slice(&(query_ids.len() as u32).to_le_bytes());
    for q in &query_ids {
        put_str(&mut out, q);
    }
    for f in &ds.frames {
        out.extend_from_slice(&query_index[f.source_query.as_str()].to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DatasetError::MalformedCache(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, DatasetError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| DatasetError::MalformedCache("name is not UTF-8".into()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset, DatasetError> {
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(DatasetError::MalformedCache("missing HUMDS1 magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: 6 };
    let n_classes = r.u32()? as usize;
    let n_frames = r.u32()? as usize;
    let frame_len = r.u32()? as usize;
    let class_names = (0..n_classes).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
    let mut frames = Vec::with_capacity(n_frames);
    let mut split = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let label = r.u32()? as usize;
        if label >= n_classes {
            return Err(DatasetError::MalformedCache(format!("label {label} out of range")));
        }
        let variant = match r.u8()? {
            0 => Variant::Raw,
            1 => Variant::Denoised,
            v => return Err(DatasetError::MalformedCache(format!("variant byte {v}"))),
        };
        split.push(match r.u8()? {
            0 => SplitSide::Train,
            1 => SplitSide::Validation,
            v => return Err(DatasetError::MalformedCache(format!("split byte {v}"))),
        });
        let values = r
            .take(4 * frame_len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        frames.push(QueryFrame {
            values,
            label,
            source_query: String::new(),
            variant,
        });
    }
    let mut frame_rate = 0.0;
    if r.pos < bytes.len() {
        if r.take(4)? != QUERY_SECTION {
            return Err(DatasetError::MalformedCache("unknown trailing section".into()));
        }
        frame_rate = r.f64()?;
        let n_queries = r.u32()? as usize;
        let ids = (0..n_queries).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        for f in &mut frames {
            let qi = r.u32()? as usize;
            f.source_query = ids
                .get(qi)
                .cloned()
                .ok_or_else(|| DatasetError::MalformedCache(format!("query index {qi}")))?;
        }
    }
    Ok(LabeledDataset {
        frames,
        n_classes,
        class_names,
        split,
        frame_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Query, Song};
    use std::path::PathBuf;

    #[test]
    fn window_counts() {
        let cfg = DatasetConfig::default();
        let w = frame_query(&vec![1.0; 800], &cfg).unwrap();
        assert_eq!(w.len(), 2);
        let ramp: Vec<f64> = (0..800).map(f64::from).collect();
        let w = frame_query(&ramp, &cfg).unwrap();
        assert_eq!((w[0][0], w[1][0]), (0.0, 200.0));
        assert!(w.iter().all(|f| f.len() == 500));

        assert_eq!(frame_query(&vec![1.0; 500], &cfg).unwrap().len(), 1);

        let short: Vec<f64> = (0..300).map(f64::from).collect();
        let w = frame_query(&short, &cfg).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].len(), 500);
        assert!(w[0][300..].iter().all(|&v| v == 299.0));

        assert_eq!(frame_query(&[], &cfg), Err(DatasetError::EmptyContour));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_frame(&[60.0, 62.0, 64.0]), vec![-2.0, 0.0, 2.0]);
        let x = [60.0, 61.5, 67.0, 59.0];
        let t: Vec<f64> = x.iter().map(|v| v + 7.0).collect();
        assert_eq!(normalize_frame(&x), normalize_frame(&t));
        assert_eq!(normalize_frame(&[64.0; 5]), vec![0.0; 5]);
    }

    #[test]
    fn resampling() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let r = resample_nearest(&v, 100.0, 25.0);
        assert_eq!(r.len(), 25);
        assert_eq!(r[0], 2.0);
        assert_eq!(r[24], 98.0);
        assert_eq!(resample_nearest(&v, 100.0, 100.0), v);
    }

    fn catalog(n_songs: usize, n_queries: usize) -> (Catalog, BTreeMap<String, QueryContours>) {
        let songs = (0..n_songs)
            .map(|s| Song {
                id: format!("{s:05}"),
                title: String::new(),
                midi_path: PathBuf::new(),
                corpus: CorpusTag::MirQbsh,
            })
            .collect();
        let mut queries = Vec::new();
        let mut contours = BTreeMap::new();
        for q in 0..n_queries {
            let id = format!("q{q:04}");
            queries.push(Query {
                id: id.clone(),
                wav_path: PathBuf::new(),
                song_id: format!("{:05}", q % n_songs),
                corpus: CorpusTag::MirQbsh,
                pv_path: None,
            });
            contours.insert(
                id,
                QueryContours {
                    raw: (0..800).map(|i| 60.0 + (i as f64 * 0.01 * (q + 1) as f64).sin()).collect(),
                    denoised: Some(vec![60.0 + q as f64; 800]),
                },
            );
        }
        (
            Catalog {
                songs,
                queries,
                skipped: Vec::new(),
            },
            contours,
        )
    }

    #[test]
    fn classes_split_and_augmentation() {
        let (cat, contours) = catalog(48, 100);
        let mut cfg = DatasetConfig::default();
        let plain = build_dataset(&cat, &contours, &cfg).unwrap();
        assert_eq!(plain.n_classes, 48);
        assert_eq!(plain.query_groups(SplitSide::Validation, None).len(), 25);

        cfg.augment_with_denoised = true;
        let aug = build_dataset(&cat, &contours, &cfg).unwrap();
        assert_eq!(aug.indices(SplitSide::Train).len(), 2 * plain.indices(SplitSide::Train).len());
        assert_eq!(
            aug.indices(SplitSide::Validation).len(),
            plain.indices(SplitSide::Validation).len()
        );
        for i in aug.indices(SplitSide::Validation) {
            assert_eq!(aug.frames[i].variant, Variant::Raw);
        }
        // No query on both sides, and augmentation keeps each query's side.
        let side_of = |ds: &LabeledDataset| {
            let mut m: BTreeMap<String, BTreeSet<SplitSide>> = BTreeMap::new();
            for (f, s) in ds.frames.iter().zip(&ds.split) {
                m.entry(f.source_query.clone()).or_default().insert(*s);
            }
            m
        };
        let (a, b) = (side_of(&plain), side_of(&aug));
        assert!(a.values().all(|s| s.len() == 1));
        assert_eq!(a, b);
    }

    #[test]
    fn missing_and_single_class() {
        let (cat, mut contours) = catalog(3, 6);
        contours.remove("q0002");
        assert_eq!(
            build_dataset(&cat, &contours, &DatasetConfig::default()),
            Err(DatasetError::MissingContour("q0002".into()))
        );
        let (mut cat, contours) = catalog(1, 4);
        cat.songs.truncate(1);
        assert_eq!(
            build_dataset(&cat, &contours, &DatasetConfig::default()),
            Err(DatasetError::SingleClassDataset(1))
        );
    }

    #[test]
    fn mtg_songs_only_when_requested() {
        let (mut cat, mut contours) = catalog(3, 6);
        cat.songs.push(Song {
            id: "mtg/x".into(),
            title: String::new(),
            midi_path: PathBuf::new(),
            corpus: CorpusTag::MtgQbh,
        });
        cat.queries.push(Query {
            id: "mtg/q".into(),
            wav_path: PathBuf::new(),
            song_id: "mtg/x".into(),
            corpus: CorpusTag::MtgQbh,
            pv_path: None,
        });
        contours.insert("mtg/q".into(), QueryContours { raw: vec![1.0; 600], denoised: None });
        let mut cfg = DatasetConfig::default();
        assert_eq!(build_dataset(&cat, &contours, &cfg).unwrap().n_classes, 3);
        cfg.include_mtg = true;
        assert_eq!(build_dataset(&cat, &contours, &cfg).unwrap().n_classes, 4);
    }

    #[test]
    fn cache_round_trip_and_determinism() {
        let (cat, contours) = catalog(4, 12);
        let cfg = DatasetConfig {
            augment_with_denoised: true,
            seed: 7,
            ..DatasetConfig::default()
        };
        let a = build_dataset(&cat, &contours, &cfg).unwrap();
        let b = build_dataset(&cat, &contours, &cfg).unwrap();
        let bytes = encode_dataset(&a);
        assert_eq!(bytes, encode_dataset(&b));
        assert_eq!(&bytes[..6], b"HUMDS1");
        assert_eq!(decode_dataset(&bytes).unwrap(), a);
        assert!(decode_dataset(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_dataset(b"HUMDS2").is_err());
    }
}
