//! Directory layouts of the supported query corpora.
//!
//! * `mir-qbsh`: `midiFile/<song>.mid`, queries anywhere under `waveFile/`
//!   named `<song>.wav`. Optional sibling `<song>.pv` pitch annotations.
//! * `mtg-qbh`: `midi/<song>.mid`, `audio/<query>.wav` and a
//!   `groundtruth.csv` with header `query,song`.
//! * `flat-manifest`: `midi/<song>.mid` and a `manifest.csv` with header
//!   `query_path,song_id`; query paths are relative to the root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{decode_wav, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CorpusTag {
    #[serde(rename = "mir-qbsh")]
    MirQbsh,
    #[serde(rename = "mtg-qbh")]
    MtgQbh,
    #[serde(rename = "flat-manifest")]
    FlatManifest,
}

impl CorpusTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusTag::MirQbsh => "mir-qbsh",
            CorpusTag::MtgQbh => "mtg-qbh",
            CorpusTag::FlatManifest => "flat-manifest",
        }
    }
}

impl fmt::Display for CorpusTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mir-qbsh" => Ok(CorpusTag::MirQbsh),
            "mtg-qbh" => Ok(CorpusTag::MtgQbh),
            "flat-manifest" => Ok(CorpusTag::FlatManifest),
            other => Err(format!(
                "unknown corpus layout `{other}` (expected mir-qbsh, mtg-qbh or flat-manifest)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Song {
    pub id: String,
    pub title: String,
    pub midi_path: PathBuf,
    pub corpus: CorpusTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub wav_path: PathBuf,
    pub song_id: String,
    pub corpus: CorpusTag,
    /// Bundled pitch annotation, when the corpus ships one.
    pub pv_path: Option<PathBuf>,
}

/// A file that was found but could not be used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

/// Immutable song/query index. Songs and queries are sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    pub songs: Vec<Song>,
    pub queries: Vec<Query>,
    pub skipped: Vec<Skipped>,
}

impl Catalog {
    fn build(
        songs: Vec<Song>,
        queries: Vec<Query>,
        skipped: Vec<Skipped>,
    ) -> Result<Self, CorpusError> {
        if songs.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut songs = songs;
        let mut queries = queries;
        songs.sort_by(|a, b| a.id.cmp(&b.id));
        queries.sort_by(|a, b| a.id.cmp(&b.id));
        for w in songs.windows(2) {
            if w[0].id == w[1].id {
                return Err(CorpusError::AmbiguousMapping(format!(
                    "song id `{}` appears more than once",
                    w[0].id
                )));
            }
        }
        for w in queries.windows(2) {
            if w[0].id == w[1].id {
                return Err(CorpusError::AmbiguousMapping(format!(
                    "query id `{}` appears more than once",
                    w[0].id
                )));
            }
        }
        let ids: BTreeSet<&str> = songs.iter().map(|s| s.id.as_str()).collect();
        if let Some(q) = queries.iter().find(|q| !ids.contains(q.song_id.as_str())) {
            return Err(CorpusError::AmbiguousMapping(format!(
                "query `{}` refers to unknown song `{}`",
                q.id, q.song_id
            )));
        }
        Ok(Self {
            songs,
            queries,
            skipped,
        })
    }

    pub fn song(&self, id: &str) -> Option<&Song> {
        self.songs
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.songs[i])
    }

    /// Union of two catalogs with disjoint ids.
    pub fn merge(self, other: Catalog) -> Result<Catalog, CorpusError> {
        let mut songs = self.songs;
        songs.extend(other.songs);
        let mut queries = self.queries;
        queries.extend(other.queries);
        let mut skipped = self.skipped;
        skipped.extend(other.skipped);
        Catalog::build(songs, queries, skipped)
    }
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Files below `dir` in sorted, depth-first order. Missing dirs yield nothing.
fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(rd) = fs::read_dir(dir) else { return };
    let mut entries: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn songs_in(dir: &Path, corpus: CorpusTag) -> Vec<Song> {
    let mut files = Vec::new();
    walk(dir, &mut files);
    files
        .into_iter()
        .filter(|p| has_ext(p, "mid") || has_ext(p, "midi"))
        .map(|p| {
            let id = stem(&p);
            Song {
                title: id.clone(),
                id,
                midi_path: p,
                corpus,
            }
        })
        .collect()
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// `Ok(())` when the WAV decodes, otherwise the reason it was skipped.
fn check_wav(path: &Path) -> Result<(), String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    decode_wav(&bytes).map(|_| ()).map_err(|e| e.to_string())
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().unwrap_or_default();
    let got: Vec<&str> = first.split(',').map(str::trim).collect();
    if got != header {
        return Err(CorpusError::MalformedManifest(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            header.join(","),
            first
        )));
    }
    lines
        .map(|l| {
            let cols: Vec<String> = l.split(',').map(|c| c.trim().to_string()).collect();
            if cols.len() != header.len() {
                Err(CorpusError::MalformedManifest(format!(
                    "{}: row `{l}` has {} columns",
                    path.display(),
                    cols.len()
                )))
            } else {
                Ok(cols)
            }
        })
        .collect()
}

/// Index a corpus directory according to `layout`.
pub fn scan_corpus(root: &Path, layout: CorpusTag) -> Result<Catalog, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        });
    }
    match layout {
        CorpusTag::MirQbsh => scan_mir_qbsh(root),
        CorpusTag::MtgQbh => scan_mtg_qbh(root),
        CorpusTag::FlatManifest => scan_manifest(root),
    }
}

fn scan_mir_qbsh(root: &Path) -> Result<Catalog, CorpusError> {
    let songs = songs_in(&root.join("midiFile"), CorpusTag::MirQbsh);
    if songs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut files = Vec::new();
    walk(&root.join("waveFile"), &mut files);
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    for path in files.into_iter().filter(|p| has_ext(p, "wav")) {
        if let Err(reason) = check_wav(&path) {
            skipped.push(Skipped { path, reason });
            continue;
        }
        let pv = path.with_extension("pv");
        queries.push(Query {
            id: relative_id(root, &path),
            song_id: stem(&path),
            corpus: CorpusTag::MirQbsh,
            pv_path: pv.is_file().then_some(pv),
            wav_path: path,
        });
    }
    Catalog::build(songs, queries, skipped)
}

fn scan_mtg_qbh(root: &Path) -> Result<Catalog, CorpusError> {
    let songs: Vec<Song> = songs_in(&root.join("midi"), CorpusTag::MtgQbh)
        .into_iter()
        .map(|s| Song {
            id: format!("mtg/{}", s.id),
            ..s
        })
        .collect();
    if songs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut mapping: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in read_csv(&root.join("groundtruth.csv"), &["query", "song"])? {
        mapping
            .entry(row[0].clone())
            .or_default()
            .push(format!("mtg/{}", row[1]));
    }
    let mut files = Vec::new();
    walk(&root.join("audio"), &mut files);
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    for path in files.into_iter().filter(|p| has_ext(p, "wav")) {
        let key = stem(&path);
        let song_id = match mapping.get(&key).map(Vec::as_slice) {
            Some([one]) => one.clone(),
            Some(many) if many.len() > 1 => {
                return Err(CorpusError::AmbiguousMapping(format!(
                    "query `{key}` is mapped to {} songs",
                    many.len()
                )))
            }
            _ => {
                return Err(CorpusError::AmbiguousMapping(format!(
                    "query `{key}` has no ground-truth song"
                )))
            }
        };
        if let Err(reason) = check_wav(&path) {
            skipped.push(Skipped { path, reason });
            continue;
        }
        queries.push(Query {
            id: format!("mtg/{}", relative_id(root, &path)),
            wav_path: path,
            song_id,
            corpus: CorpusTag::MtgQbh,
            pv_path: None,
        });
    }
    Catalog::build(songs, queries, skipped)
}

fn scan_manifest(root: &Path) -> Result<Catalog, CorpusError> {
    let songs = songs_in(&root.join("midi"), CorpusTag::FlatManifest);
    if songs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let rows = read_csv(&root.join("manifest.csv"), &["query_path", "song_id"])?;
    let mut queries = Vec::new();
    let mut skipped = Vec::new();
    for row in rows {
        let path = root.join(&row[0]);
        if let Err(reason) = check_wav(&path) {
            skipped.push(Skipped { path, reason });
            continue;
        }
        let pv = path.with_extension("pv");
        queries.push(Query {
            id: relative_id(root, &path),
            song_id: row[1].clone(),
            corpus: CorpusTag::FlatManifest,
            pv_path: pv.is_file().then_some(pv),
            wav_path: path,
        });
    }
    Catalog::build(songs, queries, skipped)
}
