//! Corpus ingestion: WAV queries, MIDI ground truth and directory catalogs.

mod catalog;
mod midi;
mod wav;

use std::path::PathBuf;

pub use catalog::{scan_corpus, Catalog, CorpusTag, Query, Skipped, Song};
pub use midi::{encode_midi, parse_midi, Note, NoteSequence};
pub use wav::{decode_wav, encode_wav, SampledAudio};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("MalformedContainer: {0}")]
    MalformedContainer(String),
    #[error("UnsupportedFormat: {0}")]
    UnsupportedFormat(String),
    #[error("MalformedMidi: {0}")]
    MalformedMidi(String),
    #[error("PolyphonyError: {0}")]
    PolyphonyError(String),
    #[error("EmptyCorpus: no songs found")]
    EmptyCorpus,
    #[error("AmbiguousMapping: {0}")]
    AmbiguousMapping(String),
    #[error("MalformedManifest: {0}")]
    MalformedManifest(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
