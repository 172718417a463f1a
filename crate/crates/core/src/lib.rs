//! Query-by-humming engine.
//!
//! Hummed audio is pitch tracked into a semitone contour, smoothed by exact
//! 1-D total-variation denoising, cut into notes by slope filtering and
//! classified against a song catalog by a fully convolutional network.

pub mod contour;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod fcn;
pub mod pipeline;
pub mod pitch;
pub mod synth;
pub mod tvr;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use contour::{extract_contour, NoteContour, Segment, SlopeConfig};
pub use corpus::{scan_corpus, Catalog, CorpusTag, SampledAudio};
pub use dataset::{build_dataset, DatasetConfig, LabeledDataset, QueryContours};
pub use eval::{run_ablation, AblationConfig, EvalReport};
pub use fcn::{ArchSpec, Checkpoint, ModelParams, TrainConfig};
pub use pipeline::{FrontEnd, PitchSource};
pub use pitch::{PitchConfig, PitchVector};
pub use tvr::{denoise_tv, TvrConfig};

/// Any failure of the engine. Display strings start with the name of the
/// underlying error variant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Pitch(#[from] pitch::PitchError),
    #[error(transparent)]
    Tv(#[from] tvr::TvError),
    #[error(transparent)]
    Contour(#[from] contour::ContourError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Fcn(#[from] fcn::FcnError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write `bytes` to a temporary file next to `path`, then rename it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
