//! `HUMNN1` model files.
//!
//! Layout: the 6-byte magic, a u32 LE header length, a JSON header with the
//! architecture, class names and frame rate, then every learnable tensor as
//! f32 LE in declaration order, then the running mean and variance of each
//! batch-norm layer, then a CRC32 of all preceding bytes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchSpec, FcnError, ModelParams};

const MAGIC: &[u8; 6] = b"HUMNN1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub class_names: Vec<String>,
    /// Contour frame rate the model was trained at.
    pub frame_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    arch: ArchSpec,
    class_names: Vec<String>,
    frame_rate: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            arch: self.params.arch.clone(),
            class_names: self.class_names.clone(),
            frame_rate: self.frame_rate,
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let p = &self.params;
        let stats = p.norms.iter().flat_map(|n| [&n.running_mean[..], &n.running_var]);
        for t in p.learnable().into_iter().chain(stats) {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FcnError> {
        let bad = |m: String| FcnError::BadCheckpoint(m);
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("missing HUMNN1 magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch".into()));
        }
        let mut pos = MAGIC.len();
        let header_len = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        let header_bytes = body
            .get(pos..pos + header_len)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| bad(format!("header: {e}")))?;
        pos += header_len;
        if header.class_names.len() != header.arch.n_classes {
            return Err(bad(format!(
                "{} class names for {} classes",
                header.class_names.len(),
                header.arch.n_classes
            )));
        }

        // Shapes come from the architecture; values are overwritten below.
        let mut params = ModelParams::<f32>::init(&header.arch, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| bad(e.to_string()))?;
        let mut values = body[pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let expected = params.parameter_count() + 2 * params.norms.iter().map(|n| n.gamma.len()).sum::<usize>();
        if body.len() - pos != 4 * expected {
            return Err(bad(format!(
                "expected {expected} values, found {} bytes",
                body.len() - pos
            )));
        }
        for t in params.learnable_mut() {
            for w in t.iter_mut() {
                *w = values.next().unwrap();
            }
        }
        for n in params.norms.iter_mut() {
            for w in n.running_mean.iter_mut().chain(n.running_var.iter_mut()) {
                *w = values.next().unwrap();
            }
        }
        Ok(Self {
            params,
            class_names: header.class_names,
            frame_rate: header.frame_rate,
        })
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> std::io::Result<()> {
    crate::write_atomic(path, &ckpt.to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, crate::Error> {
    let bytes = std::fs::read(path).map_err(|source| crate::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}
