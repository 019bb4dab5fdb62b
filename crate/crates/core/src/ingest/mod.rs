//! Readers and writers for every on-disk format the pipeline touches.
//!
//! | format | contents |
//! |---|---|
//! | COLMAP text (`cameras.txt`, `images.txt`, `points3D.txt`) | cameras, poses, sparse cloud |
//! | PFM (`Pf`, grayscale float32) | relative / aligned / ground-truth depth |
//! | PGM (`P5`, 8-bit) | instance masks, 0 = background |
//! | JSONL | keypoint tracks, one observation per line |
//! | PLK1 | dense Plücker ray tensors |

use std::path::{Path, PathBuf};

use thiserror::Error;

mod colmap;
mod pfm;
mod pgm;
mod plucker;
mod tracks;

pub use colmap::{
    parse_colmap_text, serialize_colmap_text, CameraModel, CameraRecord, CloudPoint, FrameRecord,
    frame_name, Observation, SfmModel, SparseCloud,
};
pub use pfm::{parse_pfm, read_pfm, write_pfm, encode_pfm};
pub use pgm::{encode_pgm, parse_pgm_mask, read_pgm_mask, write_pgm_mask};
pub use plucker::{
    decode_plucker, encode_plucker, read_plucker, sidecar_path, write_plucker, PluckerTensor,
    PLUCKER_MAGIC,
};
pub use tracks::{parse_tracks_jsonl, read_tracks_jsonl, write_tracks_jsonl, TrackRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: unsupported camera model {model}", file.display())]
    UnsupportedModel {
        file: PathBuf,
        line: usize,
        model: String,
    },
    #[error("{}:{line}: {message}", file.display())]
    Integrity {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{} @ byte {offset}: unsupported: {message}", file.display())]
    Unsupported {
        file: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{} @ byte {offset}: {message}", file.display())]
    Data {
        file: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl IngestError {
    /// `(line, byte offset)` within the offending file, when known.
    pub fn location(&self) -> Option<(&Path, Option<usize>, Option<usize>)> {
        match self {
            Self::Parse { file, line, .. }
            | Self::UnsupportedModel { file, line, .. }
            | Self::Integrity { file, line, .. } => Some((file, Some(*line), None)),
            Self::Unsupported { file, offset, .. } | Self::Data { file, offset, .. } => {
                Some((file, None, Some(*offset)))
            }
            Self::Io { .. } | Self::Invalid(_) => None,
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    std::fs::write(path, bytes).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits a binary header into whitespace-separated tokens, skipping `#`
/// comments. Returns each token with its starting offset, plus the offset
/// just past the single whitespace byte that terminates the last token.
pub(crate) fn header_tokens(
    bytes: &[u8],
    count: usize,
) -> Option<(Vec<(usize, String)>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push((start, String::from_utf8_lossy(&bytes[start..i]).into_owned()));
    }
    if i >= bytes.len() {
        return None;
    }
    Some((tokens, i + 1))
}
