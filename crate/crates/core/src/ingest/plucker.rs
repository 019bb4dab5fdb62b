//! PLK1: `b"PLK1"`, then little-endian `u32` frame count, height, width,
//! then `frames × height × width × 6` little-endian `f32` values (frame-major,
//! row-major, channel-last). A JSON sidecar with the same stem lists frame names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::PluckerMap;

use super::{read_bytes, write_bytes, IngestError};

pub const PLUCKER_MAGIC: &[u8; 4] = b"PLK1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PluckerTensor {
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub data: Vec<f32>,
}

impl PluckerTensor {
    pub fn from_maps(maps: &[PluckerMap]) -> Result<Self, IngestError> {
        let first = maps
            .first()
            .ok_or_else(|| IngestError::Invalid("no frames to write".into()))?;
        let (width, height) = (first.width, first.height);
        let mut data = Vec::with_capacity(maps.len() * first.data.len());
        for (i, m) in maps.iter().enumerate() {
            if (m.width, m.height) != (width, height) {
                return Err(IngestError::Invalid(format!(
                    "frame {i} is {}x{}, expected {width}x{height}",
                    m.width, m.height
                )));
            }
            data.extend(m.data.iter().map(|&x| x as f32));
        }
        Ok(Self {
            frames: maps.len() as u32,
            height,
            width,
            data,
        })
    }

    /// The six channels of pixel `(u, v)` in `frame`.
    pub fn ray(&self, frame: usize, u: usize, v: usize) -> &[f32] {
        let idx = ((frame * self.height as usize + v) * self.width as usize + u) * 6;
        &self.data[idx..idx + 6]
    }

    /// Bitwise equality, so NaN payloads compare too.
    pub fn bit_eq(&self, other: &Self) -> bool {
        (self.frames, self.height, self.width) == (other.frames, other.height, other.width)
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    frames: Vec<String>,
    height: u32,
    width: u32,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_plucker(t: &PluckerTensor) -> Result<Vec<u8>, IngestError> {
    let expected = t.frames as usize * t.height as usize * t.width as usize * 6;
    if t.data.len() != expected {
        return Err(IngestError::Invalid(format!(
            "tensor has {} values, header implies {expected}",
            t.data.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * expected);
    out.extend_from_slice(PLUCKER_MAGIC);
    for x in [t.frames, t.height, t.width] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_plucker(bytes: &[u8], origin: &Path) -> Result<PluckerTensor, IngestError> {
    let data_err = |offset: usize, message: String| IngestError::Data {
        file: origin.to_path_buf(),
        offset,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(data_err(bytes.len(), "truncated PLK1 header".into()));
    }
    if &bytes[..4] != PLUCKER_MAGIC {
        return Err(data_err(0, "bad magic; expected PLK1".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (frames, height, width) = (word(0), word(1), word(2));
    let count = (frames as u64) * (height as u64) * (width as u64) * 6;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != count * 4 {
        return Err(data_err(
            HEADER_LEN,
            format!("expected {} payload bytes, found {}", count * 4, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(PluckerTensor {
        frames,
        height,
        width,
        data,
    })
}

/// Writes the binary tensor and its `.json` sidecar of frame names.
pub fn write_plucker(t: &PluckerTensor, names: &[String], path: &Path) -> Result<(), IngestError> {
    if names.len() != t.frames as usize {
        return Err(IngestError::Invalid(format!(
            "{} frame names for {} frames",
            names.len(),
            t.frames
        )));
    }
    write_bytes(path, &encode_plucker(t)?)?;
    let sidecar = Sidecar {
        format: "PLK1".into(),
        frames: names.to_vec(),
        height: t.height,
        width: t.width,
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| IngestError::Invalid(e.to_string()))?;
    write_bytes(&sidecar_path(path), json.as_bytes())
}

/// Reads the tensor and, when present, the sidecar frame names.
pub fn read_plucker(path: &Path) -> Result<(PluckerTensor, Option<Vec<String>>), IngestError> {
    let tensor = decode_plucker(&read_bytes(path)?, path)?;
    let side = sidecar_path(path);
    let names = if side.exists() {
        let text = read_bytes(&side)?;
        let s: Sidecar = serde_json::from_slice(&text).map_err(|e| IngestError::Parse {
            file: side.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Some(s.frames)
    } else {
        None
    };
    Ok((tensor, names))
}
