use std::path::Path;

use crate::motion::InstanceMask;

use super::{header_tokens, read_bytes, write_bytes, IngestError};

/// Decodes a binary `P5` mask with `maxval <= 255`.
pub fn parse_pgm_mask(bytes: &[u8], origin: &Path) -> Result<InstanceMask, IngestError> {
    let data_err = |offset: usize, message: String| IngestError::Data {
        file: origin.to_path_buf(),
        offset,
        message,
    };
    let (tokens, start) =
        header_tokens(bytes, 4).ok_or_else(|| data_err(0, "truncated PGM header".into()))?;
    if tokens[0].1 != "P5" {
        return Err(data_err(0, format!("bad PGM magic {:?}", tokens[0].1)));
    }
    let num = |i: usize| -> Result<u32, IngestError> {
        let (off, tok) = &tokens[i];
        tok.parse::<u32>()
            .ok()
            .filter(|&x| x > 0)
            .ok_or_else(|| data_err(*off, format!("invalid header value {tok:?}")))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval > 255 {
        return Err(IngestError::Unsupported {
            file: origin.to_path_buf(),
            offset: tokens[3].0,
            message: format!("16-bit PGM (maxval {maxval})"),
        });
    }
    let expected = width as usize * height as usize;
    let payload = &bytes[start..];
    if payload.len() != expected {
        return Err(data_err(
            start + payload.len().min(expected),
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    if let Some(i) = payload.iter().position(|&b| b as u32 > maxval) {
        return Err(data_err(start + i, format!("value {} exceeds maxval {maxval}", payload[i])));
    }
    InstanceMask::new(width, height, payload.to_vec()).map_err(|e| data_err(start, e.to_string()))
}

pub fn read_pgm_mask(path: &Path) -> Result<InstanceMask, IngestError> {
    parse_pgm_mask(&read_bytes(path)?, path)
}

pub fn encode_pgm(mask: &InstanceMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.data());
    out
}

pub fn write_pgm_mask(mask: &InstanceMask, path: &Path) -> Result<(), IngestError> {
    write_bytes(path, &encode_pgm(mask))
}
