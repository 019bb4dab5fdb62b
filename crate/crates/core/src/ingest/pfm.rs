use std::path::Path;

use crate::depth::{DepthKind, DepthMap};

use super::{header_tokens, read_bytes, write_bytes, IngestError};

/// Decodes a grayscale PFM. Rows are stored bottom-to-top on disk and
/// returned top-to-bottom.
pub fn parse_pfm(bytes: &[u8], kind: DepthKind, origin: &Path) -> Result<DepthMap, IngestError> {
    let data_err = |offset: usize, message: String| IngestError::Data {
        file: origin.to_path_buf(),
        offset,
        message,
    };
    let (tokens, start) =
        header_tokens(bytes, 4).ok_or_else(|| data_err(0, "truncated PFM header".into()))?;
    match tokens[0].1.as_str() {
        "Pf" => {}
        "PF" => {
            return Err(IngestError::Unsupported {
                file: origin.to_path_buf(),
                offset: tokens[0].0,
                message: "colour PFM (PF); only grayscale Pf is supported".into(),
            })
        }
        other => return Err(data_err(0, format!("bad PFM magic {other:?}"))),
    }
    let dim = |i: usize| -> Result<u32, IngestError> {
        let (off, tok) = &tokens[i];
        match tok.parse::<u32>() {
            Ok(x) if x > 0 => Ok(x),
            _ => Err(data_err(*off, format!("invalid dimension {tok:?}"))),
        }
    };
    let (width, height) = (dim(1)?, dim(2)?);
    let (scale_off, scale_tok) = &tokens[3];
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| data_err(*scale_off, format!("invalid scale {scale_tok:?}")))?;
    let little_endian = scale < 0.0;

    let (w, h) = (width as usize, height as usize);
    let expected = w * h * 4;
    let payload = &bytes[start..];
    if payload.len() != expected {
        return Err(data_err(
            start + payload.len().min(expected),
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let mut values = vec![0.0f64; w * h];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let x = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !x.is_finite() {
            return Err(data_err(start + 4 * k, format!("non-finite value {x}")));
        }
        let (row_on_disk, col) = (k / w, k % w);
        values[(h - 1 - row_on_disk) * w + col] = x as f64;
    }
    DepthMap::new(width, height, values, kind, 0).map_err(|e| data_err(start, e.to_string()))
}

pub fn read_pfm(path: &Path, kind: DepthKind) -> Result<DepthMap, IngestError> {
    parse_pfm(&read_bytes(path)?, kind, path)
}

/// Little-endian `Pf` with header `Pf\n<W> <H>\n-1.0\n`; values are stored as f32.
pub fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let (w, h) = (map.width() as usize, map.height() as usize);
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width(), map.height()).into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&(map.get(col, row) as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(map: &DepthMap, path: &Path) -> Result<(), IngestError> {
    write_bytes(path, &encode_pfm(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.pfm")
    }

    #[test]
    fn one_pixel() {
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        let m = parse_pfm(&bytes, DepthKind::Relative, p()).unwrap();
        assert_eq!(m.values(), &[0.5]);
        assert_eq!(encode_pfm(&m), bytes);
    }

    #[test]
    fn rows_are_flipped() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for x in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let m = parse_pfm(&bytes, DepthKind::Aligned, p()).unwrap();
        // first stored row is the bottom row
        assert_eq!(m.values(), &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(encode_pfm(&m), bytes);
    }

    #[test]
    fn big_endian_is_read() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        let m = parse_pfm(&bytes, DepthKind::Aligned, p()).unwrap();
        assert_eq!(m.values(), &[2.5]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut colour = b"PF\n1 1\n-1.0\n".to_vec();
        colour.extend_from_slice(&[0; 12]);
        assert!(matches!(
            parse_pfm(&colour, DepthKind::Aligned, p()),
            Err(IngestError::Unsupported { .. })
        ));
        let mut nan = b"Pf\n1 1\n-1.0\n".to_vec();
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            parse_pfm(&nan, DepthKind::Aligned, p()),
            Err(IngestError::Data { offset: 12, .. })
        ));
        let short = b"Pf\n2 2\n-1.0\n\0\0\0\0".to_vec();
        assert!(matches!(
            parse_pfm(&short, DepthKind::Aligned, p()),
            Err(IngestError::Data { .. })
        ));
    }

    #[test]
    fn ramp_matches_generator() {
        let (w, h) = (64u32, 64u32);
        let ramp = |u: usize, v: usize| (u + 64 * v) as f32 / 4096.0;
        let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
        for row in (0..64).rev() {
            for col in 0..64 {
                bytes.extend_from_slice(&ramp(col, row).to_le_bytes());
            }
        }
        let m = parse_pfm(&bytes, DepthKind::Relative, p()).unwrap();
        for v in 0..64 {
            for u in 0..64 {
                assert_eq!(m.get(u, v), ramp(u, v) as f64);
            }
        }
    }
}
