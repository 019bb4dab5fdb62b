use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::motion::{InstanceTracks, TrackPoint};

use super::{read_bytes, write_bytes, IngestError};

/// One line of a tracks file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub instance: u32,
    pub keypoint: u64,
    pub frame: usize,
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

pub fn parse_tracks_jsonl(text: &str, origin: &Path) -> Result<Vec<InstanceTracks>, IngestError> {
    let mut groups: BTreeMap<u32, Vec<TrackPoint>> = BTreeMap::new();
    let mut seen: HashMap<(u32, usize, u64), usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrackRecord = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            file: origin.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        if r.instance == 0 {
            return Err(IngestError::Integrity {
                file: origin.to_path_buf(),
                line: lineno,
                message: "instance id 0 is reserved for background".into(),
            });
        }
        if let Some(first) = seen.insert((r.instance, r.frame, r.keypoint), lineno) {
            return Err(IngestError::Integrity {
                file: origin.to_path_buf(),
                line: lineno,
                message: format!(
                    "duplicate (instance {}, frame {}, keypoint {}) first seen on line {first}",
                    r.instance, r.frame, r.keypoint
                ),
            });
        }
        groups.entry(r.instance).or_default().push(TrackPoint {
            frame: r.frame,
            keypoint: r.keypoint,
            u: r.u,
            v: r.v,
            visible: r.visible,
        });
    }
    groups
        .into_iter()
        .map(|(id, pts)| {
            InstanceTracks::new(id, pts).map_err(|e| IngestError::Integrity {
                file: origin.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Tracks grouped by instance, ascending.
pub fn read_tracks_jsonl(path: &Path) -> Result<Vec<InstanceTracks>, IngestError> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| IngestError::Data {
        file: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
        message: "not valid UTF-8".into(),
    })?;
    parse_tracks_jsonl(&text, path)
}

pub fn write_tracks_jsonl(tracks: &[InstanceTracks], path: &Path) -> Result<(), IngestError> {
    let mut out = String::new();
    for t in tracks {
        for p in t.points() {
            let rec = TrackRecord {
                instance: t.instance_id(),
                keypoint: p.keypoint,
                frame: p.frame,
                u: p.u,
                v: p.v,
                visible: p.visible,
            };
            out.push_str(&serde_json::to_string(&rec).map_err(|e| IngestError::Invalid(e.to_string()))?);
            out.push('\n');
        }
    }
    write_bytes(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem.jsonl")
    }

    #[test]
    fn empty_and_single() {
        assert!(parse_tracks_jsonl("", p()).unwrap().is_empty());
        let one = r#"{"instance": 2, "keypoint": 5, "frame": 0, "u": 1.5, "v": 2.0, "visible": true}"#;
        let t = parse_tracks_jsonl(one, p()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].instance_id(), 2);
        assert_eq!(t[0].points().len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\"instance\":1,\"keypoint\":0,\"frame\":0,\"u\":0,\"v\":0,\"visible\":true}\n{oops\n";
        assert!(matches!(
            parse_tracks_jsonl(text, p()).unwrap_err(),
            IngestError::Parse { line: 2, .. }
        ));
        let dup = "{\"instance\":1,\"keypoint\":0,\"frame\":0,\"u\":0,\"v\":0,\"visible\":true}\n\
                   {\"instance\":1,\"keypoint\":0,\"frame\":0,\"u\":1,\"v\":1,\"visible\":false}\n";
        assert!(matches!(
            parse_tracks_jsonl(dup, p()).unwrap_err(),
            IngestError::Integrity { line: 2, .. }
        ));
    }

    #[test]
    fn grouping_matches_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut text = String::new();
        let mut oracle: HashMap<u32, Vec<(usize, u64)>> = HashMap::new();
        let mut used = std::collections::HashSet::new();
        while used.len() < 10_000 {
            let key = (rng.gen_range(1..8u32), rng.gen_range(0..40usize), rng.gen_range(0..500u64));
            if !used.insert(key) {
                continue;
            }
            oracle.entry(key.0).or_default().push((key.1, key.2));
            text.push_str(&format!(
                "{{\"instance\":{},\"keypoint\":{},\"frame\":{},\"u\":{},\"v\":{},\"visible\":{}}}\n",
                key.0,
                key.2,
                key.1,
                rng.gen_range(0.0..100.0f64),
                rng.gen_range(0.0..100.0f64),
                rng.gen_bool(0.8)
            ));
        }
        let tracks = parse_tracks_jsonl(&text, p()).unwrap();
        assert_eq!(tracks.len(), oracle.len());
        for t in &tracks {
            let mut want = oracle[&t.instance_id()].clone();
            want.sort();
            let got: Vec<_> = t.points().iter().map(|p| (p.frame, p.keypoint)).collect();
            assert_eq!(got, want);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_tracks_jsonl(&tracks, &path).unwrap();
        assert_eq!(read_tracks_jsonl(&path).unwrap(), tracks);
    }
}
