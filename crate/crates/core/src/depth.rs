//! Sparse SfM depth and median-based scale/shift alignment of relative depth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_pixel, project_point, Intrinsics, Point3, Pose};
use crate::motion::InstanceMask;

/// Default minimum number of sparse samples required to align a frame.
pub const DEFAULT_MIN_SAMPLES: usize = 50;

/// Threshold below which the median relative depth is considered degenerate.
pub const EPS_REL_MEDIAN: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("no sparse depth samples survived projection")]
    EmptySamples,
    #[error("median of an empty list")]
    EmptyMedian,
    #[error("non-finite value in median input")]
    NonFinite,
    #[error("insufficient sparse samples: {found} < {required}")]
    InsufficientSamples { found: usize, required: usize },
    #[error("median relative depth {0:e} at sample pixels is degenerate")]
    DegenerateRelativeDepth(f64),
    #[error("alignment failed: scale {0} is not positive")]
    AlignmentFailure(f64),
    #[error("invalid depth map: {0}")]
    InvalidMap(String),
    #[error("sample pixel ({u}, {v}) outside {width}x{height} raster")]
    SampleOutOfBounds {
        u: usize,
        v: usize,
        width: u32,
        height: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthKind {
    Relative,
    Aligned,
    GroundTruth,
}

/// Row-major depth raster.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    kind: DepthKind,
    pub frame_id: usize,
}

impl DepthMap {
    pub fn new(
        width: u32,
        height: u32,
        values: Vec<f64>,
        kind: DepthKind,
        frame_id: usize,
    ) -> Result<Self, DepthError> {
        if values.len() != width as usize * height as usize {
            return Err(DepthError::InvalidMap(format!(
                "{} values for a {width}x{height} raster",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(DepthError::InvalidMap(format!("non-finite value at index {i}")));
        }
        if kind == DepthKind::Relative {
            if let Some(i) = values.iter().position(|x| !(0.0..=1.0).contains(x)) {
                return Err(DepthError::InvalidMap(format!(
                    "relative depth {} at index {i} outside [0, 1]",
                    values[i]
                )));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            kind,
            frame_id,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn kind(&self) -> DepthKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width as usize + u]
    }

    /// Depth at the pixel nearest to `(u, v)`, if inside the raster.
    pub fn lookup(&self, u: f64, v: f64) -> Option<f64> {
        nearest_pixel(u, v, self.width, self.height).map(|(i, j)| self.get(i, j))
    }

    /// Reinterprets the raster as another kind (validated).
    pub fn with_kind(self, kind: DepthKind) -> Result<Self, DepthError> {
        Self::new(self.width, self.height, self.values, kind, self.frame_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseSample {
    pub u: usize,
    pub v: usize,
    pub depth: f64,
}

/// At most one sample per pixel, in row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthSamples {
    pub frame_id: usize,
    pub entries: Vec<SparseSample>,
}

impl SparseDepthSamples {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops samples on pixels the mask marks as (potentially) moving.
    pub fn without_masked(&self, mask: &InstanceMask) -> Self {
        Self {
            frame_id: self.frame_id,
            entries: self
                .entries
                .iter()
                .filter(|s| mask.get(s.u, s.v) == 0)
                .copied()
                .collect(),
        }
    }
}

/// Projects the cloud into the frame, keeping the nearest depth per rounded pixel.
pub fn rasterize_sparse_depth<'a>(
    points: impl IntoIterator<Item = &'a Point3>,
    pose: &Pose,
    intr: &Intrinsics,
    frame_id: usize,
) -> Result<SparseDepthSamples, DepthError> {
    let w = intr.width as usize;
    let mut zbuf = vec![f64::INFINITY; w * intr.height as usize];
    for p in points {
        let Ok(pr) = project_point(pose, intr, p) else {
            continue;
        };
        if let Some((u, v)) = nearest_pixel(pr.u, pr.v, intr.width, intr.height) {
            let cell = &mut zbuf[v * w + u];
            if pr.depth < *cell {
                *cell = pr.depth;
            }
        }
    }
    let entries: Vec<_> = zbuf
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .map(|(i, &depth)| SparseSample {
            u: i % w,
            v: i / w,
            depth,
        })
        .collect();
    if entries.is_empty() {
        return Err(DepthError::EmptySamples);
    }
    Ok(SparseDepthSamples { frame_id, entries })
}

/// Middle element (odd length) or mean of the two middle elements (even length).
pub fn median(values: &[f64]) -> Result<f64, DepthError> {
    if values.is_empty() {
        return Err(DepthError::EmptyMedian);
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(DepthError::NonFinite);
    }
    let mut buf = values.to_vec();
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return Ok(upper);
    }
    let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lower_max + upper) / 2.0)
}

/// Per-frame scale and shift mapping relative depth onto SfM depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub alpha: f64,
    pub beta: f64,
    pub n_samples: usize,
}

impl Alignment {
    pub fn apply(&self, rel: f64) -> f64 {
        self.alpha * rel + self.beta
    }
}

/// `α = median(d_sfm) / median(d_rel)`, `β = median(d_sfm − α·d_rel)`, both
/// medians over the sample pixels; returns the aligned raster `α·d_rel + β`.
pub fn align_depth(
    rel: &DepthMap,
    sparse: &SparseDepthSamples,
    min_samples: usize,
) -> Result<(Alignment, DepthMap), DepthError> {
    if rel.kind != DepthKind::Relative {
        return Err(DepthError::InvalidMap(format!(
            "expected relative depth, got {:?}",
            rel.kind
        )));
    }
    if sparse.len() < min_samples.max(1) {
        return Err(DepthError::InsufficientSamples {
            found: sparse.len(),
            required: min_samples.max(1),
        });
    }
    let mut sfm = Vec::with_capacity(sparse.len());
    let mut at_samples = Vec::with_capacity(sparse.len());
    for s in &sparse.entries {
        if s.u >= rel.width as usize || s.v >= rel.height as usize {
            return Err(DepthError::SampleOutOfBounds {
                u: s.u,
                v: s.v,
                width: rel.width,
                height: rel.height,
            });
        }
        sfm.push(s.depth);
        at_samples.push(rel.get(s.u, s.v));
    }
    let med_rel = median(&at_samples)?;
    if med_rel <= EPS_REL_MEDIAN {
        return Err(DepthError::DegenerateRelativeDepth(med_rel));
    }
    let alpha = median(&sfm)? / med_rel;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DepthError::AlignmentFailure(alpha));
    }
    let residuals: Vec<f64> = sfm
        .iter()
        .zip(&at_samples)
        .map(|(d, r)| d - alpha * r)
        .collect();
    let beta = median(&residuals)?;
    let alignment = Alignment {
        alpha,
        beta,
        n_samples: sparse.len(),
    };
    let values = rel.values.iter().map(|&r| alignment.apply(r)).collect();
    let aligned = DepthMap::new(rel.width, rel.height, values, DepthKind::Aligned, rel.frame_id)?;
    Ok((alignment, aligned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    fn samples(entries: &[(usize, usize, f64)]) -> SparseDepthSamples {
        SparseDepthSamples {
            frame_id: 0,
            entries: entries
                .iter()
                .map(|&(u, v, depth)| SparseSample { u, v, depth })
                .collect(),
        }
    }

    fn rel_map(w: u32, h: u32, at: &[(usize, usize, f64)]) -> DepthMap {
        let mut values = vec![0.0; (w * h) as usize];
        for &(u, v, r) in at {
            values[v * w as usize + u] = r;
        }
        DepthMap::new(w, h, values, DepthKind::Relative, 0).unwrap()
    }

    #[test]
    fn single_point_sample() {
        let pts = [Point3::new(0.0, 0.0, 2.0)];
        let s = rasterize_sparse_depth(&pts, &Pose::identity(), &cam(), 3).unwrap();
        assert_eq!(s.frame_id, 3);
        assert_eq!(s.entries, vec![SparseSample { u: 64, v: 64, depth: 2.0 }]);
    }

    #[test]
    fn nearest_depth_is_kept() {
        let pts = [Point3::new(0.0, 0.0, 3.0), Point3::new(0.0, 0.0, 2.0)];
        let s = rasterize_sparse_depth(&pts, &Pose::identity(), &cam(), 0).unwrap();
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].depth, 2.0);
    }

    #[test]
    fn empty_projection_is_an_error() {
        let pts = [Point3::new(0.0, 0.0, -3.0), Point3::new(100.0, 0.0, 1.0)];
        assert_eq!(
            rasterize_sparse_depth(&pts, &Pose::identity(), &cam(), 0),
            Err(DepthError::EmptySamples)
        );
    }

    #[test]
    fn rasterize_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = Pose::from_quaternion(
            [0.95, 0.05, 0.2, -0.1],
            crate::geometry::Vec3::new(0.3, -0.2, 1.0),
        )
        .unwrap();
        let intr = Intrinsics::new(60.0, 70.0, 31.5, 20.0, 64, 48).unwrap();
        let pts: Vec<Point3> = (0..1000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-2.0..10.0),
                )
            })
            .collect();
        let got = rasterize_sparse_depth(&pts, &pose, &intr, 0).unwrap();

        // Oracle: for every pixel, scan all points.
        let mut expected = Vec::new();
        for v in 0..48usize {
            for u in 0..64usize {
                let mut best = f64::INFINITY;
                for p in &pts {
                    let c = pose.rotation() * p.coords + pose.translation();
                    if c.z <= 1e-6 {
                        continue;
                    }
                    let pu = (60.0 * c.x / c.z + 31.5).round();
                    let pv = (70.0 * c.y / c.z + 20.0).round();
                    if pu == u as f64 && pv == v as f64 && c.z < best {
                        best = c.z;
                    }
                }
                if best.is_finite() {
                    expected.push(SparseSample { u, v, depth: best });
                }
            }
        }
        assert!(expected.len() > 100);
        assert_eq!(got.entries, expected);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[1.0, 3.0, 2.0]), Ok(2.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), Ok(2.5));
        assert_eq!(median(&[7.0]), Ok(7.0));
        assert_eq!(median(&[]), Err(DepthError::EmptyMedian));
        assert_eq!(median(&[1.0, f64::NAN]), Err(DepthError::NonFinite));
    }

    #[test]
    fn median_matches_sort_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [10_000usize, 9_999] {
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let expected = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            };
            assert_eq!(median(&xs).unwrap(), expected);
        }
    }

    #[test]
    fn proportional_samples_align_exactly() {
        let at = [(0, 0, 0.2), (1, 0, 0.4), (2, 0, 0.6)];
        let rel = rel_map(3, 1, &at);
        let sparse = samples(&[(0, 0, 2.0), (1, 0, 4.0), (2, 0, 6.0)]);
        let (a, aligned) = align_depth(&rel, &sparse, 3).unwrap();
        assert!((a.alpha - 10.0).abs() < 1e-12);
        assert!(a.beta.abs() < 1e-12);
        assert_eq!(a.n_samples, 3);
        assert_eq!(aligned.kind(), DepthKind::Aligned);
        for (i, d) in [2.0, 4.0, 6.0].iter().enumerate() {
            assert!((aligned.get(i, 0) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_samples_follow_the_medians() {
        let rel = rel_map(3, 1, &[(0, 0, 0.1), (1, 0, 0.3), (2, 0, 0.5)]);
        let sparse = samples(&[(0, 0, 3.0), (1, 0, 5.0), (2, 0, 7.0)]);
        let (a, aligned) = align_depth(&rel, &sparse, 3).unwrap();
        assert!((a.alpha - 5.0 / 0.3).abs() < 1e-12);
        assert!(a.beta.abs() < 1e-12);
        assert!((aligned.get(1, 0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_errors() {
        let rel = rel_map(3, 1, &[(0, 0, 0.1), (1, 0, 0.3), (2, 0, 0.5)]);
        let sparse = samples(&[(0, 0, 3.0), (1, 0, 5.0)]);
        assert_eq!(
            align_depth(&rel, &sparse, 50).unwrap_err(),
            DepthError::InsufficientSamples { found: 2, required: 50 }
        );
        let flat = rel_map(3, 1, &[]);
        let sparse = samples(&[(0, 0, 3.0), (1, 0, 5.0), (2, 0, 1.0)]);
        assert!(matches!(
            align_depth(&flat, &sparse, 1),
            Err(DepthError::DegenerateRelativeDepth(_))
        ));
        let oob = samples(&[(5, 0, 3.0)]);
        assert!(matches!(
            align_depth(&rel, &oob, 1),
            Err(DepthError::SampleOutOfBounds { .. })
        ));
        let not_rel = rel.clone().with_kind(DepthKind::Aligned).unwrap();
        assert!(align_depth(&not_rel, &samples(&[(0, 0, 1.0)]), 1).is_err());
    }

    #[test]
    fn zero_relative_samples_are_kept() {
        let rel = rel_map(3, 1, &[(1, 0, 0.5), (2, 0, 0.5)]);
        let sparse = samples(&[(0, 0, 1.0), (1, 0, 5.0), (2, 0, 5.0)]);
        let (a, _) = align_depth(&rel, &sparse, 3).unwrap();
        assert_eq!(a.n_samples, 3);
        assert!((a.alpha - 10.0).abs() < 1e-12);
    }

    #[test]
    fn relative_map_domain() {
        assert!(DepthMap::new(1, 1, vec![1.5], DepthKind::Relative, 0).is_err());
        assert!(DepthMap::new(1, 1, vec![-2.0], DepthKind::Aligned, 0).is_ok());
        assert!(DepthMap::new(1, 1, vec![f64::NAN], DepthKind::Aligned, 0).is_err());
        assert!(DepthMap::new(2, 1, vec![0.0], DepthKind::Aligned, 0).is_err());
    }

    #[test]
    fn masked_samples_are_dropped() {
        let mask = InstanceMask::new(2, 1, vec![0, 3]).unwrap();
        let s = samples(&[(0, 0, 1.0), (1, 0, 2.0)]).without_masked(&mask);
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].u, 0);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (5usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0.5f64..30.0, n),
            )
        })
    }

    fn case_inputs(rel: &[f64], sfm: &[f64]) -> (DepthMap, SparseDepthSamples) {
        let n = rel.len();
        let map = DepthMap::new(n as u32, 1, rel.to_vec(), DepthKind::Relative, 0).unwrap();
        let s = SparseDepthSamples {
            frame_id: 0,
            entries: sfm
                .iter()
                .enumerate()
                .map(|(u, &depth)| SparseSample { u, v: 0, depth })
                .collect(),
        };
        (map, s)
    }

    proptest! {
        #[test]
        fn scale_equivariance((rel, sfm) in arb_case(), s in 0.1f64..10.0) {
            let (map, sparse) = case_inputs(&rel, &sfm);
            let scaled: Vec<f64> = sfm.iter().map(|d| d * s).collect();
            let (_, sparse_s) = case_inputs(&rel, &scaled);
            let (a, da) = align_depth(&map, &sparse, 1).unwrap();
            let (b, db) = align_depth(&map, &sparse_s, 1).unwrap();
            prop_assert!((b.alpha - s * a.alpha).abs() <= 1e-12 * b.alpha.abs());
            prop_assert!((b.beta - s * a.beta).abs() <= 1e-9 * (1.0 + b.alpha));
            for (x, y) in da.values().iter().zip(db.values()) {
                prop_assert!((y - s * x).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn permutation_invariance((rel, sfm) in arb_case(), seed in any::<u64>()) {
            let (map, sparse) = case_inputs(&rel, &sfm);
            let mut shuffled = sparse.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            shuffled.entries.shuffle(&mut rng);
            let (a, _) = align_depth(&map, &sparse, 1).unwrap();
            let (b, _) = align_depth(&map, &shuffled, 1).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
