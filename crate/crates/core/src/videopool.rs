//! Video-level aggregation of per-frame Fisher vectors: average pooling (AP),
//! hierarchical average pooling (HAP), video-wide rank pooling (RP), and
//! kernel-averaging fusion of several representations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encode::power_l2_normalize;
use crate::error::{EptError, Result};
use crate::trajpool::{approx_rank_pool, FeatureSequence};
use crate::types::Direction;

/// Per-frame unnormalized FVs φ₁..φ_T, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFvSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FrameFvSequence {
    pub fn from_flat(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(EptError::validation("frame FV sequence needs T >= 1 and dim >= 1"));
        }
        if data.len() != frames * dim {
            return Err(EptError::SizeMismatch {
                expected: frames * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EptError::validation("frame FV sequence has non-finite entries"));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(EptError::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        Self::from_flat(rows.len(), dim, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    fn sum_range(&self, start: usize, end: usize) -> Vec<f64> {
        let mut acc = vec![0f64; self.dim];
        for t in start..end {
            acc.iter_mut().zip(self.row(t)).for_each(|(a, x)| *a += x);
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ap,
    Hap,
    RpForward,
    RpBackward,
    Fused,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Ap => "AP",
            Provenance::Hap => "HAP",
            Provenance::RpForward => "RP_forward",
            Provenance::RpBackward => "RP_backward",
            Provenance::Fused => "fused",
        })
    }
}

/// Video-level pooling method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoPoolMethod {
    Ap,
    Hap,
    Rp,
}

impl FromStr for VideoPoolMethod {
    type Err = EptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" => Ok(VideoPoolMethod::Ap),
            "hap" => Ok(VideoPoolMethod::Hap),
            "rp" => Ok(VideoPoolMethod::Rp),
            other => Err(EptError::Config(format!("unknown video pooling `{other}`"))),
        }
    }
}

impl fmt::Display for VideoPoolMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VideoPoolMethod::Ap => "ap",
            VideoPoolMethod::Hap => "hap",
            VideoPoolMethod::Rp => "rp",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Set when the pooled vector is all-zero (nothing to normalize).
    pub degenerate: bool,
}

impl VideoVector {
    fn normalized(raw: Vec<f64>, alpha: f64, provenance: Provenance) -> Self {
        let values = power_l2_normalize(&raw, alpha);
        let degenerate = values.iter().all(|&v| v == 0.0);
        if degenerate {
            log::warn!("{provenance} pooling produced an all-zero video vector");
        }
        Self {
            values,
            provenance,
            degenerate,
        }
    }

    /// Wraps a vector read from disk; marks all-zero input degenerate.
    pub fn from_values(values: Vec<f64>, provenance: Provenance) -> Self {
        let degenerate = values.iter().all(|&v| v == 0.0);
        Self {
            values,
            provenance,
            degenerate,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// norm(Σ_t φ_t).
pub fn video_ap(seq: &FrameFvSequence, alpha: f64) -> VideoVector {
    VideoVector::normalized(seq.sum_range(0, seq.frames()), alpha, Provenance::Ap)
}

/// Half-open frame ranges visited by HAP. Windows start every `stride`
/// frames; the first window reaching the end is truncated there and is the
/// last one.
pub fn hap_windows(frames: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(frames);
        out.push((start, end));
        if end >= frames {
            break;
        }
        start += stride;
    }
    out
}

/// L2(Σ_windows norm(Σ_{t∈window} φ_t)). Window vectors are already power
/// normalized, so the outer step is L2 only; a second power step would make
/// a single-window HAP differ from AP.
pub fn video_hap(seq: &FrameFvSequence, window: usize, stride: usize, alpha: f64) -> Result<VideoVector> {
    if window == 0 || stride == 0 {
        return Err(EptError::Config("HAP window and stride must be >= 1".into()));
    }
    let windows = hap_windows(seq.frames(), window, stride);
    if let [(s, e)] = windows[..] {
        return Ok(VideoVector::normalized(seq.sum_range(s, e), alpha, Provenance::Hap));
    }
    let mut acc = vec![0f64; seq.dim()];
    for (s, e) in windows {
        let pooled = power_l2_normalize(&seq.sum_range(s, e), alpha);
        acc.iter_mut().zip(&pooled).for_each(|(a, p)| *a += p);
    }
    Ok(VideoVector::normalized(acc, 1.0, Provenance::Hap))
}

/// Approximate rank pooling over the frame sequence, then power/L2 norm.
pub fn video_rp(seq: &FrameFvSequence, direction: Direction, alpha: f64) -> VideoVector {
    let provenance = match direction {
        Direction::Forward => Provenance::RpForward,
        Direction::Backward => Provenance::RpBackward,
    };
    let fs = FeatureSequence::from_flat(seq.frames(), seq.dim(), seq.as_flat().to_vec())
        .expect("frame sequence already validated");
    let fs = match direction {
        Direction::Forward => fs,
        Direction::Backward => fs.reversed(),
    };
    VideoVector::normalized(approx_rank_pool(&fs), alpha, provenance)
}

pub fn video_pool(
    seq: &FrameFvSequence,
    method: VideoPoolMethod,
    window: usize,
    stride: usize,
    direction: Direction,
    alpha: f64,
) -> Result<VideoVector> {
    match method {
        VideoPoolMethod::Ap => Ok(video_ap(seq, alpha)),
        VideoPoolMethod::Hap => video_hap(seq, window, stride, alpha),
        VideoPoolMethod::Rp => Ok(video_rp(seq, direction, alpha)),
    }
}

const UNIT_NORM_TOL: f64 = 1e-6;

/// Concatenates √(wᵢ/Σw)·vᵢ, so inner products of fused vectors are the
/// weighted average of block inner products (linear-kernel averaging).
pub fn fuse(vectors: &[VideoVector], weights: Option<&[f64]>) -> Result<VideoVector> {
    if vectors.is_empty() {
        return Err(EptError::validation("nothing to fuse"));
    }
    let uniform = vec![1.0; vectors.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != vectors.len() {
        return Err(EptError::DimensionMismatch {
            expected: vectors.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(EptError::Config("fusion weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut values = Vec::with_capacity(vectors.iter().map(VideoVector::dim).sum());
    let mut degenerate = false;
    for (v, w) in vectors.iter().zip(weights) {
        let n = v.norm();
        if n == 0.0 {
            degenerate = true;
        } else if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(EptError::validation(format!(
                "fusion input ({}) has norm {n}, expected 1",
                v.provenance
            )));
        }
        let s = (w / total).sqrt();
        values.extend(v.values.iter().map(|x| s * x));
    }
    Ok(VideoVector {
        values,
        provenance: Provenance::Fused,
        degenerate,
    })
}

/// Fuses block lists for many videos, requiring every video to present the
/// same block layout.
pub fn fuse_videos(videos: &[Vec<VideoVector>], weights: Option<&[f64]>) -> Result<Vec<VideoVector>> {
    let layout: Vec<usize> = match videos.first() {
        Some(v) => v.iter().map(VideoVector::dim).collect(),
        None => return Ok(Vec::new()),
    };
    videos
        .iter()
        .map(|blocks| {
            if blocks.len() != layout.len() {
                return Err(EptError::DimensionMismatch {
                    expected: layout.len(),
                    found: blocks.len(),
                });
            }
            for (b, &d) in blocks.iter().zip(&layout) {
                if b.dim() != d {
                    return Err(EptError::DimensionMismatch {
                        expected: d,
                        found: b.dim(),
                    });
                }
            }
            fuse(blocks, weights)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq<R: AsRef<[f64]>>(rows: &[R]) -> FrameFvSequence {
        FrameFvSequence::from_rows(&rows.iter().map(|r| r.as_ref().to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn ap_examples() {
        let one = seq(&[&[4.0, -9.0]]);
        assert_eq!(video_ap(&one, 0.5).values, power_l2_normalize(&[4.0, -9.0], 0.5));
        let constant = seq(&[&[1.0, 2.0, -3.0]; 7]);
        assert!(close(&video_ap(&constant, 0.5).values, &power_l2_normalize(&[1.0, 2.0, -3.0], 0.5), 1e-12));
        let zero = video_ap(&seq(&[&[0.0, 0.0]; 3]), 0.5);
        assert!(zero.degenerate);
    }

    #[test]
    fn hap_window_layout() {
        assert_eq!(hap_windows(3, 20, 1), vec![(0, 3)]);
        assert_eq!(hap_windows(3, 2, 1), vec![(0, 2), (1, 3)]);
        assert_eq!(hap_windows(23, 20, 5), vec![(0, 20), (5, 23)]);
        assert_eq!(hap_windows(40, 20, 1).len(), 21);
    }

    #[test]
    fn hap_short_video_equals_ap() {
        let s = seq(&[&[1.0, 0.5], &[-2.0, 3.0], &[0.25, 0.0]]);
        assert_eq!(video_hap(&s, 20, 1, 0.5).unwrap().values, video_ap(&s, 0.5).values);
        assert!(video_hap(&s, 0, 1, 0.5).is_err());
    }

    #[test]
    fn hap_two_windows_by_hand() {
        let s = seq(&[&[1.0, 0.0], &[0.0, 4.0], &[9.0, 1.0]]);
        let n = |v: &[f64]| power_l2_normalize(v, 0.5);
        let w1 = n(&[1.0, 4.0]);
        let w2 = n(&[9.0, 5.0]);
        let expect = power_l2_normalize(&[w1[0] + w2[0], w1[1] + w2[1]], 1.0);
        assert!(close(&video_hap(&s, 2, 1, 0.5).unwrap().values, &expect, 1e-15));
    }

    #[test]
    fn hap_constant_rows_equal_ap() {
        let s = seq(&[&[0.3, -0.7, 2.0]; 30]);
        assert!(close(&video_hap(&s, 20, 1, 0.5).unwrap().values, &video_ap(&s, 0.5).values, 1e-12));
    }

    #[test]
    fn rp_constant_and_single_frame_are_degenerate() {
        let c = video_rp(&seq(&[&[0.3, -0.7, 2.0]; 9]), Direction::Forward, 0.5);
        assert!(c.degenerate && c.values.iter().all(|&v| v == 0.0));
        assert!(video_rp(&seq(&[&[1.0, 2.0]]), Direction::Backward, 0.5).degenerate);
    }

    #[test]
    fn rp_follows_drift_and_is_order_sensitive() {
        let rows: Vec<Vec<f64>> = (0..12).map(|t| vec![1.0, 0.1 * t as f64, 0.5]).collect();
        let s = FrameFvSequence::from_rows(&rows).unwrap();
        let fwd = video_rp(&s, Direction::Forward, 0.5);
        assert!(!fwd.degenerate);
        assert!(fwd.values[1] > 0.0);
        let bwd = video_rp(&s, Direction::Backward, 0.5);
        assert!(bwd.values[1] < 0.0);
        assert_eq!(video_rp(&s, Direction::Forward, 0.5), fwd);
        assert_eq!(fwd.provenance, Provenance::RpForward);
    }

    #[test]
    fn fusion_kernel_average() {
        let a = VideoVector::from_values(vec![0.6, 0.8], Provenance::Ap);
        let b = VideoVector::from_values(vec![0.0, 1.0, 0.0], Provenance::Hap);
        let a2 = VideoVector::from_values(vec![1.0, 0.0], Provenance::Ap);
        let b2 = VideoVector::from_values(vec![0.0, 0.6, 0.8], Provenance::Hap);
        let f1 = fuse(&[a.clone(), b.clone()], None).unwrap();
        let f2 = fuse(&[a2.clone(), b2.clone()], None).unwrap();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        assert!((dot(&f1.values, &f1.values) - 1.0).abs() < 1e-12);
        let expect = 0.5 * (dot(&a.values, &a2.values) + dot(&b.values, &b2.values));
        assert!((dot(&f1.values, &f2.values) - expect).abs() < 1e-12);
        let same = fuse(&[a.clone(), a.clone()], None).unwrap();
        assert!((dot(&same.values, &same.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_errors() {
        let a = VideoVector::from_values(vec![0.6, 0.8], Provenance::Ap);
        let bad = VideoVector::from_values(vec![2.0, 0.0], Provenance::Ap);
        assert!(fuse(&[a.clone(), bad], None).is_err());
        assert!(fuse(std::slice::from_ref(&a), Some(&[-1.0])).is_err());
        let short = VideoVector::from_values(vec![1.0], Provenance::Hap);
        let r = fuse_videos(&[vec![a.clone(), a.clone()], vec![a.clone(), short]], None);
        assert!(matches!(r, Err(EptError::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn ap_and_hap_scale_and_order_properties(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 1..30),
            s in 0.01f64..100.0,
        ) {
            let a = FrameFvSequence::from_rows(&rows).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * s).collect()).collect();
            let b = FrameFvSequence::from_rows(&scaled).unwrap();
            prop_assert!(close(&video_ap(&a, 0.5).values, &video_ap(&b, 0.5).values, 1e-9));
            prop_assert!(close(
                &video_hap(&a, 5, 2, 0.5).unwrap().values,
                &video_hap(&b, 5, 2, 0.5).unwrap().values,
                1e-9
            ));
            let mut permuted = rows.clone();
            permuted.reverse();
            let p = FrameFvSequence::from_rows(&permuted).unwrap();
            prop_assert!(close(&video_ap(&a, 0.5).values, &video_ap(&p, 0.5).values, 1e-9));
        }
    }
}
