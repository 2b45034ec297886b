//! Domain types shared by every stage: feature-map volumes, trajectories,
//! descriptor sets and label tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EptError, Result};

/// Default number of points per trajectory (a 15-frame temporal span).
pub const DEFAULT_TRAJECTORY_LEN: usize = 16;

/// Which network stream produced a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Spatial,
    Temporal,
}

impl Stream {
    pub fn code(self) -> u32 {
        match self {
            Stream::Spatial => 0,
            Stream::Temporal => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Stream::Spatial),
            1 => Some(Stream::Temporal),
            _ => None,
        }
    }
}

/// How a trajectory's feature sequence is collapsed into one descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingKind {
    Average,
    ExactRank,
    ApproxRank,
}

impl PoolingKind {
    pub fn code(self) -> u32 {
        match self {
            PoolingKind::Average => 0,
            PoolingKind::ExactRank => 1,
            PoolingKind::ApproxRank => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(PoolingKind::Average),
            1 => Some(PoolingKind::ExactRank),
            2 => Some(PoolingKind::ApproxRank),
            _ => None,
        }
    }

    pub fn is_rank(self) -> bool {
        !matches!(self, PoolingKind::Average)
    }
}

impl FromStr for PoolingKind {
    type Err = EptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(PoolingKind::Average),
            "exact-rank" | "exact_rank" => Ok(PoolingKind::ExactRank),
            "approx-rank" | "approx_rank" => Ok(PoolingKind::ApproxRank),
            other => Err(EptError::Config(format!("unknown pooling kind `{other}`"))),
        }
    }
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingKind::Average => "average",
            PoolingKind::ExactRank => "exact-rank",
            PoolingKind::ApproxRank => "approx-rank",
        })
    }
}

/// Temporal direction in which a sequence is pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn code(self) -> u32 {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Direction::Forward),
            1 => Some(Direction::Backward),
            _ => None,
        }
    }
}

impl FromStr for Direction {
    type Err = EptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(EptError::Config(format!("unknown direction `{other}`"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// Shape of a feature-map volume plus the pixel geometry of its source video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VolumeGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub video_height: usize,
    pub video_width: usize,
}

impl VolumeGeometry {
    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("video_height", self.video_height),
            ("video_width", self.video_width),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(EptError::validation(format!("volume {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// A T×H×W×C block of convolutional activations, stored in (t, y, x, c) order.
///
/// Immutable once constructed; every constructor checks dims and finiteness.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapVolume {
    geom: VolumeGeometry,
    stream: Stream,
    layer_tag: String,
    scale_tag: String,
    data: Vec<f32>,
}

impl FeatureMapVolume {
    pub fn new(
        geom: VolumeGeometry,
        stream: Stream,
        layer_tag: impl Into<String>,
        scale_tag: impl Into<String>,
        data: Vec<f32>,
    ) -> Result<Self> {
        geom.validate()?;
        if data.len() != geom.len() {
            return Err(EptError::SizeMismatch {
                expected: geom.len(),
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EptError::validation(format!(
                "non-finite activation at flat index {pos}"
            )));
        }
        Ok(Self {
            geom,
            stream,
            layer_tag: layer_tag.into(),
            scale_tag: scale_tag.into(),
            data,
        })
    }

    /// Same metadata, new payload.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(
            self.geom,
            self.stream,
            self.layer_tag.clone(),
            self.scale_tag.clone(),
            data,
        )
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geom
    }

    pub fn frames(&self) -> usize {
        self.geom.frames
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn channels(&self) -> usize {
        self.geom.channels
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn layer_tag(&self) -> &str {
        &self.layer_tag
    }

    pub fn scale_tag(&self) -> &str {
        &self.scale_tag
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Flat offset of the first channel of voxel (t, y, x).
    #[inline]
    pub fn offset(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.geom.height + y) * self.geom.width + x) * self.geom.channels
    }

    /// Channel vector at voxel (t, y, x).
    #[inline]
    pub fn voxel(&self, t: usize, y: usize, x: usize) -> &[f32] {
        let o = self.offset(t, y, x);
        &self.data[o..o + self.geom.channels]
    }
}

/// A point in video pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A tracked point sequence covering `points.len()` consecutive frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u32,
    pub start_frame: usize,
    pub spatial_scale: f64,
    pub points: Vec<Point>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Last frame covered (inclusive).
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.points.len().saturating_sub(1)
    }

    /// Frame the trajectory is assigned to for per-frame encoding: the middle
    /// frame of its span, rounding down for even lengths.
    pub fn middle_frame(&self) -> usize {
        self.start_frame + (self.points.len().saturating_sub(1)) / 2
    }

    pub fn validate(&self, geom: &VolumeGeometry, expected_len: usize) -> Result<()> {
        if self.points.len() != expected_len {
            return Err(EptError::validation(format!(
                "trajectory {} has {} points, expected {expected_len}",
                self.id,
                self.points.len()
            )));
        }
        if self.points.is_empty() {
            return Err(EptError::validation(format!("trajectory {} is empty", self.id)));
        }
        if self.end_frame() >= geom.frames {
            return Err(EptError::Range(format!(
                "trajectory {} spans frames {}..={} but volume has {} frames",
                self.id,
                self.start_frame,
                self.end_frame(),
                geom.frames
            )));
        }
        if !(self.spatial_scale.is_finite() && self.spatial_scale >= 0.0) {
            return Err(EptError::validation(format!(
                "trajectory {} has invalid scale {}",
                self.id, self.spatial_scale
            )));
        }
        let (w, h) = (geom.video_width as f64, geom.video_height as f64);
        for (i, p) in self.points.iter().enumerate() {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && p.x >= 0.0
                && p.x < w
                && p.y >= 0.0
                && p.y < h;
            if !inside {
                return Err(EptError::validation(format!(
                    "trajectory {}: point {i} ({}, {}) outside [0, {w}) x [0, {h})",
                    self.id, p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// One pooled trajectory descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRow {
    pub trajectory_id: u32,
    pub assigned_frame: u32,
    pub vector: Vec<f32>,
}

/// A bag of fixed-dimension descriptors produced by one pooling configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    pub dim: usize,
    pub pooling: PoolingKind,
    pub direction: Direction,
    pub rows: Vec<DescriptorRow>,
}

impl DescriptorSet {
    pub fn empty(dim: usize, pooling: PoolingKind, direction: Direction) -> Self {
        Self {
            dim,
            pooling,
            direction,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self, frames: Option<usize>) -> Result<()> {
        for row in &self.rows {
            if row.vector.len() != self.dim {
                return Err(EptError::DimensionMismatch {
                    expected: self.dim,
                    found: row.vector.len(),
                });
            }
            if row.vector.iter().any(|v| !v.is_finite()) {
                return Err(EptError::validation(format!(
                    "descriptor for trajectory {} has non-finite entries",
                    row.trajectory_id
                )));
            }
            if let Some(t) = frames {
                if row.assigned_frame as usize >= t {
                    return Err(EptError::Range(format!(
                        "descriptor for trajectory {} assigned to frame {} of {t}",
                        row.trajectory_id, row.assigned_frame
                    )));
                }
            }
        }
        Ok(())
    }

    /// Descriptor vectors widened to f64.
    pub fn vectors_f64(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.vector.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = EptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(EptError::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoLabel {
    /// One entry for single-label data; several for multi-label videos.
    pub classes: Vec<usize>,
    pub split: Split,
}

/// Video id → labels and split. Ids iterate in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledVideoTable {
    num_classes: usize,
    entries: BTreeMap<String, VideoLabel>,
}

impl LabeledVideoTable {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            entries: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn insert(&mut self, id: impl Into<String>, classes: Vec<usize>, split: Split) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(EptError::validation(format!("invalid video id `{id}`")));
        }
        if classes.is_empty() {
            return Err(EptError::validation(format!("video `{id}` has no label")));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.num_classes) {
            return Err(EptError::validation(format!(
                "video `{id}` label {c} outside {} classes",
                self.num_classes
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(EptError::validation(format!("duplicate video id `{id}`")));
        }
        self.entries.insert(id, VideoLabel { classes, split });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&VideoLabel> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VideoLabel)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.iter()
            .filter(|(_, l)| l.split == split)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_single_label(&self) -> bool {
        self.entries.values().all(|l| l.classes.len() == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> VolumeGeometry {
        VolumeGeometry {
            frames: 20,
            height: 4,
            width: 4,
            channels: 2,
            video_height: 40,
            video_width: 40,
        }
    }

    fn traj(start: usize, n: usize, x: f64) -> Trajectory {
        Trajectory {
            id: 3,
            start_frame: start,
            spatial_scale: 1.0,
            points: vec![Point::new(x, 5.0); n],
        }
    }

    #[test]
    fn volume_rejects_bad_len_and_nan() {
        let g = geom();
        assert!(matches!(
            FeatureMapVolume::new(g, Stream::Spatial, "", "", vec![0.0; 5]),
            Err(EptError::SizeMismatch { .. })
        ));
        let mut data = vec![0.0; g.len()];
        data[7] = f32::NAN;
        assert!(FeatureMapVolume::new(g, Stream::Spatial, "", "", data).is_err());
        let zero_dim = VolumeGeometry { channels: 0, ..g };
        assert!(FeatureMapVolume::new(zero_dim, Stream::Spatial, "", "", vec![]).is_err());
    }

    #[test]
    fn voxel_indexing_is_tyxc() {
        let g = VolumeGeometry {
            frames: 2,
            height: 2,
            width: 3,
            channels: 2,
            video_height: 2,
            video_width: 3,
        };
        let data: Vec<f32> = (0..g.len()).map(|i| i as f32).collect();
        let v = FeatureMapVolume::new(g, Stream::Temporal, "conv3", "360p", data).unwrap();
        assert_eq!(v.voxel(0, 0, 0), &[0.0, 1.0]);
        assert_eq!(v.voxel(0, 0, 1), &[2.0, 3.0]);
        assert_eq!(v.voxel(0, 1, 0), &[6.0, 7.0]);
        assert_eq!(v.voxel(1, 0, 0), &[12.0, 13.0]);
    }

    #[test]
    fn trajectory_bounds() {
        let g = geom();
        assert!(traj(4, 16, 10.0).validate(&g, 16).is_ok());
        assert!(matches!(traj(5, 16, 10.0).validate(&g, 16), Err(EptError::Range(_))));
        assert!(traj(0, 15, 10.0).validate(&g, 16).is_err());
        // x == video_width is outside the half-open range
        let err = traj(0, 16, 40.0).validate(&g, 16).unwrap_err();
        assert!(err.to_string().contains("trajectory 3"));
    }

    #[test]
    fn middle_frame_is_eighth_of_sixteen() {
        assert_eq!(traj(3, 16, 1.0).middle_frame(), 10);
        assert_eq!(traj(0, 1, 1.0).middle_frame(), 0);
    }

    #[test]
    fn label_table_rules() {
        let mut t = LabeledVideoTable::new(2);
        t.insert("a", vec![0], Split::Train).unwrap();
        assert!(t.insert("a", vec![1], Split::Test).is_err());
        assert!(t.insert("b", vec![2], Split::Test).is_err());
        assert!(t.insert("bad id", vec![0], Split::Test).is_err());
        t.insert("c", vec![1], Split::Test).unwrap();
        assert_eq!(t.ids_in(Split::Test), vec!["c"]);
    }
}
