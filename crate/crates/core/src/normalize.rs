//! L∞ normalization of feature-map volumes, either per channel across the
//! whole space-time volume or per voxel across channels.
//!
//! All-zero channels (or voxels) are left untouched.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EptError, Result};
use crate::types::FeatureMapVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationKind {
    InChannel,
    InVoxel,
}

impl FromStr for NormalizationKind {
    type Err = EptError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-channel" | "in_channel" => Ok(NormalizationKind::InChannel),
            "in-voxel" | "in_voxel" => Ok(NormalizationKind::InVoxel),
            other => Err(EptError::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

impl fmt::Display for NormalizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationKind::InChannel => "in-channel",
            NormalizationKind::InVoxel => "in-voxel",
        })
    }
}

pub fn normalize(v: &FeatureMapVolume, kind: NormalizationKind) -> Result<FeatureMapVolume> {
    match kind {
        NormalizationKind::InChannel => in_channel_normalize(v),
        NormalizationKind::InVoxel => in_voxel_normalize(v),
    }
}

fn check_finite(v: &FeatureMapVolume) -> Result<()> {
    match v.data().iter().position(|x| !x.is_finite()) {
        Some(i) => Err(EptError::validation(format!("non-finite activation at flat index {i}"))),
        None => Ok(()),
    }
}

const VOXELS_PER_TASK: usize = 4096;

pub fn in_channel_normalize(v: &FeatureMapVolume) -> Result<FeatureMapVolume> {
    check_finite(v)?;
    let c = v.channels();
    // max is exact and order-free, so the chunked reduction is partition independent
    let maxima = v
        .data()
        .par_chunks(c * VOXELS_PER_TASK)
        .map(|block| {
            let mut m = vec![0f32; c];
            for voxel in block.chunks_exact(c) {
                for (mi, x) in m.iter_mut().zip(voxel) {
                    *mi = mi.max(x.abs());
                }
            }
            m
        })
        .reduce(
            || vec![0f32; c],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        );
    let mut data = v.data().to_vec();
    data.par_chunks_mut(c * VOXELS_PER_TASK).for_each(|block| {
        for voxel in block.chunks_exact_mut(c) {
            for (x, &m) in voxel.iter_mut().zip(&maxima) {
                if m > 0.0 {
                    *x /= m;
                }
            }
        }
    });
    v.with_data(data)
}

pub fn in_voxel_normalize(v: &FeatureMapVolume) -> Result<FeatureMapVolume> {
    check_finite(v)?;
    let c = v.channels();
    let mut data = v.data().to_vec();
    data.par_chunks_mut(c * VOXELS_PER_TASK).for_each(|block| {
        for voxel in block.chunks_exact_mut(c) {
            let m = voxel.iter().fold(0f32, |m, x| m.max(x.abs()));
            if m > 0.0 {
                voxel.iter_mut().for_each(|x| *x /= m);
            }
        }
    });
    v.with_data(data)
}
