use rayon::prelude::*;

use super::gmm::GmmModel;
use super::pca::PcaModel;
use crate::error::{EptError, Result};
use crate::types::DescriptorSet;
use crate::videopool::FrameFvSequence;

/// Responsibilities below this are treated as exactly zero.
const RESPONSIBILITY_FLOOR: f64 = 1e-12;

/// A 2KD Fisher vector laid out as all first-order blocks (k = 0..K, D each)
/// followed by all second-order blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl FisherVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn normalize(&self, alpha: f64) -> FisherVector {
        FisherVector {
            values: power_l2_normalize(&self.values, alpha),
            normalized: true,
        }
    }
}

pub fn fv_len(gmm: &GmmModel) -> usize {
    2 * gmm.components() * gmm.dim()
}

/// Adds the Fisher statistics of one descriptor into `out` (length 2KD).
fn accumulate(gmm: &GmmModel, lt: &super::gmm::LogTerms, x: &[f64], lj: &mut [f64], out: &mut [f64]) {
    let (k, d) = (gmm.components(), gmm.dim());
    let total = lt.log_joint(x, gmm.means(), lj);
    let (first, second) = out.split_at_mut(k * d);
    for c in 0..k {
        let g = (lj[c] - total).exp();
        if g < RESPONSIBILITY_FLOOR {
            continue;
        }
        let w = gmm.weights()[c];
        let (s1, s2) = (g / w.sqrt(), g / (2.0 * w).sqrt());
        let mean = &gmm.means()[c];
        let inv_var = &lt.inv_var[c];
        for j in 0..d {
            let z = (x[j] - mean[j]) * inv_var[j].sqrt();
            first[c * d + j] += s1 * z;
            second[c * d + j] += s2 * (z * z - 1.0);
        }
    }
}

/// Unnormalized Fisher vector: sums over descriptors with no division by the
/// descriptor count, so FVs of disjoint descriptor sets add.
pub fn fisher_vector(gmm: &GmmModel, descriptors: &[Vec<f64>]) -> Result<FisherVector> {
    if let Some(x) = descriptors.iter().find(|x| x.len() != gmm.dim()) {
        return Err(EptError::DimensionMismatch {
            expected: gmm.dim(),
            found: x.len(),
        });
    }
    let lt = gmm.log_terms();
    let mut out = vec![0f64; fv_len(gmm)];
    let mut lj = vec![0f64; gmm.components()];
    for x in descriptors {
        accumulate(gmm, &lt, x, &mut lj, &mut out);
    }
    Ok(FisherVector {
        values: out,
        normalized: false,
    })
}

/// Signed power normalization followed by L2 normalization. Zero stays zero.
pub fn power_l2_normalize(v: &[f64], alpha: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v
        .iter()
        .map(|&x| if x == 0.0 { 0.0 } else { x.signum() * x.abs().powf(alpha) })
        .collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

/// PCA projection plus GMM: everything needed to turn raw descriptors into FVs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingModel {
    pub pca: PcaModel,
    pub gmm: GmmModel,
}

impl EncodingModel {
    pub fn new(pca: PcaModel, gmm: GmmModel) -> Result<Self> {
        if pca.output_dim() != gmm.dim() {
            return Err(EptError::DimensionMismatch {
                expected: pca.output_dim(),
                found: gmm.dim(),
            });
        }
        Ok(Self { pca, gmm })
    }

    pub fn fv_len(&self) -> usize {
        fv_len(&self.gmm)
    }

    /// One unnormalized FV per frame over `frames` frames; descriptors are
    /// grouped by their assigned frame, and frames without any give zero rows.
    pub fn per_frame(&self, set: &DescriptorSet, frames: usize) -> Result<FrameFvSequence> {
        if set.dim != self.pca.input_dim() {
            return Err(EptError::DimensionMismatch {
                expected: self.pca.input_dim(),
                found: set.dim,
            });
        }
        set.validate(Some(frames))?;
        let mut by_frame: Vec<Vec<usize>> = vec![Vec::new(); frames];
        for (i, row) in set.rows.iter().enumerate() {
            by_frame[row.assigned_frame as usize].push(i);
        }
        let lt = self.gmm.log_terms();
        let len = self.fv_len();
        let rows: Vec<Vec<f64>> = by_frame
            .par_iter()
            .map(|idx| {
                let mut out = vec![0f64; len];
                let mut lj = vec![0f64; self.gmm.components()];
                for &i in idx {
                    let x: Vec<f64> = set.rows[i].vector.iter().map(|&v| v as f64).collect();
                    let y = self.pca.transform(&x)?;
                    accumulate(&self.gmm, &lt, &y, &mut lj, &mut out);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        FrameFvSequence::from_flat(frames, len, rows.concat())
    }

    /// FV of the whole descriptor set, unnormalized.
    pub fn encode(&self, set: &DescriptorSet) -> Result<FisherVector> {
        let projected = set
            .vectors_f64()
            .iter()
            .map(|x| self.pca.transform(x))
            .collect::<Result<Vec<_>>>()?;
        fisher_vector(&self.gmm, &projected)
    }
}
