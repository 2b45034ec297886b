use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EptError, Result};

/// Mean-centred linear projection onto the top principal directions.
///
/// No whitening: projected coordinates keep their natural variances.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// D rows of length d, orthonormal.
    basis: Vec<Vec<f64>>,
}

const ORTHONORMAL_TOL: f64 = 1e-6;
const ROWS_PER_TASK: usize = 4096;

impl PcaModel {
    pub fn from_parts(mean: Vec<f64>, basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || basis.is_empty() {
            return Err(EptError::validation("PCA needs d >= 1 and D >= 1"));
        }
        if basis.len() > d {
            return Err(EptError::validation(format!(
                "PCA output dim {} exceeds input dim {d}",
                basis.len()
            )));
        }
        if let Some(r) = basis.iter().find(|r| r.len() != d) {
            return Err(EptError::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        let m = Self { mean, basis };
        let err = m.orthonormality_error();
        if err.is_nan() || err >= ORTHONORMAL_TOL {
            return Err(EptError::validation(format!(
                "PCA basis not orthonormal (max |BBᵀ − I| = {err:e})"
            )));
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// ‖B·Bᵀ − I‖∞ (entrywise max).
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0f64;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// basis·(x − mean).
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(EptError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EptError::validation("PCA input has non-finite entries"));
        }
        Ok(self
            .basis
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(b, (xi, mi))| b * (xi - mi))
                    .sum()
            })
            .collect())
    }

    /// basisᵀ·y + mean. Exact inverse of `transform` only when D = d.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim() {
            return Err(EptError::DimensionMismatch {
                expected: self.output_dim(),
                found: y.len(),
            });
        }
        let mut out = self.mean.clone();
        for (row, &c) in self.basis.iter().zip(y) {
            out.iter_mut().zip(row).for_each(|(o, b)| *o += c * b);
        }
        Ok(out)
    }
}

/// Fits PCA on at most `max_samples` points (seeded subsample when larger).
pub fn fit_pca(samples: &[Vec<f64>], out_dim: usize, max_samples: usize, seed: u64) -> Result<PcaModel> {
    let d = samples.first().map_or(0, Vec::len);
    if out_dim == 0 || max_samples == 0 {
        return Err(EptError::Config("PCA output dim and max_samples must be >= 1".into()));
    }
    if samples.len() < out_dim {
        return Err(EptError::InsufficientData {
            needed: out_dim,
            got: samples.len(),
        });
    }
    if out_dim > d {
        return Err(EptError::Config(format!("PCA output dim {out_dim} exceeds input dim {d}")));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(EptError::DimensionMismatch {
            expected: d,
            found: s.len(),
        });
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EptError::validation("PCA samples contain non-finite entries"));
    }

    let chosen: Vec<&[f64]> = if samples.len() > max_samples {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(max_samples);
        idx.sort_unstable();
        idx.into_iter().map(|i| samples[i].as_slice()).collect()
    } else {
        samples.iter().map(Vec::as_slice).collect()
    };
    let n = chosen.len();

    let mut mean = vec![0f64; d];
    for s in &chosen {
        mean.iter_mut().zip(*s).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // scatter accumulated over fixed row blocks, reduced in block order
    let partials: Vec<DMatrix<f64>> = chosen
        .par_chunks(ROWS_PER_TASK)
        .map(|block| {
            let centred = DMatrix::from_fn(block.len(), d, |r, c| block[r][c] - mean[c]);
            centred.transpose() * &centred
        })
        .collect();
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for p in partials {
        scatter += p;
    }
    scatter /= (n.max(2) - 1) as f64;
    // symmetrize against accumulation asymmetry
    let cov = (&scatter + scatter.transpose()) * 0.5;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let basis = order
        .into_iter()
        .take(out_dim)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            // sign convention: largest-magnitude entry positive (first on ties)
            let pivot = v
                .iter()
                .enumerate()
                .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    PcaModel::from_parts(mean, basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_samples(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|k| rng.random_range(-1.0..1.0) * (k + 1) as f64).collect())
            .collect()
    }

    #[test]
    fn axis_aligned_data_gives_unit_axis() {
        let samples: Vec<Vec<f64>> = [-2.0, -1.0, 0.5, 3.0].iter().map(|&x| vec![x, 0.0]).collect();
        let m = fit_pca(&samples, 1, 100, 0).unwrap();
        assert!((m.basis()[0][0] - 1.0).abs() < 1e-12);
        assert!(m.basis()[0][1].abs() < 1e-12);
    }

    #[test]
    fn mean_maps_to_zero() {
        let samples = random_samples(1, 50, 4);
        let m = fit_pca(&samples, 2, 1000, 0).unwrap();
        let z = m.transform(m.mean()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn full_rank_roundtrip() {
        let samples = random_samples(2, 40, 5);
        let m = fit_pca(&samples, 5, 1000, 0).unwrap();
        assert!(m.orthonormality_error() < 1e-6);
        for s in &samples {
            let back = m.inverse_transform(&m.transform(s).unwrap()).unwrap();
            for (a, b) in back.iter().zip(s) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn identity_basis_passthrough() {
        let m = PcaModel::from_parts(vec![0.0; 3], vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        assert_eq!(m.transform(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        assert!(m.transform(&[1.0]).is_err());
    }

    #[test]
    fn errors() {
        let samples = random_samples(3, 2, 4);
        assert!(matches!(fit_pca(&samples, 3, 10, 0), Err(EptError::InsufficientData { .. })));
        assert!(fit_pca(&samples, 5, 10, 0).is_err());
        assert!(PcaModel::from_parts(vec![0.0; 2], vec![vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn subsampling_is_seeded() {
        let samples = random_samples(4, 300, 3);
        let a = fit_pca(&samples, 2, 100, 9).unwrap();
        let b = fit_pca(&samples, 2, 100, 9).unwrap();
        assert_eq!(a, b);
        let c = fit_pca(&samples, 2, 100, 10).unwrap();
        assert_ne!(a.mean(), c.mean());
    }

    #[test]
    fn components_sorted_by_variance() {
        // dim k has spread ∝ (k + 1), so the top direction is the last axis
        let samples = random_samples(5, 2000, 3);
        let m = fit_pca(&samples, 3, 10_000, 0).unwrap();
        assert!(m.basis()[0][2] > 0.99);
        assert!(m.basis()[2][0] > 0.99);
    }

    proptest! {
        #[test]
        fn projection_contracts(seed in any::<u64>(), x in proptest::collection::vec(-10.0f64..10.0, 6)) {
            let m = fit_pca(&random_samples(seed, 30, 6), 3, 1000, seed).unwrap();
            prop_assert!(m.orthonormality_error() < 1e-6);
            let y = m.transform(&x).unwrap();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nx = x.iter().zip(m.mean()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(ny <= nx + 1e-6);
        }
    }
}
