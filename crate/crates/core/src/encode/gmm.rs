//! Diagonal-covariance Gaussian mixture fitted by EM.
//!
//! Initialization is k-means++ seeding of the means with uniform weights and
//! the global per-dimension variance. The E-step runs over fixed sample
//! blocks whose partial statistics are reduced in block order, so the fit is
//! bit-identical for a given seed regardless of thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EptError, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;
const VARIANCE_FLOOR_FACTOR: f64 = 1e-4;
/// Floor for dimensions with zero data variance.
const MIN_ABS_VARIANCE: f64 = 1e-12;
const EMPTY_COMPONENT_MASS: f64 = 1e-10;
const SAMPLES_PER_TASK: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn from_parts(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(EptError::validation("GMM needs K >= 1 weights, means and variances"));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(EptError::validation("GMM dimension must be >= 1"));
        }
        for row in means.iter().chain(&variances) {
            if row.len() != d {
                return Err(EptError::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(EptError::validation("GMM weights must be positive"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(EptError::validation(format!("GMM weights sum to {sum}")));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(EptError::validation("GMM means must be finite"));
        }
        if variances.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EptError::validation("GMM variances must be positive"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub(crate) fn log_terms(&self) -> LogTerms {
        LogTerms::new(&self.weights, &self.variances)
    }

    /// Total log-likelihood of `samples` under the model.
    pub fn log_likelihood(&self, samples: &[Vec<f64>]) -> f64 {
        let lt = self.log_terms();
        let mut scratch = vec![0f64; self.components()];
        samples
            .iter()
            .map(|x| lt.log_joint(x, &self.means, &mut scratch))
            .sum()
    }
}

/// Per-component constants: log w_k − ½Σ log(2πσ²), and 1/σ².
pub(crate) struct LogTerms {
    pub(crate) constant: Vec<f64>,
    pub(crate) inv_var: Vec<Vec<f64>>,
}

impl LogTerms {
    fn new(weights: &[f64], variances: &[Vec<f64>]) -> Self {
        let constant = weights
            .iter()
            .zip(variances)
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect();
        let inv_var = variances
            .iter()
            .map(|var| var.iter().map(|v| 1.0 / v).collect())
            .collect();
        Self { constant, inv_var }
    }

    /// Fills `out[k] = log(w_k N(x; μ_k, σ²_k))` and returns log Σ_k of them.
    pub(crate) fn log_joint(&self, x: &[f64], means: &[Vec<f64>], out: &mut [f64]) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            let mahal: f64 = x
                .iter()
                .zip(&means[k])
                .zip(&self.inv_var[k])
                .map(|((xi, mi), iv)| (xi - mi).powi(2) * iv)
                .sum();
            *o = self.constant[k] - 0.5 * mahal;
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 256,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood at each E-step, in order.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// E-step indices at which an empty component was re-seeded.
    pub reinitialized_at: Vec<usize>,
}

struct BlockStats {
    ll: f64,
    mass: Vec<f64>,
    // sums of γ·(x − μ_old) and γ·(x − μ_old)², shifted for precision
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl BlockStats {
    fn zero(k: usize, d: usize) -> Self {
        Self {
            ll: 0.0,
            mass: vec![0.0; k],
            first: vec![vec![0.0; d]; k],
            second: vec![vec![0.0; d]; k],
        }
    }

    fn merge(&mut self, o: BlockStats) {
        self.ll += o.ll;
        for k in 0..self.mass.len() {
            self.mass[k] += o.mass[k];
            self.first[k].iter_mut().zip(&o.first[k]).for_each(|(a, b)| *a += b);
            self.second[k].iter_mut().zip(&o.second[k]).for_each(|(a, b)| *a += b);
        }
    }
}

fn e_step(samples: &[Vec<f64>], means: &[Vec<f64>], lt: &LogTerms) -> BlockStats {
    let (k, d) = (means.len(), means[0].len());
    let blocks: Vec<BlockStats> = samples
        .par_chunks(SAMPLES_PER_TASK)
        .map(|block| {
            let mut st = BlockStats::zero(k, d);
            let mut lj = vec![0f64; k];
            for x in block {
                let ll = lt.log_joint(x, means, &mut lj);
                st.ll += ll;
                for c in 0..k {
                    let g = (lj[c] - ll).exp();
                    if g == 0.0 {
                        continue;
                    }
                    st.mass[c] += g;
                    for ((f, s), (xi, mi)) in st.first[c]
                        .iter_mut()
                        .zip(st.second[c].iter_mut())
                        .zip(x.iter().zip(&means[c]))
                    {
                        let dlt = xi - mi;
                        *f += g * dlt;
                        *s += g * dlt * dlt;
                    }
                }
            }
            st
        })
        .collect();
    let mut total = BlockStats::zero(k, d);
    for b in blocks {
        total.merge(b);
    }
    total
}

fn kmeans_pp(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers = vec![samples[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = samples.iter().map(|s| sq(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|&dv| {
                    acc += dv;
                    acc > target
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = samples[idx].clone();
        for (dv, s) in dist.iter_mut().zip(samples) {
            *dv = dv.min(sq(s, &c));
        }
        centers.push(c);
    }
    centers
}

/// Fits a K-component diagonal GMM. Log-likelihood is non-decreasing across
/// E-steps except immediately after an empty component is re-seeded.
pub fn fit_gmm(samples: &[Vec<f64>], cfg: &GmmConfig) -> Result<GmmFit> {
    let k = cfg.components;
    if k == 0 || cfg.max_iters == 0 || cfg.tol.is_nan() || cfg.tol < 0.0 {
        return Err(EptError::Config(
            "GMM needs components >= 1, max_iters >= 1, tol >= 0".into(),
        ));
    }
    if samples.len() < k {
        return Err(EptError::InsufficientData {
            needed: k,
            got: samples.len(),
        });
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(EptError::validation("GMM samples must have dim >= 1"));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(EptError::DimensionMismatch {
            expected: d,
            found: s.len(),
        });
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EptError::validation("GMM samples contain non-finite entries"));
    }
    let n = samples.len() as f64;

    let mut data_mean = vec![0f64; d];
    for s in samples {
        data_mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    data_mean.iter_mut().for_each(|m| *m /= n);
    let mut data_var = vec![0f64; d];
    for s in samples {
        data_var
            .iter_mut()
            .zip(s.iter().zip(&data_mean))
            .for_each(|(v, (x, m))| *v += (x - m).powi(2));
    }
    data_var.iter_mut().for_each(|v| *v /= n);
    let floor: Vec<f64> = data_var
        .iter()
        .map(|v| (VARIANCE_FLOOR_FACTOR * v).max(MIN_ABS_VARIANCE))
        .collect();
    let init_var: Vec<f64> = data_var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut means = kmeans_pp(samples, k, &mut rng);
    let mut variances = vec![init_var.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut history = Vec::new();
    let mut reinitialized_at = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        let lt = LogTerms::new(&weights, &variances);
        let mut st = e_step(samples, &means, &lt);
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if reinitialized_at.last() != Some(&(iter - 1)) && st.ll - prev <= cfg.tol * prev.abs() {
                history.push(st.ll);
                converged = true;
                break;
            }
        }
        history.push(st.ll);

        let mut reseeded = vec![false; k];
        let empty: Vec<usize> = (0..k).filter(|&c| st.mass[c] < EMPTY_COMPONENT_MASS).collect();
        if !empty.is_empty() {
            if reinitialized_at.len() >= k {
                return Err(EptError::Degenerate(format!(
                    "components emptied {} times (K = {k})",
                    reinitialized_at.len() + 1
                )));
            }
            // distinct worst-explained samples, lowest likelihood first
            let mut lj = vec![0f64; k];
            let mut order: Vec<(f64, usize)> =
                samples.iter().enumerate().map(|(i, x)| (lt.log_joint(x, &means, &mut lj), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (&c, &(_, far)) in empty.iter().zip(&order) {
                log::warn!("GMM component {c} empty at iteration {iter}; re-seeding at sample {far}");
                means[c] = samples[far].clone();
                variances[c] = init_var.clone();
                st.mass[c] = 1.0;
                reseeded[c] = true;
            }
        }
        if reseeded.contains(&true) {
            reinitialized_at.push(iter);
        }

        let total_mass: f64 = st.mass.iter().sum();
        for c in 0..k {
            let m = st.mass[c];
            weights[c] = m / total_mass;
            if reseeded[c] {
                continue;
            }
            for j in 0..d {
                let shift = st.first[c][j] / m;
                means[c][j] += shift;
                variances[c][j] = (st.second[c][j] / m - shift * shift).max(floor[j]);
            }
        }
    }

    let model = GmmModel::from_parts(weights, means, variances)?;
    Ok(GmmFit {
        model,
        log_likelihood: history,
        iterations,
        converged,
        reinitialized_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn clusters(seed: u64, n_each: usize, centers: &[f64], d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for &c in centers {
            for _ in 0..n_each {
                out.push(
                    (0..d)
                        .map(|_| c + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                        .collect(),
                );
            }
        }
        out
    }

    #[test]
    fn single_component_is_closed_form() {
        let samples = clusters(1, 200, &[2.0], 3);
        let fit = fit_gmm(&samples, &GmmConfig { components: 1, max_iters: 50, tol: 1e-12, seed: 0 }).unwrap();
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..3).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..3)
            .map(|j| samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n)
            .collect();
        assert_eq!(fit.model.weights(), &[1.0]);
        for j in 0..3 {
            assert!((fit.model.means()[0][j] - mean[j]).abs() < 1e-10);
            assert!((fit.model.variances()[0][j] - var[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_separated_clusters() {
        let samples = clusters(2, 500, &[-5.0, 5.0], 2);
        let fit = fit_gmm(&samples, &GmmConfig { components: 2, seed: 3, max_iters: 200, tol: 1e-10 }).unwrap();
        let mut centers: Vec<f64> = fit.model.means().iter().map(|m| m[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] + 5.0).abs() < 0.1, "{centers:?}");
        assert!((centers[1] - 5.0).abs() < 0.1, "{centers:?}");
        for m in fit.model.means() {
            assert!((m[1] - m[0]).abs() < 0.2);
        }
    }

    #[test]
    fn same_seed_same_model() {
        let samples = clusters(4, 300, &[-1.0, 0.0, 2.0], 4);
        let cfg = GmmConfig { components: 4, seed: 17, max_iters: 30, tol: 1e-8 };
        let a = fit_gmm(&samples, &cfg).unwrap();
        let b = fit_gmm(&samples, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }

    #[test]
    fn log_likelihood_monotone() {
        let samples = clusters(5, 300, &[-2.0, 0.5, 3.0], 3);
        let fit = fit_gmm(&samples, &GmmConfig { components: 5, seed: 1, max_iters: 100, tol: 1e-10 }).unwrap();
        assert!(fit.reinitialized_at.is_empty());
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let last = *fit.log_likelihood.last().unwrap();
        assert!((fit.model.log_likelihood(&samples) - last).abs() < 1e-6 * last.abs());
    }

    #[test]
    fn respects_variance_floor_and_weights() {
        // a constant dimension must still produce positive variance
        let mut samples = clusters(6, 100, &[0.0, 4.0], 2);
        samples.iter_mut().for_each(|s| s[1] = 7.0);
        let fit = fit_gmm(&samples, &GmmConfig { components: 3, seed: 2, max_iters: 40, tol: 1e-8 }).unwrap();
        let sum: f64 = fit.model.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(fit.model.variances().iter().flatten().all(|&v| v >= MIN_ABS_VARIANCE));
    }

    #[test]
    fn too_few_samples() {
        let samples = clusters(7, 2, &[0.0], 2);
        assert!(matches!(
            fit_gmm(&samples, &GmmConfig { components: 3, ..Default::default() }),
            Err(EptError::InsufficientData { .. })
        ));
    }

    #[test]
    fn duplicate_points_reseed_then_fail() {
        // every sample identical: components beyond the first cannot hold mass forever
        let samples = vec![vec![1.0, 1.0]; 10];
        let r = fit_gmm(&samples, &GmmConfig { components: 2, seed: 0, max_iters: 50, tol: 0.0 });
        match r {
            Ok(fit) => assert!((fit.model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9),
            Err(e) => assert!(matches!(e, EptError::Degenerate(_))),
        }
    }
}
