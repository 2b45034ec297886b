use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EptError, Result};

/// Curvature floor for degenerate pairs, as in LIBSVM.
const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stopping threshold on the maximal KKT violation.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: super::DEFAULT_C,
            tol: 1e-5,
            max_iters: 1_000_000,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(EptError::Config(format!("SVM C must be positive, got {}", self.c)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(EptError::Config(format!("SVM tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(EptError::Config("SVM max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// One trained binary problem with solver diagnostics.
#[derive(Clone, Debug)]
pub struct BinarySvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    /// Dual objective after each pass of n working-set steps, then at exit.
    pub dual_history: Vec<f64>,
    pub primal_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub c: f64,
    pub num_classes: usize,
}

impl LinearSvmModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.num_classes || self.biases.len() != self.num_classes {
            return Err(EptError::validation("SVM model class count disagrees with its parameters"));
        }
        let d = self.feature_dim();
        if self.weights.iter().any(|w| w.len() != d) {
            return Err(EptError::validation("SVM weight vectors differ in length"));
        }
        if self.weights.iter().flatten().chain(&self.biases).any(|v| !v.is_finite()) {
            return Err(EptError::validation("SVM model has non-finite parameters"));
        }
        Ok(())
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim() {
            return Err(EptError::DimensionMismatch {
                expected: self.feature_dim(),
                found: x.len(),
            });
        }
        Ok(self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, x) + b).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_features(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(EptError::validation("no training features"));
    }
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(EptError::DimensionMismatch {
            expected: d,
            found: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EptError::validation("training features contain non-finite values"));
    }
    Ok(d)
}

fn gram(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..x.len())
        .into_par_iter()
        .map(|i| x.iter().map(|xj| dot(&x[i], xj)).collect())
        .collect()
}

/// Soft-margin dual solved by SMO with second-order working-set selection.
fn smo(k: &[Vec<f64>], y: &[f64], cfg: &SvmConfig) -> (Vec<f64>, f64, Vec<f64>, usize, bool) {
    let n = y.len();
    let c = cfg.c;
    let mut alpha = vec![0f64; n];
    // Gradient of ½αᵀQα − eᵀα with Q_ij = y_i y_j K_ij.
    let mut g = vec![-1f64; n];
    let dual = |alpha: &[f64], g: &[f64]| 0.5 * alpha.iter().zip(g).map(|(a, gi)| a * (gi - 1.0)).sum::<f64>();
    let mut history = vec![0.0];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iter = 0;
    let mut converged = false;
    while iter < cfg.max_iters {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = -y[t] * g[t];
            let movable = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if movable && v >= gmax {
                gmax = v;
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..n {
                let movable = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
                if !movable {
                    continue;
                }
                let v = y[t] * g[t];
                gmax2 = gmax2.max(v);
                let diff = gmax + v;
                if diff > 0.0 {
                    let quad = k[i][i] + k[t][t] - 2.0 * k[i][t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if j == usize::MAX || gmax + gmax2 < cfg.tol {
            converged = true;
            break;
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        let quad = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += y[t] * (y[i] * k[i][t] * di + y[j] * k[j][t] * dj);
        }
        iter += 1;
        if iter % n == 0 {
            history.push(dual(&alpha, &g));
        }
    }
    history.push(dual(&alpha, &g));

    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * g[t];
        let at_upper = upper(alpha[t]);
        let at_lower = lower(alpha[t]);
        if (at_upper && y[t] < 0.0) || (at_lower && y[t] > 0.0) {
            ub = ub.min(yg);
        } else if at_upper || at_lower {
            lb = lb.max(yg);
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    (alpha, -rho, history, iter, converged)
}

fn primal(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let hinge: f64 = x.iter().zip(y).map(|(xi, yi)| (1.0 - yi * (dot(w, xi) + b)).max(0.0)).sum();
    0.5 * dot(w, w) + c * hinge
}

fn solve(x: &[Vec<f64>], k: &[Vec<f64>], y: &[f64], cfg: &SvmConfig) -> BinarySvm {
    let (alpha, bias, dual_history, iterations, converged) = smo(k, y, cfg);
    let mut weights = vec![0f64; x[0].len()];
    for ((a, yi), xi) in alpha.iter().zip(y).zip(x) {
        if *a != 0.0 {
            weights.iter_mut().zip(xi).for_each(|(w, v)| *w += a * yi * v);
        }
    }
    if !converged {
        log::warn!("SVM solver hit {iterations} iterations before reaching tol {}", cfg.tol);
    }
    let primal_objective = primal(&weights, bias, x, y, cfg.c);
    BinarySvm {
        weights,
        bias,
        alpha,
        dual_history,
        primal_objective,
        iterations,
        converged,
    }
}

/// Minimizes ½‖w‖² + C·Σ hinge(yᵢ(w·xᵢ + b)) for labels yᵢ ∈ {−1, +1}.
pub fn train_binary(x: &[Vec<f64>], y: &[f64], cfg: &SvmConfig) -> Result<BinarySvm> {
    cfg.validate()?;
    check_features(x)?;
    if x.len() != y.len() {
        return Err(EptError::SizeMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(EptError::validation("binary labels must be +1 or -1"));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(EptError::validation("binary SVM needs both positive and negative examples"));
    }
    Ok(solve(x, &gram(x), y, cfg))
}

/// One-vs-rest training; each class is an independent binary problem, so a
/// multi-label video is a positive for every class it carries.
pub fn train_ovr(
    features: &[Vec<f64>],
    labels: &[Vec<usize>],
    num_classes: usize,
    cfg: &SvmConfig,
) -> Result<LinearSvmModel> {
    cfg.validate()?;
    check_features(features)?;
    if features.len() != labels.len() {
        return Err(EptError::SizeMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if num_classes < 2 {
        return Err(EptError::validation("one-vs-rest training needs at least 2 classes"));
    }
    if let Some(&bad) = labels.iter().flatten().find(|&&l| l >= num_classes) {
        return Err(EptError::Range(format!("label {bad} outside 0..{num_classes}")));
    }
    let targets: Vec<Vec<f64>> = (0..num_classes)
        .map(|cls| labels.iter().map(|ls| if ls.contains(&cls) { 1.0 } else { -1.0 }).collect())
        .collect();
    for (cls, y) in targets.iter().enumerate() {
        if !y.contains(&1.0) {
            return Err(EptError::validation(format!("class {cls} has no training examples")));
        }
        if !y.contains(&-1.0) {
            return Err(EptError::validation(format!("class {cls} covers every training example")));
        }
    }
    let k = gram(features);
    let fits: Vec<BinarySvm> = targets.par_iter().map(|y| solve(features, &k, y, cfg)).collect();
    Ok(LinearSvmModel {
        weights: fits.iter().map(|f| f.weights.clone()).collect(),
        biases: fits.iter().map(|f| f.bias).collect(),
        c: cfg.c,
        num_classes,
    })
}

/// Softmax at temperature 1, computed with the maximum subtracted.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn predict_probs(model: &LinearSvmModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EptError::validation("feature vector has non-finite values"));
    }
    Ok(softmax(&model.scores(x)?))
}
