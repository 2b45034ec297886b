//! Trajectory pooling: sample the feature sequence along each trajectory and
//! collapse it by average pooling, approximate rank pooling or an exact
//! Ranking-SVM solve.

use rayon::prelude::*;

use crate::error::{EptError, Result};
use crate::types::{
    DescriptorRow, DescriptorSet, Direction, FeatureMapVolume, PoolingKind, Trajectory,
};

/// `len` feature vectors of dimension `dim`, oldest first, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn from_flat(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(EptError::validation("feature sequence needs len >= 1 and dim >= 1"));
        }
        if data.len() != len * dim {
            return Err(EptError::SizeMismatch {
                expected: len * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EptError::validation("feature sequence has non-finite entries"));
        }
        Ok(Self { len, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(EptError::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::from_flat(rows.len(), dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + DoubleEndedIterator {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn reversed(&self) -> Self {
        let data = self.rows().rev().flatten().copied().collect();
        Self {
            len: self.len,
            dim: self.dim,
            data,
        }
    }

    fn oriented(&self, direction: Direction) -> std::borrow::Cow<'_, Self> {
        match direction {
            Direction::Forward => std::borrow::Cow::Borrowed(self),
            Direction::Backward => std::borrow::Cow::Owned(self.reversed()),
        }
    }
}

/// Parameters of the exact Ranking-SVM pooling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankPoolConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub direction: Direction,
}

impl Default for RankPoolConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iters: 200,
            tolerance: 1e-6,
            direction: Direction::Forward,
        }
    }
}

impl RankPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(EptError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(EptError::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(EptError::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }
}

/// Maps a pixel coordinate onto a cell index by proportional scaling.
#[inline]
fn pixel_to_cell(p: f64, pixels: usize, cells: usize) -> usize {
    let c = (p * cells as f64 / pixels as f64).floor();
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(cells - 1)
    }
}

/// Samples f₁..f_L along `tr`: each f_t is the mean channel vector over a
/// `window_cells`×`window_cells` cell window centred on the point, clipped at
/// the volume border.
pub fn sample_sequence(
    v: &FeatureMapVolume,
    tr: &Trajectory,
    window_cells: usize,
) -> Result<FeatureSequence> {
    if window_cells == 0 || window_cells.is_multiple_of(2) {
        return Err(EptError::Config(format!(
            "window_cells must be odd and >= 1, got {window_cells}"
        )));
    }
    if tr.is_empty() || tr.end_frame() >= v.frames() {
        return Err(EptError::Range(format!(
            "trajectory {} spans frames {}..={} outside volume of {} frames",
            tr.id,
            tr.start_frame,
            tr.end_frame(),
            v.frames()
        )));
    }
    let g = v.geometry();
    let half = window_cells / 2;
    let c = g.channels;
    let mut data = vec![0f64; tr.len() * c];
    for (i, (p, out)) in tr.points.iter().zip(data.chunks_exact_mut(c)).enumerate() {
        let t = tr.start_frame + i;
        let cx = pixel_to_cell(p.x, g.video_width, g.width);
        let cy = pixel_to_cell(p.y, g.video_height, g.height);
        let (x0, x1) = (cx.saturating_sub(half), (cx + half).min(g.width - 1));
        let (y0, y1) = (cy.saturating_sub(half), (cy + half).min(g.height - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                for (o, &f) in out.iter_mut().zip(v.voxel(t, y, x)) {
                    *o += f as f64;
                }
            }
        }
        let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    FeatureSequence::from_flat(tr.len(), c, data)
}

/// Incremental mean update M_t = M_{t−1} + (f_t − M_{t−1})/t; exact for
/// constant input.
#[inline]
fn update_mean(mean: &mut [f64], row: &[f64], t: usize) {
    let n = t as f64;
    mean.iter_mut().zip(row).for_each(|(m, &f)| *m += (f - *m) / n);
}

/// Mean of the sequence (the TDD descriptor).
pub fn average_pool(s: &FeatureSequence) -> Vec<f64> {
    let mut mean = vec![0f64; s.dim()];
    for (t, row) in s.rows().enumerate() {
        update_mean(&mut mean, row, t + 1);
    }
    mean
}

/// F_t = S_t / ‖S_t‖₂ with S_t the running sum; zero when S_t is zero.
///
/// The running mean S_t/t is normalized instead of S_t (same direction), so
/// a constant sequence yields bit-identical F_t.
pub fn cumulative_normalized(s: &FeatureSequence) -> FeatureSequence {
    let mut running = vec![0f64; s.dim()];
    let mut data = Vec::with_capacity(s.as_flat().len());
    for (t, row) in s.rows().enumerate() {
        update_mean(&mut running, row, t + 1);
        let norm = running.iter().map(|r| r * r).sum::<f64>().sqrt();
        if norm > 0.0 {
            data.extend(running.iter().map(|r| r / norm));
        } else {
            data.extend(std::iter::repeat_n(0.0, s.dim()));
        }
    }
    FeatureSequence {
        len: s.len(),
        dim: s.dim(),
        data,
    }
}

/// Σ_t (2t − L − 1)·G_t over a sequence that is already normalized.
///
/// Equals the sum of all forward differences G_j − G_i, i < j. Evaluated as
/// Σ_{t ≤ L/2} (L + 1 − 2t)(G_{L+1−t} − G_t), which pairs the antisymmetric
/// weights so that identical steps cancel exactly.
pub fn rank_weighted_sum(g: &FeatureSequence) -> Vec<f64> {
    let l = g.len();
    let mut acc = vec![0f64; g.dim()];
    for t in 0..l / 2 {
        let w = (l - 1 - 2 * t) as f64;
        let (early, late) = (g.row(t), g.row(l - 1 - t));
        acc.iter_mut()
            .zip(late.iter().zip(early))
            .for_each(|(a, (hi, lo))| *a += w * (hi - lo));
    }
    acc
}

/// Approximate rank pooling (the EPT descriptor).
pub fn approx_rank_pool(s: &FeatureSequence) -> Vec<f64> {
    rank_weighted_sum(&cumulative_normalized(s))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankPoolResult {
    pub vector: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance test passed.
    pub converged: bool,
    /// Best objective seen after each iteration (index 0 is the starting point).
    pub history: Vec<f64>,
}

/// Pairwise differences G_j − G_i for all i < j, row-major.
fn pair_differences(g: &FeatureSequence) -> Vec<f64> {
    let (l, d) = (g.len(), g.dim());
    let mut out = Vec::with_capacity(l * (l - 1) / 2 * d);
    for i in 0..l {
        for j in i + 1..l {
            out.extend(g.row(j).iter().zip(g.row(i)).map(|(a, b)| a - b));
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// (λ/2)‖μ‖² + Σ_{i<j} max(0, 1 − μᵀ(G_j − G_i)).
pub fn rank_objective(mu: &[f64], g: &FeatureSequence, lambda: f64) -> f64 {
    let diffs = pair_differences(g);
    objective_from_diffs(mu, &diffs, lambda)
}

fn objective_from_diffs(mu: &[f64], diffs: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = diffs
        .chunks_exact(mu.len())
        .map(|d| (1.0 - dot(mu, d)).max(0.0))
        .sum();
    0.5 * lambda * dot(mu, mu) + hinge
}

/// Ranking-SVM solve on an already-normalized sequence by projected
/// subgradient descent (step 1/(λk)), keeping the best iterate.
///
/// The returned objective never exceeds the objective at μ = 0 or at the
/// approximate rank-pooling vector, both of which seed the best-so-far.
pub fn solve_rank_svm(
    g: &FeatureSequence,
    lambda: f64,
    max_iters: usize,
    tolerance: f64,
) -> RankPoolResult {
    let d = g.dim();
    if g.len() < 2 {
        return RankPoolResult {
            vector: vec![0.0; d],
            objective: 0.0,
            iterations: 0,
            converged: true,
            history: vec![0.0],
        };
    }
    let diffs = pair_differences(g);
    let pairs = diffs.len() / d;
    let approx = rank_weighted_sum(g);

    let zero = vec![0f64; d];
    let mut best = zero.clone();
    let mut best_obj = pairs as f64;
    let approx_obj = objective_from_diffs(&approx, &diffs, lambda);
    if approx_obj < best_obj {
        best = approx.clone();
        best_obj = approx_obj;
    }
    let mut history = Vec::with_capacity(max_iters + 1);
    history.push(best_obj);

    // λ/2‖μ*‖² ≤ objective(0) bounds the optimum to this ball
    let radius = if lambda > 0.0 {
        (2.0 * pairs as f64 / lambda).sqrt()
    } else {
        f64::INFINITY
    };
    let step_scale = if lambda > 0.0 { lambda } else { 1.0 };

    let mut mu = zero;
    let mut prev_obj = pairs as f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0f64; d];
    for k in 1..=max_iters {
        iterations = k;
        grad.iter_mut().zip(&mu).for_each(|(gr, m)| *gr = lambda * m);
        for pd in diffs.chunks_exact(d) {
            if dot(&mu, pd) < 1.0 {
                grad.iter_mut().zip(pd).for_each(|(gr, x)| *gr -= x);
            }
        }
        let eta = 1.0 / (step_scale * k as f64);
        mu.iter_mut().zip(&grad).for_each(|(m, gr)| *m -= eta * gr);
        let norm = dot(&mu, &mu).sqrt();
        if norm > radius {
            mu.iter_mut().for_each(|m| *m *= radius / norm);
        }

        let obj = objective_from_diffs(&mu, &diffs, lambda);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&mu);
        }
        history.push(best_obj);
        if (prev_obj - obj).abs() <= tolerance * prev_obj.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev_obj = obj;
    }
    RankPoolResult {
        vector: best,
        objective: best_obj,
        iterations,
        converged,
        history,
    }
}

/// Exact rank pooling: cumulative-normalize (after reversing for the backward
/// direction) and solve the Ranking-SVM.
pub fn exact_rank_pool(s: &FeatureSequence, cfg: &RankPoolConfig) -> Result<RankPoolResult> {
    cfg.validate()?;
    if s.len() < 2 {
        return Err(EptError::validation("exact rank pooling needs at least 2 steps"));
    }
    let g = cumulative_normalized(&s.oriented(cfg.direction));
    Ok(solve_rank_svm(&g, cfg.lambda, cfg.max_iters, cfg.tolerance))
}

/// Pools one sequence. Returns the descriptor and whether an exact solve ran
/// out of iterations.
pub fn pool_sequence(
    s: &FeatureSequence,
    kind: PoolingKind,
    cfg: &RankPoolConfig,
) -> Result<(Vec<f64>, bool)> {
    let s = s.oriented(cfg.direction);
    Ok(match kind {
        PoolingKind::Average => (average_pool(&s), false),
        PoolingKind::ApproxRank => (approx_rank_pool(&s), false),
        PoolingKind::ExactRank => {
            if s.len() < 2 {
                (vec![0.0; s.dim()], false)
            } else {
                let r = exact_rank_pool(&s, &cfg.with_direction(Direction::Forward))?;
                (r.vector, !r.converged)
            }
        }
    })
}

/// Pools every trajectory in `trs`. Rows come back sorted by trajectory id
/// (stable), independent of thread count.
pub fn pool_trajectories(
    v: &FeatureMapVolume,
    trs: &[Trajectory],
    kind: PoolingKind,
    cfg: &RankPoolConfig,
    window_cells: usize,
) -> Result<DescriptorSet> {
    cfg.validate()?;
    let pooled: Vec<(DescriptorRow, bool)> = trs
        .par_iter()
        .map(|tr| {
            let s = sample_sequence(v, tr, window_cells)?;
            let (vec, unconverged) = pool_sequence(&s, kind, cfg)?;
            let assigned_frame = u32::try_from(tr.middle_frame())
                .map_err(|_| EptError::Range(format!("frame index of trajectory {}", tr.id)))?;
            Ok((
                DescriptorRow {
                    trajectory_id: tr.id,
                    assigned_frame,
                    vector: vec.into_iter().map(|x| x as f32).collect(),
                },
                unconverged,
            ))
        })
        .collect::<Result<_>>()?;
    let unconverged = pooled.iter().filter(|(_, u)| *u).count();
    if unconverged > 0 {
        log::warn!(
            "{unconverged} of {} exact rank-pool solves hit max_iters={}",
            trs.len(),
            cfg.max_iters
        );
    }
    let mut rows: Vec<DescriptorRow> = pooled.into_iter().map(|(r, _)| r).collect();
    rows.sort_by_key(|r| r.trajectory_id);
    Ok(DescriptorSet {
        dim: v.channels(),
        pooling: kind,
        direction: cfg.direction,
        rows,
    })
}
