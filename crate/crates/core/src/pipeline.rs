//! End-to-end pipeline: normalize → trajectory pooling (both directions for
//! rank pooling) → PCA + GMM fitted on the training split → per-frame FVs →
//! video pooling → direction fusion → one-vs-rest SVM → evaluation.
//!
//! With an output directory every intermediate artifact is written next to a
//! `.key` file holding the content hash of its inputs and parameters. A
//! re-run whose key matches loads the artifact instead of recomputing it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    self, mean_average_precision, predict_probs, top1_accuracy, EvalReport, LinearSvmModel, Metric, SvmConfig,
};
use crate::encode::{fit_gmm, fit_pca, EncodingModel, GmmConfig};
use crate::error::{EptError, Result};
use crate::io;
use crate::normalize::{normalize, NormalizationKind};
use crate::synth::{synth_ordered_pair_dataset, SynthParams};
use crate::trajpool::{pool_trajectories, RankPoolConfig};
use crate::types::{DescriptorSet, Direction, FeatureMapVolume, LabeledVideoTable, PoolingKind, Split, Trajectory};
use crate::videopool::{fuse, video_pool, FrameFvSequence, VideoPoolMethod, VideoVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub normalization: NormalizationKind,
    pub pooling: PoolingKind,
    /// Pool both directions and concatenate; only meaningful for rank pooling.
    pub bidirectional: bool,
    /// Spatial sampling window in cells (odd).
    pub window: usize,
    pub lambda: f64,
    pub rank_max_iters: usize,
    pub rank_tolerance: f64,
    pub pca_dim: usize,
    pub pca_max_samples: usize,
    pub gmm_components: usize,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
    pub alpha: f64,
    pub video_pooling: VideoPoolMethod,
    pub hap_window: usize,
    pub hap_stride: usize,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub svm_max_iters: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let rank = RankPoolConfig::default();
        let gmm = GmmConfig::default();
        let svm = SvmConfig::default();
        Self {
            normalization: NormalizationKind::InVoxel,
            pooling: PoolingKind::ApproxRank,
            bidirectional: true,
            window: 1,
            lambda: rank.lambda,
            rank_max_iters: rank.max_iters,
            rank_tolerance: rank.tolerance,
            pca_dim: crate::encode::DEFAULT_PCA_DIM,
            pca_max_samples: 1_000_000,
            gmm_components: crate::encode::DEFAULT_GMM_COMPONENTS,
            gmm_max_iters: gmm.max_iters,
            gmm_tol: gmm.tol,
            alpha: crate::encode::DEFAULT_ALPHA,
            video_pooling: VideoPoolMethod::Ap,
            hap_window: 20,
            hap_stride: 1,
            svm_c: classify::DEFAULT_C,
            svm_tol: svm.tol,
            svm_max_iters: svm.max_iters,
            metric: Metric::Top1,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| EptError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config always serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn rank_config(&self, direction: Direction) -> RankPoolConfig {
        RankPoolConfig {
            lambda: self.lambda,
            max_iters: self.rank_max_iters,
            tolerance: self.rank_tolerance,
            direction,
        }
    }

    pub fn gmm_config(&self) -> GmmConfig {
        GmmConfig {
            components: self.gmm_components,
            seed: self.seed,
            max_iters: self.gmm_max_iters,
            tol: self.gmm_tol,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.svm_c,
            tol: self.svm_tol,
            max_iters: self.svm_max_iters,
        }
    }

    pub fn directions(&self) -> Vec<Direction> {
        if self.pooling.is_rank() && self.bidirectional {
            vec![Direction::Forward, Direction::Backward]
        } else {
            vec![Direction::Forward]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EptError::Config(m));
        if self.window == 0 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd and >= 1, got {}", self.window));
        }
        self.rank_config(Direction::Forward).validate()?;
        if self.pca_dim == 0 || self.pca_max_samples == 0 {
            return bad("pca_dim and pca_max_samples must be >= 1".into());
        }
        if self.gmm_components == 0 || self.gmm_max_iters == 0 || self.gmm_tol.is_nan() || self.gmm_tol <= 0.0 {
            return bad("gmm_components, gmm_max_iters and gmm_tol must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if self.hap_window == 0 || self.hap_stride == 0 {
            return bad("hap_window and hap_stride must be >= 1".into());
        }
        self.svm_config().validate()
    }
}

/// One video's raw inputs.
#[derive(Clone, Debug)]
pub struct VideoInput {
    pub id: String,
    pub volume: FeatureMapVolume,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub pooling: PoolingKind,
    pub video_pooling: VideoPoolMethod,
    pub eval: EvalReport,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Videos whose descriptors were used to fit PCA and GMM, per direction.
    pub encoder_fit_ids: Vec<(Direction, Vec<String>)>,
    pub degenerate_videos: Vec<String>,
}

impl PipelineReport {
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash={}", self.config_hash);
        let _ = writeln!(out, "pooling={}", self.pooling);
        let _ = writeln!(out, "video_pooling={}", self.video_pooling);
        let _ = writeln!(out, "train_ids={}", self.train_ids.join(","));
        let _ = writeln!(out, "test_ids={}", self.test_ids.join(","));
        for (d, ids) in &self.encoder_fit_ids {
            let _ = writeln!(out, "encoder_fit_ids.{d}={}", ids.join(","));
        }
        let _ = writeln!(out, "degenerate_videos={}", self.degenerate_videos.join(","));
        out.push_str(&self.eval.to_key_values());
        out
    }
}

fn stage_err(stage: &'static str, subject: impl Into<String>) -> impl FnOnce(EptError) -> EptError {
    let subject = subject.into();
    move |e| e.in_stage(stage, subject)
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Content-addressed artifact cache rooted at the output directory.
struct Cache<'a> {
    root: Option<&'a Path>,
}

impl Cache<'_> {
    fn path(&self, rel: &str) -> Option<PathBuf> {
        self.root.map(|r| r.join(rel))
    }

    fn key_path(p: &Path) -> PathBuf {
        let mut s = p.as_os_str().to_owned();
        s.push(".key");
        PathBuf::from(s)
    }

    fn get_or_compute<T>(
        &self,
        rel: &str,
        key: &str,
        compute: impl FnOnce() -> Result<T>,
        write: impl FnOnce(&Path, &T) -> Result<()>,
        read: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let Some(path) = self.path(rel) else {
            return compute();
        };
        let kp = Self::key_path(&path);
        if path.exists() && fs::read_to_string(&kp).is_ok_and(|k| k == key) {
            if let Ok(v) = read(&path) {
                log::debug!("cache hit {}", path.display());
                return Ok(v);
            }
        }
        let v = compute()?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write(&path, &v)?;
        fs::write(&kp, key)?;
        Ok(v)
    }
}

struct Pooled {
    key: String,
    set: DescriptorSet,
}

/// Runs every stage. `labels` decides the split; videos missing from it are
/// an error. With `out_dir` set, artifacts, the config and the report are
/// written there.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    videos: &[VideoInput],
    labels: &LabeledVideoTable,
    out_dir: Option<&Path>,
) -> Result<PipelineReport> {
    cfg.validate()?;
    let cache = Cache { root: out_dir };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
    }
    let mut videos: Vec<&VideoInput> = videos.iter().collect();
    videos.sort_by(|a, b| a.id.cmp(&b.id));
    for v in &videos {
        if labels.get(&v.id).is_none() {
            return Err(EptError::validation("video has no label entry").in_stage("load", v.id.clone()));
        }
    }
    let split_of = |id: &str| labels.get(id).map(|l| l.split);
    let train_ids: Vec<String> = videos
        .iter()
        .filter(|v| split_of(&v.id) == Some(Split::Train))
        .map(|v| v.id.clone())
        .collect();
    let test_ids: Vec<String> = videos
        .iter()
        .filter(|v| split_of(&v.id) == Some(Split::Test))
        .map(|v| v.id.clone())
        .collect();
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(EptError::validation("both train and test splits need videos").in_stage("split", "labels"));
    }

    let traj_len = videos
        .iter()
        .flat_map(|v| v.trajectories.first())
        .map(Trajectory::len)
        .next()
        .unwrap_or(crate::types::DEFAULT_TRAJECTORY_LEN);

    // normalize
    let normalized: Vec<(String, FeatureMapVolume)> = videos
        .par_iter()
        .map(|v| {
            let raw = io::encode_volume(&v.volume)?;
            let key = digest(&[b"normalize", cfg.normalization.to_string().as_bytes(), &raw]);
            let vol = cache
                .get_or_compute(
                    &format!("normalized/{}.eptv", v.id),
                    &key,
                    || normalize(&v.volume, cfg.normalization),
                    |p, x| io::write_volume(p, x),
                    |p| io::read_volume(p),
                )
                .map_err(stage_err("normalize", v.id.clone()))?;
            Ok((key, vol))
        })
        .collect::<Result<_>>()?;

    let directions = cfg.directions();
    let mut direction_vectors: Vec<Vec<VideoVector>> = vec![Vec::new(); videos.len()];
    let mut encoder_fit_ids = Vec::new();

    for &dir in &directions {
        // trajectory pooling
        let rank = cfg.rank_config(dir);
        let pooled: Vec<Pooled> = videos
            .iter()
            .zip(&normalized)
            .map(|(v, (nkey, vol))| {
                let traj_text = io::format_trajectories(&v.trajectories, traj_len);
                let params = format!(
                    "{}|{}|{}|{}|{}|{}",
                    cfg.pooling, dir, cfg.window, cfg.lambda, cfg.rank_max_iters, cfg.rank_tolerance
                );
                let key = digest(&[b"traj-pool", nkey.as_bytes(), traj_text.as_bytes(), params.as_bytes()]);
                let set = cache
                    .get_or_compute(
                        &format!("descriptors/{dir}/{}.eptd", v.id),
                        &key,
                        || pool_trajectories(vol, &v.trajectories, cfg.pooling, &rank, cfg.window),
                        |p, x| io::write_descriptors(p, x),
                        |p| io::read_descriptors(p),
                    )
                    .map_err(stage_err("traj-pool", v.id.clone()))?;
                Ok(Pooled { key, set })
            })
            .collect::<Result<_>>()?;

        // encoder fitted on training videos only
        let fit_idx: Vec<usize> = (0..videos.len())
            .filter(|&i| split_of(&videos[i].id) == Some(Split::Train))
            .collect();
        let mut key_parts: Vec<Vec<u8>> = vec![
            b"encoder".to_vec(),
            format!(
                "{dir}|{}|{}|{}|{}|{}|{}",
                cfg.pca_dim, cfg.pca_max_samples, cfg.gmm_components, cfg.gmm_max_iters, cfg.gmm_tol, cfg.seed
            )
            .into_bytes(),
        ];
        key_parts.extend(fit_idx.iter().map(|&i| pooled[i].key.clone().into_bytes()));
        let key = digest(&key_parts.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let model_subject = format!("{dir} training descriptors");
        let model = cache
            .get_or_compute(
                &format!("models/{dir}.eptm"),
                &key,
                || {
                    let samples: Vec<Vec<f64>> =
                        fit_idx.iter().flat_map(|&i| pooled[i].set.vectors_f64()).collect();
                    let pca = fit_pca(&samples, cfg.pca_dim, cfg.pca_max_samples, cfg.seed)
                        .map_err(stage_err("fit-pca", model_subject.clone()))?;
                    let projected = samples.iter().map(|x| pca.transform(x)).collect::<Result<Vec<_>>>()?;
                    let fit = fit_gmm(&projected, &cfg.gmm_config())
                        .map_err(stage_err("fit-gmm", model_subject.clone()))?;
                    if !fit.converged {
                        log::warn!("GMM ({dir}) stopped at max_iters={}", cfg.gmm_max_iters);
                    }
                    EncodingModel::new(pca, fit.model)
                },
                |p, m| io::write_model(p, &m.pca, Some(&m.gmm)),
                |p| io::read_encoding_model(p),
            )
            .map_err(|e| match e {
                e @ EptError::Stage { .. } => e,
                e => e.in_stage("fit-encoder", model_subject.clone()),
            })?;
        encoder_fit_ids.push((dir, fit_idx.iter().map(|&i| videos[i].id.clone()).collect()));
        let model_key = key;

        // per-frame FVs and video pooling
        let vectors: Vec<VideoVector> = videos
            .par_iter()
            .zip(&pooled)
            .zip(&normalized)
            .map(|((v, p), (_, vol))| {
                let key = digest(&[b"frame-fv", model_key.as_bytes(), p.key.as_bytes()]);
                let frames: FrameFvSequence = cache
                    .get_or_compute(
                        &format!("frame_fv/{dir}/{}.fvs", v.id),
                        &key,
                        || model.per_frame(&p.set, vol.frames()),
                        |path, x| io::write_frame_fvs(path, x),
                        |path| io::read_frame_fvs(path),
                    )
                    .map_err(stage_err("encode", v.id.clone()))?;
                video_pool(&frames, cfg.video_pooling, cfg.hap_window, cfg.hap_stride, Direction::Forward, cfg.alpha)
                    .map_err(stage_err("video-pool", v.id.clone()))
            })
            .collect::<Result<_>>()?;
        for (slot, vv) in direction_vectors.iter_mut().zip(vectors) {
            slot.push(vv);
        }
    }

    // fuse directions
    let fused: Vec<VideoVector> = videos
        .iter()
        .zip(&direction_vectors)
        .map(|(v, blocks)| fuse(blocks, None).map_err(stage_err("fuse", v.id.clone())))
        .collect::<Result<_>>()?;
    let degenerate_videos: Vec<String> = videos
        .iter()
        .zip(&fused)
        .filter(|(_, f)| f.degenerate)
        .map(|(v, _)| v.id.clone())
        .collect();
    if let Some(dir) = out_dir {
        for (v, f) in videos.iter().zip(&fused) {
            let p = dir.join("video").join(format!("{}.eptf", v.id));
            fs::create_dir_all(p.parent().unwrap_or(dir))?;
            io::write_video_vector(&p, &f.values).map_err(stage_err("video-pool", v.id.clone()))?;
        }
    }

    // train
    let gather = |split: Split| -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        videos
            .iter()
            .zip(&fused)
            .filter(|(v, _)| split_of(&v.id) == Some(split))
            .map(|(v, f)| (f.values.clone(), labels.get(&v.id).map(|l| l.classes.clone()).unwrap_or_default()))
            .unzip()
    };
    let (train_x, train_y) = gather(Split::Train);
    let model = classify::train_ovr(&train_x, &train_y, labels.num_classes(), &cfg.svm_config())
        .map_err(stage_err("train", "training split"))?;
    if let Some(dir) = out_dir {
        write_svm_model(&dir.join("svm.json"), &model)?;
    }

    // eval
    let (test_x, test_y) = gather(Split::Test);
    let eval = evaluate(&model, &test_x, &test_y, cfg.metric).map_err(stage_err("eval", "test split"))?;

    let report = PipelineReport {
        config_hash: cfg.hash(),
        pooling: cfg.pooling,
        video_pooling: cfg.video_pooling,
        eval,
        train_ids,
        test_ids,
        encoder_fit_ids,
        degenerate_videos,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join("report.txt"), format!("{}", report.eval))?;
        fs::write(dir.join("report.kv"), report.to_key_values())?;
    }
    Ok(report)
}

/// Scores `x` with `model` and reports `metric` against `labels`.
pub fn evaluate(model: &LinearSvmModel, x: &[Vec<f64>], labels: &[Vec<usize>], metric: Metric) -> Result<EvalReport> {
    let k = model.num_classes;
    match metric {
        Metric::Top1 => {
            if labels.iter().any(|l| l.len() != 1) {
                return Err(EptError::validation("top-1 accuracy needs exactly one label per video"));
            }
            let probs = x.iter().map(|xi| predict_probs(model, xi)).collect::<Result<Vec<_>>>()?;
            top1_accuracy(&probs, &labels.iter().map(|l| l[0]).collect::<Vec<_>>(), k)
        }
        Metric::Map => {
            let scores = x.iter().map(|xi| model.scores(xi)).collect::<Result<Vec<_>>>()?;
            let per_class: Vec<Vec<f64>> = (0..k).map(|c| scores.iter().map(|s| s[c]).collect()).collect();
            let positives: Vec<Vec<bool>> = (0..k).map(|c| labels.iter().map(|l| l.contains(&c)).collect()).collect();
            mean_average_precision(&per_class, &positives)
        }
    }
}

pub fn write_svm_model(path: &Path, model: &LinearSvmModel) -> Result<()> {
    let text = serde_json::to_string(model).map_err(|e| EptError::validation(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_svm_model(path: &Path) -> Result<LinearSvmModel> {
    let text = fs::read_to_string(path)?;
    let model: LinearSvmModel = serde_json::from_str(&text).map_err(|e| EptError::Format {
        offset: e.column() as u64,
        message: e.to_string(),
    })?;
    model.validate()?;
    Ok(model)
}

/// Loads `<volume_dir>/<id>.eptv` and `<traj_dir>/<id>.traj` for every
/// labelled video.
pub fn load_videos(volume_dir: &Path, traj_dir: &Path, labels: &LabeledVideoTable) -> Result<Vec<VideoInput>> {
    labels
        .iter()
        .map(|(id, _)| {
            let vp = volume_dir.join(format!("{id}.eptv"));
            let volume = io::read_volume(&vp).map_err(stage_err("load", vp.display().to_string()))?;
            let tp = traj_dir.join(format!("{id}.traj"));
            let trajectories = io::read_trajectories(&tp, volume.geometry())
                .map_err(stage_err("load", tp.display().to_string()))?;
            Ok(VideoInput {
                id: id.to_string(),
                volume,
                trajectories,
            })
        })
        .collect()
}

/// Writes a generated dataset in the on-disk layout `load_videos` reads.
pub fn write_dataset(dir: &Path, videos: &[VideoInput], labels: &LabeledVideoTable, traj_len: usize) -> Result<()> {
    let (vdir, tdir) = (dir.join("volumes"), dir.join("trajectories"));
    fs::create_dir_all(&vdir)?;
    fs::create_dir_all(&tdir)?;
    for v in videos {
        io::write_volume(vdir.join(format!("{}.eptv", v.id)), &v.volume)?;
        io::write_trajectories(tdir.join(format!("{}.traj", v.id)), &v.trajectories, traj_len)?;
    }
    io::write_labels(dir.join("labels.txt"), labels)
}

/// Desk-scale parameters for the order-discrimination experiment.
pub fn synth_experiment_params(seed: u64) -> SynthParams {
    SynthParams {
        seed,
        videos_per_class: 40,
        trajectories_per_video: 200,
        traj_len: 16,
        dim: 32,
        ..SynthParams::default()
    }
}

/// Pipeline settings shared by both arms of the synthetic experiment.
pub fn synth_experiment_config(seed: u64, pooling: PoolingKind) -> PipelineConfig {
    PipelineConfig {
        pooling,
        pca_dim: 16,
        gmm_components: 8,
        seed,
        ..PipelineConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthExperimentReport {
    pub seed: u64,
    pub tdd: PipelineReport,
    pub ept: PipelineReport,
}

impl SynthExperimentReport {
    pub fn gap(&self) -> f64 {
        self.ept.eval.mean - self.tdd.eval.mean
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "seed={}\ntdd.accuracy={}\ntdd.config_hash={}\nept.accuracy={}\nept.config_hash={}\ngap={}\n",
            self.seed,
            self.tdd.eval.mean,
            self.tdd.config_hash,
            self.ept.eval.mean,
            self.ept.config_hash,
            self.gap()
        )
    }
}

impl std::fmt::Display for SynthExperimentReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "synthetic order-pair experiment (seed {})", self.seed)?;
        writeln!(f, "{:<6} {:<12} {:>9}  config", "arm", "pooling", "accuracy")?;
        for (name, r) in [("TDD", &self.tdd), ("EPT", &self.ept)] {
            writeln!(f, "{name:<6} {:<12} {:>9.4}  {}", r.pooling.to_string(), r.eval.mean, &r.config_hash[..12])?;
        }
        writeln!(f, "gap (EPT - TDD): {:.4}", self.gap())
    }
}

/// Average pooling (TDD) against bidirectional approximate rank pooling
/// (EPT) on the same synthetic order-pair dataset.
pub fn synth_experiment(seed: u64, out_dir: Option<&Path>) -> Result<SynthExperimentReport> {
    let data = synth_ordered_pair_dataset(&synth_experiment_params(seed))?;
    let videos: Vec<VideoInput> = data
        .videos
        .into_iter()
        .map(|v| VideoInput {
            id: v.id,
            volume: v.volume,
            trajectories: v.trajectories,
        })
        .collect();
    let arm = |pooling: PoolingKind, name: &str| {
        let dir = out_dir.map(|d| d.join(name));
        run_pipeline(&synth_experiment_config(seed, pooling), &videos, &data.labels, dir.as_deref())
    };
    let report = SynthExperimentReport {
        seed,
        tdd: arm(PoolingKind::Average, "tdd")?,
        ept: arm(PoolingKind::ApproxRank, "ept")?,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join("experiment.txt"), report.to_string())?;
        fs::write(dir.join("experiment.kv"), report.to_key_values())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_hash_is_stable() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = PipelineConfig { svm_c: 1.0, ..cfg.clone() };
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = PipelineConfig::from_toml("pooling = \"average\"\ngmm_components = 8\n").unwrap();
        assert_eq!(cfg.pooling, PoolingKind::Average);
        assert_eq!(cfg.gmm_components, 8);
        assert_eq!(cfg.pca_dim, 64);
        assert_eq!(cfg.directions(), vec![Direction::Forward]);
        assert!(PipelineConfig::from_toml("window = 2\n").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn defaults_follow_chosen_configuration() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.normalization, NormalizationKind::InVoxel);
        assert_eq!(cfg.pooling, PoolingKind::ApproxRank);
        assert_eq!(cfg.directions(), vec![Direction::Forward, Direction::Backward]);
        assert_eq!((cfg.pca_dim, cfg.gmm_components, cfg.alpha), (64, 256, 0.5));
        assert_eq!((cfg.hap_window, cfg.hap_stride), (20, 1));
        assert_eq!(cfg.svm_c, 100.0);
    }
}
