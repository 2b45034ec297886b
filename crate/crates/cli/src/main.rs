use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ept_core::classify::{predict_probs, train_ovr, Metric};
use ept_core::encode::{fit_gmm, fit_pca, power_l2_normalize, EncodingModel, GmmConfig};
use ept_core::io;
use ept_core::normalize::{normalize, NormalizationKind};
use ept_core::pipeline::{
    evaluate, load_videos, read_svm_model, run_pipeline, synth_experiment, write_dataset, write_svm_model,
    PipelineConfig, VideoInput,
};
use ept_core::synth::{synth_ordered_pair_dataset, SynthParams};
use ept_core::trajpool::pool_trajectories;
use ept_core::videopool::{fuse, video_pool, Provenance, VideoPoolMethod, VideoVector};
use ept_core::{Direction, LabeledVideoTable, PoolingKind, Split};

#[derive(Parser)]
#[command(name = "ept", version, about = "Evolution-preserving trajectory descriptor pipeline")]
struct Cli {
    /// TOML pipeline config; explicit flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// L-infinity normalize a feature-map volume.
    Normalize {
        #[arg(long)]
        kind: Option<NormalizationKind>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool feature sequences along trajectories into descriptors.
    TrajPool {
        #[arg(long)]
        kind: Option<PoolingKind>,
        #[arg(long, default_value = "forward")]
        direction: Direction,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a PCA projection on descriptor files; writes a PCA-only model.
    FitPca {
        #[arg(long = "dim")]
        dim: Option<usize>,
        #[arg(long)]
        max_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        descriptors: Vec<PathBuf>,
    },
    /// Fit a diagonal GMM on PCA-projected descriptors; writes PCA + GMM.
    FitGmm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        descriptors: Vec<PathBuf>,
    },
    /// Fisher-vector encode a descriptor file.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        /// Write unnormalized per-frame FVs instead of one normalized FV.
        #[arg(long)]
        per_frame: bool,
        /// Frame count of the video; defaults to the last assigned frame + 1.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool per-frame FVs into one video vector.
    VideoPool {
        #[arg(long)]
        method: Option<VideoPoolMethod>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value = "forward")]
        direction: Direction,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kernel-average video vectors by weighted concatenation.
    Fuse {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train one-vs-rest linear SVMs; video ids are the feature file stems.
    Train {
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Print softmax class probabilities per video.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
    },
    /// Evaluate a model on labelled video vectors.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        metric: Option<Metric>,
        /// Write the key=value report here instead of stdout.
        #[arg(long)]
        kv_out: Option<PathBuf>,
    },
    /// Generate the synthetic order-pair dataset, or run the TDD vs EPT experiment.
    Synth(SynthArgs),
    /// Run the whole pipeline on a dataset directory.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Run both pipelines and write a side-by-side report.
    #[arg(long)]
    experiment: bool,
    #[arg(long)]
    videos_per_class: Option<usize>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Directory holding volumes/, trajectories/ and labels.txt.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    normalization: Option<NormalizationKind>,
    #[arg(long)]
    pooling: Option<PoolingKind>,
    #[arg(long)]
    bidirectional: Option<bool>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    gmm_components: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    video_pooling: Option<VideoPoolMethod>,
    #[arg(long)]
    hap_window: Option<usize>,
    #[arg(long)]
    hap_stride: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    seed: Option<u64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(PipelineConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn video_id(p: &Path) -> Result<String> {
    p.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| anyhow!("cannot derive a video id from {}", p.display()))
}

fn read_features(paths: &[PathBuf]) -> Result<Vec<(String, Vec<f64>)>> {
    paths
        .iter()
        .map(|p| {
            let v = io::read_video_vector(p).with_context(|| p.display().to_string())?;
            Ok((video_id(p)?, v))
        })
        .collect()
}

fn read_descriptor_samples(paths: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for p in paths {
        let set = io::read_descriptors(p).with_context(|| p.display().to_string())?;
        out.extend(set.vectors_f64());
    }
    Ok(out)
}

type Labelled<'a> = (Vec<&'a str>, Vec<Vec<f64>>, Vec<Vec<usize>>);

fn labelled<'a>(
    features: &'a [(String, Vec<f64>)],
    labels: &LabeledVideoTable,
) -> Result<Labelled<'a>> {
    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, v) in features {
        let l = labels.get(id).ok_or_else(|| anyhow!("video `{id}` has no label entry"))?;
        ids.push(id.as_str());
        x.push(v.clone());
        y.push(l.classes.clone());
    }
    Ok((ids, x, y))
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref()).context("config")?;
    match cli.command {
        Command::Normalize { kind, input, out } => {
            set(&mut cfg.normalization, kind);
            let v = io::read_volume(&input).with_context(|| input.display().to_string())?;
            let n = normalize(&v, cfg.normalization)?;
            io::write_volume(&out, &n)?;
        }
        Command::TrajPool {
            kind,
            direction,
            window,
            lambda,
            volume,
            trajectories,
            out,
        } => {
            set(&mut cfg.pooling, kind);
            set(&mut cfg.window, window);
            set(&mut cfg.lambda, lambda);
            cfg.validate()?;
            let v = io::read_volume(&volume).with_context(|| volume.display().to_string())?;
            let trs = io::read_trajectories(&trajectories, v.geometry())
                .with_context(|| trajectories.display().to_string())?;
            let set = pool_trajectories(&v, &trs, cfg.pooling, &cfg.rank_config(direction), cfg.window)?;
            io::write_descriptors(&out, &set)?;
            log::info!("pooled {} trajectories ({}, {direction})", set.len(), cfg.pooling);
        }
        Command::FitPca {
            dim,
            max_samples,
            seed,
            out,
            descriptors,
        } => {
            set(&mut cfg.pca_dim, dim);
            set(&mut cfg.pca_max_samples, max_samples);
            set(&mut cfg.seed, seed);
            let samples = read_descriptor_samples(&descriptors)?;
            let pca = fit_pca(&samples, cfg.pca_dim, cfg.pca_max_samples, cfg.seed)?;
            io::write_model(&out, &pca, None)?;
        }
        Command::FitGmm {
            model,
            components,
            seed,
            max_iters,
            out,
            descriptors,
        } => {
            set(&mut cfg.gmm_components, components);
            set(&mut cfg.seed, seed);
            set(&mut cfg.gmm_max_iters, max_iters);
            let (pca, _) = io::read_model(&model).with_context(|| model.display().to_string())?;
            let projected = read_descriptor_samples(&descriptors)?
                .iter()
                .map(|x| pca.transform(x))
                .collect::<ept_core::Result<Vec<_>>>()?;
            let gcfg = GmmConfig {
                components: cfg.gmm_components,
                seed: cfg.seed,
                max_iters: cfg.gmm_max_iters,
                tol: cfg.gmm_tol,
            };
            let fit = fit_gmm(&projected, &gcfg)?;
            if !fit.converged {
                log::warn!("EM stopped at max_iters={}", gcfg.max_iters);
            }
            io::write_model(&out, &pca, Some(&fit.model))?;
        }
        Command::Encode {
            model,
            descriptors,
            per_frame,
            frames,
            alpha,
            out,
        } => {
            set(&mut cfg.alpha, alpha);
            let m: EncodingModel =
                io::read_encoding_model(&model).with_context(|| model.display().to_string())?;
            let set = io::read_descriptors(&descriptors).with_context(|| descriptors.display().to_string())?;
            if per_frame {
                let t = frames.unwrap_or_else(|| set.rows.iter().map(|r| r.assigned_frame as usize + 1).max().unwrap_or(1));
                io::write_frame_fvs(&out, &m.per_frame(&set, t)?)?;
            } else {
                let fv = m.encode(&set)?;
                io::write_video_vector(&out, &power_l2_normalize(&fv.values, cfg.alpha))?;
            }
        }
        Command::VideoPool {
            method,
            window,
            stride,
            direction,
            alpha,
            input,
            out,
        } => {
            set(&mut cfg.video_pooling, method);
            set(&mut cfg.hap_window, window);
            set(&mut cfg.hap_stride, stride);
            set(&mut cfg.alpha, alpha);
            let seq = io::read_frame_fvs(&input).with_context(|| input.display().to_string())?;
            let v = video_pool(&seq, cfg.video_pooling, cfg.hap_window, cfg.hap_stride, direction, cfg.alpha)?;
            if v.degenerate {
                log::warn!("{} produced an all-zero vector", input.display());
            }
            io::write_video_vector(&out, &v.values)?;
        }
        Command::Fuse { out, weights, inputs } => {
            let blocks = inputs
                .iter()
                .map(|p| {
                    let v = io::read_video_vector(p).with_context(|| p.display().to_string())?;
                    Ok(VideoVector::from_values(v, Provenance::Fused))
                })
                .collect::<Result<Vec<_>>>()?;
            let f = fuse(&blocks, weights.as_deref())?;
            io::write_video_vector(&out, &f.values)?;
        }
        Command::Train {
            c,
            features,
            labels,
            model_out,
        } => {
            set(&mut cfg.svm_c, c);
            let table = io::read_labels(&labels).with_context(|| labels.display().to_string())?;
            let feats = read_features(&features)?;
            let (ids, x, y) = labelled(&feats, &table)?;
            let train: Vec<usize> = (0..ids.len())
                .filter(|&i| table.get(ids[i]).is_some_and(|l| l.split == Split::Train))
                .collect();
            if train.is_empty() {
                bail!("none of the given videos is in the train split");
            }
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ty: Vec<Vec<usize>> = train.iter().map(|&i| y[i].clone()).collect();
            let model = train_ovr(&tx, &ty, table.num_classes(), &cfg.svm_config())?;
            write_svm_model(&model_out, &model)?;
            log::info!("trained {} classes on {} videos", model.num_classes, tx.len());
        }
        Command::Predict { model, features } => {
            let m = read_svm_model(&model).with_context(|| model.display().to_string())?;
            for (id, x) in read_features(&features)? {
                let p = predict_probs(&m, &x).with_context(|| id.clone())?;
                let cells: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
                println!("{id} {}", cells.join(" "));
            }
        }
        Command::Eval {
            model,
            features,
            labels,
            metric,
            kv_out,
        } => {
            set(&mut cfg.metric, metric);
            let m = read_svm_model(&model).with_context(|| model.display().to_string())?;
            let table = io::read_labels(&labels).with_context(|| labels.display().to_string())?;
            let feats = read_features(&features)?;
            let (_, x, y) = labelled(&feats, &table)?;
            let report = evaluate(&m, &x, &y, cfg.metric)?;
            print!("{report}");
            match kv_out {
                Some(p) => fs::write(&p, report.to_key_values()).with_context(|| p.display().to_string())?,
                None => print!("\n{}", report.to_key_values()),
            }
        }
        Command::Synth(a) => {
            if a.experiment {
                let report = synth_experiment(a.seed, Some(&a.out))?;
                print!("{report}");
            } else {
                let mut p = SynthParams {
                    seed: a.seed,
                    ..SynthParams::default()
                };
                set(&mut p.videos_per_class, a.videos_per_class);
                set(&mut p.trajectories_per_video, a.trajectories);
                set(&mut p.dim, a.dim);
                set(&mut p.noise, a.noise);
                let data = synth_ordered_pair_dataset(&p)?;
                let videos: Vec<VideoInput> = data
                    .videos
                    .into_iter()
                    .map(|v| VideoInput {
                        id: v.id,
                        volume: v.volume,
                        trajectories: v.trajectories,
                    })
                    .collect();
                write_dataset(&a.out, &videos, &data.labels, data.traj_len)?;
                log::info!("wrote {} videos to {}", videos.len(), a.out.display());
            }
        }
        Command::Run(a) => {
            set(&mut cfg.normalization, a.normalization);
            set(&mut cfg.pooling, a.pooling);
            set(&mut cfg.bidirectional, a.bidirectional);
            set(&mut cfg.window, a.window);
            set(&mut cfg.lambda, a.lambda);
            set(&mut cfg.pca_dim, a.pca_dim);
            set(&mut cfg.gmm_components, a.gmm_components);
            set(&mut cfg.alpha, a.alpha);
            set(&mut cfg.video_pooling, a.video_pooling);
            set(&mut cfg.hap_window, a.hap_window);
            set(&mut cfg.hap_stride, a.hap_stride);
            set(&mut cfg.svm_c, a.c);
            set(&mut cfg.metric, a.metric);
            set(&mut cfg.seed, a.seed);
            cfg.validate()?;
            let labels_path = a.data.join("labels.txt");
            let table = io::read_labels(&labels_path).with_context(|| labels_path.display().to_string())?;
            let videos = load_videos(&a.data.join("volumes"), &a.data.join("trajectories"), &table)?;
            let report = run_pipeline(&cfg, &videos, &table, Some(&a.out))?;
            print!("{}", report.eval);
            println!("config_hash={}", report.config_hash);
        }
    }
    Ok(())
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Normalize { .. } => "normalize",
        Command::TrajPool { .. } => "traj-pool",
        Command::FitPca { .. } => "fit-pca",
        Command::FitGmm { .. } => "fit-gmm",
        Command::Encode { .. } => "encode",
        Command::VideoPool { .. } => "video-pool",
        Command::Fuse { .. } => "fuse",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Eval { .. } => "eval",
        Command::Synth(_) => "synth",
        Command::Run(_) => "run",
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EPT_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow!("EPT_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("EPT_THREADS must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stage = stage_name(&cli.command);
    match configure_threads().and_then(|_| execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ept {stage}: {e:#}");
            ExitCode::FAILURE
        }
    }
}
