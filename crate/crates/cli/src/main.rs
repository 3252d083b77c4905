//! Command-line surface: dataset generation, training, rendering, evaluation,
//! PLY export, config inspection.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical abort,
//! 4 I/O error.

use clap::{Args, Parser, Subcommand};
use gsavatar_core::cloud::SpaceTag;
use gsavatar_core::config::{Config, ConfigError};
use gsavatar_core::deform::deform_cloud;
use gsavatar_core::fields::predict_canonical_params;
use gsavatar_core::ply::export_ply;
use gsavatar_core::rig::PoseExpression;
use gsavatar_core::splat::oracle::render_oracle;
use gsavatar_core::synthdata::{build_scene, generate_dataset, load_dataset};
use gsavatar_core::trainer::checkpoint::{load_checkpoint, save_checkpoint};
use gsavatar_core::trainer::finetune::finetune_frames;
use gsavatar_core::trainer::metrics::{evaluate, render_frame};
use gsavatar_core::trainer::{train, TrainError, TrainLogs, TrainerState, POINTS_TENSOR};
use gsavatar_core::cloud::GaussianCloud;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "gsavatar", version, about = "Deformable Gaussian point avatar toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Preset to start from (paper, desk).
    #[arg(long)]
    preset: Option<String>,
    /// Config file with `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, repeatable: --set lifecycle.max_points=20000
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed override (dataset.seed for gen-data, train.seed for train).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count; 1 forces fully sequential execution.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an avatar on a dataset.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and logs.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Disable the Gaussian parameter deformation field.
        #[arg(long)]
        ablate_param_deform: bool,
    },
    /// Render frames from a checkpoint.
    Render {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory supplying cameras and latents.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frames to render (default: all).
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
        /// Render with the exhaustive oracle instead of the fast path.
        #[arg(long)]
        oracle: bool,
        /// Override output resolution (cameras rescale accordingly).
        #[arg(long)]
        resolution: Option<usize>,
        /// Ignore stored latents and render the rest pose.
        #[arg(long)]
        rest: bool,
    },
    /// Evaluate a checkpoint on held-out frames.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Refine per-frame latents with N RGB-only Adam steps first.
        #[arg(long, default_value_t = 0)]
        finetune_latents: usize,
        /// Evaluate train-split frames instead of the held-out split.
        #[arg(long)]
        train_split: bool,
        /// Write the metric table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the Gaussian cloud of a checkpoint as binary PLY.
    ExportPly {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export canonical-space parameters instead of a deformed pose.
        #[arg(long)]
        canonical: bool,
        /// Dataset directory for rig/latents (required unless --canonical).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Frame whose latents pose the cloud (default 0).
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Print configuration.
    Config {
        #[command(flatten)]
        common: CommonOpts,
        /// Dump the resolved key-value table.
        #[arg(long)]
        dump: bool,
    },
}

fn build_config(common: &CommonOpts, seed_key: &str) -> Result<Config, ConfigError> {
    let mut cfg = match &common.preset {
        Some(name) => Config::preset(name)?,
        None => Config::default(),
    };
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: kv.clone(),
            msg: "expected KEY=VALUE".into(),
        })?;
        cfg.apply_kv(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.apply_kv(seed_key, &seed.to_string())?;
    }
    Ok(cfg)
}

fn init_threads(common: &CommonOpts) {
    #[cfg(feature = "parallel")]
    if let Some(n) = common.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = common;
}

fn classify_train_error(err: &TrainError) -> u8 {
    use gsavatar_core::autodiff::AutodiffError;
    match err {
        TrainError::NonFiniteLoss { .. } => EXIT_NUMERIC,
        TrainError::Autodiff(AutodiffError::NonFiniteGradient(_)) => EXIT_NUMERIC,
        _ => EXIT_IO,
    }
}

fn run() -> Result<(), (u8, String)> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common, out } => {
            init_threads(&common);
            let cfg = build_config(&common, "dataset.seed")
                .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let scene = build_scene(&cfg).map_err(|e| (EXIT_IO, e.to_string()))?;
            generate_dataset(&scene, &cfg, &out).map_err(|e| (EXIT_IO, e.to_string()))?;
            let n_eval = scene.frames.iter().filter(|f| f.2 == gsavatar_core::synthdata::Split::Eval).count();
            println!(
                "dataset written to {} ({} train + {} eval frames at {}x{}, {} gt points, seed {})",
                out.display(),
                cfg.dataset_n_frames - n_eval,
                n_eval,
                cfg.dataset_resolution,
                cfg.dataset_resolution,
                cfg.dataset_n_points,
                cfg.dataset_seed
            );
            Ok(())
        }
        Command::Train { common, data, out, resume, ablate_param_deform } => {
            init_threads(&common);
            let mut cfg =
                build_config(&common, "train.seed").map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            if ablate_param_deform {
                cfg.train_ablate_param_deform = true;
            }
            let dataset = load_dataset(&data).map_err(|e| (EXIT_IO, e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| (EXIT_IO, e.to_string()))?;
            let mut state = match resume {
                Some(path) => {
                    let (mut state, _) =
                        load_checkpoint(&path).map_err(|e| (EXIT_IO, e.to_string()))?;
                    // Epoch budget may be extended on resume.
                    state.config.train_epochs = cfg.train_epochs;
                    state
                }
                None => TrainerState::new(cfg, dataset.rig.n_joints, dataset.rig.n_expressions),
            };
            let mut logs = TrainLogs::default();
            let every = state.config.train_checkpoint_every.max(1);
            let t0 = std::time::Instant::now();
            let result = train(&mut state, &dataset, &mut logs, |state, stats| {
                println!(
                    "epoch {:>4}: loss {:.6} (rgb {:.6}) points {} [{:.1}s]",
                    state.epoch - 1,
                    stats.mean_loss,
                    stats.mean_parts.rgb,
                    stats.points_after,
                    t0.elapsed().as_secs_f64()
                );
                if state.epoch % every == 0 {
                    save_checkpoint(
                        state,
                        &dataset.rig,
                        &out.join(format!("checkpoint_{:04}.ckpt", state.epoch)),
                    )?;
                }
                Ok(())
            });
            std::fs::write(out.join("metrics.csv"), &logs.metrics_csv)
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            std::fs::write(out.join("schedule.csv"), &logs.schedule_csv)
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            if let Err(e) = result {
                let code = classify_train_error(&e);
                let dump = out.join("abort_dump.txt");
                let _ = std::fs::write(
                    &dump,
                    format!("{e}\nepoch = {}\npoints = {}\n", state.epoch, state.n_points()),
                );
                let _ = save_checkpoint(&state, &dataset.rig, &out.join("abort_state.ckpt"));
                return Err((code, format!("{e} (diagnostics in {})", dump.display())));
            }
            save_checkpoint(&state, &dataset.rig, &out.join("checkpoint.ckpt"))
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            println!(
                "trained {} epochs in {:.1}s; checkpoint at {}",
                state.epoch,
                t0.elapsed().as_secs_f64(),
                out.join("checkpoint.ckpt").display()
            );
            Ok(())
        }
        Command::Render { common, checkpoint, data, out, frames, oracle, resolution, rest } => {
            init_threads(&common);
            let (state, rig) = load_checkpoint(&checkpoint).map_err(|e| (EXIT_IO, e.to_string()))?;
            let mut dataset = load_dataset(&data).map_err(|e| (EXIT_IO, e.to_string()))?;
            if rig != dataset.rig {
                return Err((EXIT_CONFIG, "checkpoint rig does not match dataset rig".into()));
            }
            if let Some(res) = resolution {
                for rec in &mut dataset.frames {
                    rec.camera =
                        rec.camera.with_resolution(res, res).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
                }
            }
            std::fs::create_dir_all(&out).map_err(|e| (EXIT_IO, e.to_string()))?;
            let list: Vec<usize> =
                if frames.is_empty() { (0..dataset.frames.len()).collect() } else { frames };
            for &f in &list {
                if f >= dataset.frames.len() {
                    return Err((EXIT_CONFIG, format!("frame {f} out of range")));
                }
                let rest_pose = PoseExpression::rest(rig.n_joints, rig.n_expressions);
                let pose = if rest { Some(&rest_pose) } else { None };
                let img = if oracle {
                    let rec = &dataset.frames[f];
                    let used_pose = pose.unwrap_or(&rec.pose);
                    let (cloud, _) = deform_cloud(
                        state.store.value(POINTS_TENSOR),
                        &state.store,
                        &state.bundle,
                        used_pose,
                        &rig,
                        state.config.train_ablate_param_deform,
                    )
                    .map_err(|e| (EXIT_NUMERIC, e.to_string()))?;
                    render_oracle(&cloud, &rec.camera, state.rendering_radius(), dataset.background)
                } else {
                    render_frame(&state, &dataset, f, pose)
                        .map_err(|e| (classify_train_error(&e), e.to_string()))?
                };
                let path = out.join(format!("render_{f:04}.png"));
                img.save_png(&path).map_err(|e| (EXIT_IO, e.to_string()))?;
            }
            println!("rendered {} frames to {}", list.len(), out.display());
            Ok(())
        }
        Command::Eval { common, checkpoint, data, finetune_latents, train_split, out } => {
            init_threads(&common);
            let (state, rig) = load_checkpoint(&checkpoint).map_err(|e| (EXIT_IO, e.to_string()))?;
            let dataset = load_dataset(&data).map_err(|e| (EXIT_IO, e.to_string()))?;
            if rig != dataset.rig {
                return Err((EXIT_CONFIG, "checkpoint rig does not match dataset rig".into()));
            }
            let frames = if train_split { dataset.train_frames() } else { dataset.eval_frames() };
            let overrides = if finetune_latents > 0 {
                let outcomes = finetune_frames(&state, &dataset, &frames, finetune_latents)
                    .map_err(|e| (classify_train_error(&e), e.to_string()))?;
                Some(outcomes.into_iter().map(|o| o.pose).collect::<Vec<_>>())
            } else {
                None
            };
            let report = evaluate(&state, &dataset, &frames, overrides.as_deref())
                .map_err(|e| (classify_train_error(&e), e.to_string()))?;
            print!("{}", report.csv());
            println!(
                "mean: l1 {:.5}  psnr {:.2} dB  ssim {:.4}  ({} frames{})",
                report.mean.l1,
                report.mean.psnr,
                report.mean.ssim,
                frames.len(),
                if finetune_latents > 0 {
                    format!(", {finetune_latents} finetune steps")
                } else {
                    String::new()
                }
            );
            if let Some(path) = out {
                std::fs::write(&path, report.csv()).map_err(|e| (EXIT_IO, e.to_string()))?;
            }
            Ok(())
        }
        Command::ExportPly { common, checkpoint, out, canonical, data, frame } => {
            init_threads(&common);
            let (state, rig) = load_checkpoint(&checkpoint).map_err(|e| (EXIT_IO, e.to_string()))?;
            let cloud: GaussianCloud = if canonical {
                let x_c = state.store.value(POINTS_TENSOR);
                let n = x_c.len() / 3;
                let (params, _) = predict_canonical_params(&state.store, &state.bundle, x_c, n)
                    .map_err(|e| (EXIT_NUMERIC, e.to_string()))?;
                let mut cloud = GaussianCloud::with_capacity(n, SpaceTag::Canonical);
                for i in 0..n {
                    cloud.push(
                        [x_c[3 * i], x_c[3 * i + 1], x_c[3 * i + 2]],
                        params.quat(i),
                        params.scale(i),
                        params.opacity(i),
                        params.color(i),
                    );
                }
                cloud
            } else {
                let pose = match &data {
                    Some(dir) => {
                        let dataset = load_dataset(dir).map_err(|e| (EXIT_IO, e.to_string()))?;
                        if frame >= dataset.frames.len() {
                            return Err((EXIT_CONFIG, format!("frame {frame} out of range")));
                        }
                        dataset.frames[frame].pose.clone()
                    }
                    None => PoseExpression::rest(rig.n_joints, rig.n_expressions),
                };
                let (cloud, _) = deform_cloud(
                    state.store.value(POINTS_TENSOR),
                    &state.store,
                    &state.bundle,
                    &pose,
                    &rig,
                    state.config.train_ablate_param_deform,
                )
                .map_err(|e| (EXIT_NUMERIC, e.to_string()))?;
                cloud
            };
            export_ply(&cloud, &out).map_err(|e| (EXIT_IO, e.to_string()))?;
            println!("exported {} points to {}", cloud.len(), out.display());
            Ok(())
        }
        Command::Config { common, dump } => {
            let cfg = build_config(&common, "train.seed")
                .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            if dump {
                print!("{}", cfg.dump());
            } else {
                println!("use --dump to print the resolved configuration");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
