//! Command-line front end: training, evaluation, inference, synthetic data
//! generation, the ablation sweep, model statistics, and temporal-profile
//! rendering.
//!
//! Configuration comes from a TOML file with `[model]`, `[train]`, and
//! `[eval]` tables (every field optional, defaults apply), overridden by
//! repeated `--set table.key=value` flags. The fully resolved configuration
//! is written next to each run's outputs so results stay reproducible. The
//! output root comes from `--out-dir`, falling back to the `LGTD_OUT_ROOT`
//! environment variable, then `./lgtd-out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ablation;
use crate::checkpoint;
use crate::data::{
    degrade, load_dataset, load_scene, save_frame, synth_scene, upsample_frame, write_scene,
    Clip, Frame, PairedSample, SceneEntry, SynthParams,
};
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate_scene_with, EvalProtocol, SceneReport};
use crate::model::{self, clip_to_tensor, Lgtd, ModelConfig};
use crate::plot::{line_chart, Series};
use crate::train::{self, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "LGTD_OUT_ROOT";

/// The three config tables every command shares.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalProtocol,
}

#[derive(Debug, Parser)]
#[command(
    name = "lgtd",
    about = "Video super-resolution with local and global temporal differences"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file ([model]/[train]/[eval] tables).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. --set model.c=32. Repeatable;
    /// applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory (default: $LGTD_OUT_ROOT, then ./lgtd-out).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a dataset of PNG scenes.
    Train {
        /// Dataset root: one sub-directory of frames per scene.
        #[arg(long)]
        data: PathBuf,
        /// Hold out every k-th training window for validation (0 = none).
        #[arg(long, default_value_t = 10)]
        holdout_every: usize,
    },
    /// Score a checkpoint (or the bicubic baseline) on a dataset's test
    /// scenes.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to evaluate. Omit with --baseline.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score plain bicubic interpolation instead of a model.
        #[arg(long, default_value_t = false)]
        baseline: bool,
    },
    /// Super-resolve one scene directory of low-resolution frames.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of LR PNG frames named by index.
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic dataset of moving-object scenes.
    SynthData {
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every registered architecture variant briefly and tabulate.
    Ablate {
        /// Optimisation steps per variant.
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Synthetic training scenes to generate for the sweep.
        #[arg(long, default_value_t = 8)]
        scenes: usize,
    },
    /// Print parameter and FLOP counts for the configured model.
    Stats {
        #[arg(long, default_value_t = 160)]
        height: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
    },
    /// Render a temporal profile: one pixel row from every frame, stacked.
    Profile {
        /// Directory of PNG frames named by index.
        #[arg(long)]
        input: PathBuf,
        /// Pixel row to extract (default: the middle row).
        #[arg(long)]
        row: Option<usize>,
    },
}

/// Applies `--set key=value` overrides onto a parsed TOML table.
fn apply_set(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("{spec:?} is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config("--set", format!("{spec:?} has an empty key")));
    }
    // Parse the value as TOML; fall back to a plain string for bare words
    // like enum variants (--set model.recon_mode=hybrid).
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut node = table;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::config(key.to_string(), format!("{part} is a value, not a table"))
            })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Loads the configuration file (if any), applies overrides, validates.
pub fn resolve_config(file: Option<&Path>, sets: &[String]) -> Result<FullConfig> {
    let mut table: toml::Table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config("--config", format!("cannot read {}: {e}", path.display()))
            })?;
            text.parse().map_err(|e| {
                Error::config("--config", format!("{}: {e}", path.display()))
            })?
        }
        None => toml::Table::new(),
    };
    for s in sets {
        apply_set(&mut table, s)?;
    }
    let cfg: FullConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::config("config", e.to_string()))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn out_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("lgtd-out"))
}

/// Writes the resolved configuration next to a run's outputs.
fn write_resolved_config(dir: &Path, cfg: &FullConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(())
}

/// All overlapping windows of `t` frames from a scene, paired with the
/// centre-frame ground truth at scale `r`.
fn scene_windows(scene: &SceneEntry, t: usize, r: usize) -> Result<Vec<PairedSample>> {
    let clip = scene.load_all()?;
    if clip.len() < t {
        return Err(Error::Scene {
            scene: scene.id.clone(),
            detail: format!("{} frames, the model consumes {t}", clip.len()),
        });
    }
    (0..=clip.len() - t)
        .map(|s| {
            let window = Clip::new(clip.frames[s..s + t].to_vec(), scene.id.clone(), s)?;
            PairedSample::from_hr_clip(&window, r)
        })
        .collect()
}

fn model_frame_from_output(y: &ndarray::ArrayD<f64>) -> Frame {
    let (h, w) = (y.shape()[2], y.shape()[3]);
    let mut px = ndarray::Array3::zeros((3, h, w));
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                px[[c, i, j]] = y[[0, c, i, j]];
            }
        }
    }
    Frame::from_clamped(px)
}

/// Runs a checkpointed model over one scene with the standard sliding
/// window and scores it against the ground truth.
pub fn evaluate_scene_model(
    model: &Lgtd,
    ps: &crate::nn::ParamStore,
    scene_id: &str,
    lr: &[Frame],
    hr: &[Frame],
    proto: &EvalProtocol,
) -> Result<SceneReport> {
    let t = model.cfg.t();
    evaluate_scene_with(scene_id, lr, hr, t, proto, |win| {
        let clip = Clip::new(win.to_vec(), scene_id, 0)?;
        let y = model.infer(ps, &clip_to_tensor(&clip))?;
        Ok(model_frame_from_output(&y))
    })
}

/// Scores plain bicubic enlargement of the window centre over one scene.
pub fn evaluate_scene_bicubic(
    scene_id: &str,
    lr: &[Frame],
    hr: &[Frame],
    t: usize,
    r: usize,
    proto: &EvalProtocol,
) -> Result<SceneReport> {
    evaluate_scene_with(scene_id, lr, hr, t, proto, |win| {
        Ok(upsample_frame(&win[win.len() / 2], r))
    })
}

fn cmd_train(cfg: &FullConfig, data: &Path, holdout_every: usize, out: &Path) -> Result<()> {
    let index = load_dataset(data)?;
    let t = cfg.model.t();
    let mut train_set = Vec::new();
    for scene in index.train_scenes() {
        train_set.extend(scene_windows(scene, t, cfg.model.r)?);
    }
    // Validation: the manifest's test split when present, otherwise a
    // deterministic holdout of every k-th training window.
    let mut val_set = Vec::new();
    if index.manifest.is_some() {
        for scene in index.test_scenes() {
            val_set.extend(scene_windows(scene, t, cfg.model.r)?);
        }
    } else if holdout_every > 0 {
        let mut kept = Vec::new();
        for (i, s) in train_set.drain(..).enumerate() {
            if (i + 1) % holdout_every == 0 {
                val_set.push(s);
            } else {
                kept.push(s);
            }
        }
        train_set = kept;
    }

    write_resolved_config(out, cfg)?;
    let (model, mut ps) = Lgtd::build(&cfg.model, cfg.train.seed)?;
    println!(
        "training on {} windows ({} held out), {} parameters",
        train_set.len(),
        val_set.len(),
        ps.num_scalars()
    );
    let outcome = train::train(&model, &mut ps, &train_set, &val_set, &cfg.train, Some(out))?;

    let losses: Vec<f64> = outcome.rows.iter().map(|r| r.loss).collect();
    line_chart(&out.join("loss.png"), &[Series::from_values("loss", &losses)], 640, 400)?;
    let vals: Vec<(f64, f64)> = outcome
        .rows
        .iter()
        .filter_map(|r| r.val_psnr.map(|v| (r.iter as f64, v)))
        .collect();
    if !vals.is_empty() {
        line_chart(
            &out.join("val_psnr.png"),
            &[Series { label: "valPSNR", points: vals }],
            640,
            400,
        )?;
    }
    if let (Some(p), Some(s)) = (outcome.final_val_psnr, outcome.final_val_ssim) {
        println!("final validation: PSNR {p:.4} dB, SSIM {s:.6}");
    }
    println!(
        "final loss {:.6}; artefacts in {}",
        outcome.rows.last().map(|r| r.loss).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &FullConfig,
    data: &Path,
    ckpt: Option<&Path>,
    baseline: bool,
    out: &Path,
) -> Result<()> {
    if baseline == ckpt.is_some() {
        return Err(Error::config(
            "--checkpoint",
            "pass exactly one of --checkpoint <file> or --baseline",
        ));
    }
    let index = load_dataset(data)?;
    let loaded = match ckpt {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint {} does not exist",
                    path.display()
                )));
            }
            Some(checkpoint::load(path)?)
        }
        None => None,
    };
    let (t, r) = match &loaded {
        Some(l) => (l.model.cfg.t(), l.model.cfg.r),
        None => (cfg.model.t(), cfg.model.r),
    };

    write_resolved_config(out, cfg)?;
    let mut reports = Vec::new();
    for scene in index.test_scenes() {
        let hr_clip = scene.load_all()?;
        let lr_clip = degrade(&hr_clip, r)?;
        let report = match &loaded {
            Some(l) => evaluate_scene_model(
                &l.model,
                &l.ps,
                &scene.id,
                &lr_clip.frames,
                &hr_clip.frames,
                &cfg.eval,
            )?,
            None => evaluate_scene_bicubic(
                &scene.id,
                &lr_clip.frames,
                &hr_clip.frames,
                t,
                r,
                &cfg.eval,
            )?,
        };
        println!(
            "{}: PSNR {} dB, SSIM {}",
            report.scene,
            metrics::csv_score(report.mean_psnr),
            metrics::csv_score(report.mean_ssim)
        );
        reports.push(report);
    }
    metrics::write_scene_csv(&out.join("scores.csv"), &reports)?;
    let series: Vec<Series> = reports
        .iter()
        .map(|rep| Series {
            label: &rep.scene,
            points: rep
                .frames
                .iter()
                .map(|f| (f.frame_idx as f64, f.psnr))
                .collect(),
        })
        .collect();
    line_chart(&out.join("psnr_per_frame.png"), &series, 640, 400)?;
    let n = reports.len() as f64;
    println!(
        "mean over {} scenes: PSNR {} dB, SSIM {}",
        reports.len(),
        metrics::csv_score(reports.iter().map(|r| r.mean_psnr).sum::<f64>() / n),
        metrics::csv_score(reports.iter().map(|r| r.mean_ssim).sum::<f64>() / n)
    );
    Ok(())
}

fn cmd_infer(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    if !ckpt.is_file() {
        return Err(Error::Checkpoint(format!(
            "checkpoint {} does not exist",
            ckpt.display()
        )));
    }
    let loaded = checkpoint::load(ckpt)?;
    let model = &loaded.model;
    let t = model.cfg.t();
    let n = model.cfg.n;
    let scene = load_scene(input)?;
    let lr = scene.load_all()?;
    if lr.len() < t {
        return Err(Error::Scene {
            scene: scene.id.clone(),
            detail: format!("{} frames, the model consumes {t}", lr.len()),
        });
    }
    std::fs::create_dir_all(out)?;
    let len = lr.len();
    for k in 0..len {
        let window: Vec<Frame> = (0..t)
            .map(|i| lr.frames[(k + i).saturating_sub(n).min(len - 1)].clone())
            .collect();
        let clip = Clip::new(window, scene.id.clone(), 0)?;
        let y = model.infer(&loaded.ps, &clip_to_tensor(&clip))?;
        let frame = model_frame_from_output(&y);
        save_frame(&out.join(format!("{k:04}.png")), &frame)?;
    }
    println!(
        "wrote {len} frames at {}x the input resolution to {}",
        model.cfg.r,
        out.display()
    );
    Ok(())
}

fn cmd_synth(
    scenes: usize,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if scenes == 0 {
        return Err(Error::config("--scenes", "must be positive"));
    }
    let params = SynthParams {
        num_frames: frames,
        height,
        width,
        ..SynthParams::default()
    };
    std::fs::create_dir_all(out)?;
    for k in 0..scenes {
        let mut clip = synth_scene(seed.wrapping_add(k as u64), &params)?;
        clip.scene_id = format!("scene_{k:03}");
        write_scene(out, &clip)?;
    }
    println!("wrote {scenes} scenes of {frames} {width}x{height} frames to {}", out.display());
    Ok(())
}

fn cmd_ablate(cfg: &FullConfig, iters: usize, scenes: usize, out: &Path) -> Result<()> {
    if iters == 0 || scenes == 0 {
        return Err(Error::config("--iters", "iters and scenes must be positive"));
    }
    // Synthetic clips sized for the configured window and scale.
    let t = cfg.model.t();
    let hw = (cfg.train.patch_size * cfg.model.r).max(16 * cfg.model.r);
    let params = SynthParams {
        num_frames: t,
        height: hw,
        width: hw,
        ..SynthParams::default()
    };
    let mut train_set = Vec::new();
    for k in 0..scenes {
        let clip = synth_scene(cfg.train.seed.wrapping_add(1000 + k as u64), &params)?;
        train_set.push(PairedSample::from_hr_clip(&clip, cfg.model.r)?);
    }
    let val_clip = synth_scene(cfg.train.seed.wrapping_add(999), &params)?;
    let val_set = vec![PairedSample::from_hr_clip(&val_clip, cfg.model.r)?];

    let tcfg = TrainConfig {
        epochs: 1,
        iters_per_epoch: Some(iters),
        ..cfg.train.clone()
    };
    write_resolved_config(out, cfg)?;
    let runs = ablation::run_all(&cfg.model, &tcfg, &train_set, &val_set, cfg.train.seed)?;
    ablation::write_csv(&out.join("ablation.csv"), &runs)?;
    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>10} {:>14}",
        "variant", "params", "firstLoss", "lastLoss", "valPSNR", "referencePSNR"
    );
    for r in &runs {
        println!(
            "{:<10} {:>12} {:>12.6} {:>12.6} {:>10} {:>14}",
            r.name,
            r.params,
            r.first_loss,
            r.last_loss,
            r.val_psnr.map(|v| format!("{v:.3}")).unwrap_or_default(),
            r.reference_psnr
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    println!("CSV written to {}", out.join("ablation.csv").display());
    Ok(())
}

fn cmd_stats(cfg: &FullConfig, height: usize, width: usize) -> Result<()> {
    cfg.model.validate()?;
    let params = model::param_count(&cfg.model);
    let flops = model::flops_estimate(&cfg.model, height, width);
    println!("configuration: {}", toml::to_string(&cfg.model).unwrap_or_default().trim().replace('\n', ", "));
    println!();
    println!("{:<28} {:>14}", "module", "parameters");
    for (name, count) in model::param_breakdown(&cfg.model) {
        println!("{name:<28} {count:>14}");
    }
    println!("{:<28} {:>14}", "total", params);
    println!();
    println!(
        "FLOPs for one {width}x{height} low-resolution clip: {:.3e} \
         (conv {:.3e}, attention {:.3e}, dense {:.3e})",
        flops.total(),
        flops.conv,
        flops.attention,
        flops.dense
    );
    let (rh, rw) = model::REFERENCE_INPUT;
    println!(
        "reported for the original implementation at {rw}x{rh}: \
         {:.1e} parameters, {:.1e} FLOPs",
        model::REFERENCE_PARAMS,
        model::REFERENCE_FLOPS
    );
    Ok(())
}

fn cmd_profile(input: &Path, row: Option<usize>, out: &Path) -> Result<()> {
    let scene = load_scene(input)?;
    let clip = scene.load_all()?;
    let row = row.unwrap_or(clip.h() / 2);
    let profile = metrics::temporal_profile(&clip.frames, row)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("profile_row{row}.png"));
    save_frame(&path, &Frame::from_clamped(profile))?;
    println!(
        "temporal profile of row {row} across {} frames written to {}",
        clip.len(),
        path.display()
    );
    Ok(())
}

/// Parses arguments and runs the chosen command.
pub fn run_with<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            Error::Other(String::new())
        }
        _ => Error::config("arguments", e.to_string()),
    })?;
    let cfg = resolve_config(cli.common.config.as_deref(), &cli.common.sets)?;
    let out = out_root(cli.common.out_dir.as_deref());
    match &cli.command {
        Command::Train { data, holdout_every } => cmd_train(&cfg, data, *holdout_every, &out),
        Command::Eval { data, checkpoint, baseline } => {
            cmd_eval(&cfg, data, checkpoint.as_deref(), *baseline, &out)
        }
        Command::Infer { checkpoint, input } => cmd_infer(checkpoint, input, &out),
        Command::SynthData { scenes, frames, height, width, seed } => {
            cmd_synth(*scenes, *frames, *height, *width, *seed, &out)
        }
        Command::Ablate { iters, scenes } => cmd_ablate(&cfg, *iters, *scenes, &out),
        Command::Stats { height, width } => cmd_stats(&cfg, *height, *width),
        Command::Profile { input, row } => cmd_profile(input, *row, &out),
    }
}

/// Binary entry point: returns the process exit code.
pub fn main_entry() -> i32 {
    match run_with(std::env::args_os()) {
        Ok(()) => 0,
        Err(Error::Other(msg)) if msg.is_empty() => 0, // --help / --version
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
