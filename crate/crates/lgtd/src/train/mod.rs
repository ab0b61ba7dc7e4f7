//! Optimisation loop, loss, optimiser, and the finite-difference oracle.

pub mod adam;
pub mod gradcheck;
pub mod loss;

pub use adam::Adam;
pub use gradcheck::{grad_check, rel_err, GradCheckReport};
pub use loss::{l1_loss, l1_loss_backward};

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{augment, sample_patch, AugmentFlags, Frame, PairedSample};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalProtocol};
use crate::model::{batch_to_tensor, clip_to_tensor, Lgtd};
use crate::nn::{Grads, ParamStore};

/// Optimisation hyper-parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Clips per optimisation step.
    pub batch_size: usize,
    /// Low-resolution square patch side sampled from each clip.
    pub patch_size: usize,
    /// Learning rate at epoch zero.
    pub lr_init: f64,
    /// Epoch interval at which the rate halves (no floor).
    pub halve_every: usize,
    pub epochs: usize,
    /// Steps per epoch; defaults to one pass over the training clips.
    pub iters_per_epoch: Option<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seed for batch sampling, patch positions, and augmentation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            patch_size: 64,
            lr_init: 1e-4,
            halve_every: 10,
            epochs: 50,
            iters_per_epoch: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: &str| Err(Error::config(field, detail));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.patch_size == 0 || self.patch_size % 2 != 0 {
            return bad("patch_size", "must be positive and even");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init", "must be positive and finite");
        }
        if self.halve_every == 0 {
            return bad("halve_every", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.iters_per_epoch == Some(0) {
            return bad("iters_per_epoch", "must be positive when given");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(name, "must lie in [0, 1)");
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive");
        }
        Ok(())
    }
}

/// Stepwise-halving schedule: `lr_init * 0.5^(epoch / halve_every)`,
/// integer division, no floor.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_init * 0.5f64.powi((epoch / cfg.halve_every) as i32)
}

/// One line of the training log. `val_psnr`/`val_ssim` are filled only on
/// the last iteration of each epoch (after validation runs); `wallclock` is
/// seconds since training started and is the only non-deterministic column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub wallclock: f64,
}

/// What a finished run hands back.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<TrainLogRow>,
    /// Path of the final checkpoint, when an output directory was given.
    pub final_checkpoint: Option<PathBuf>,
    /// Mean validation scores after the last epoch (absent without a
    /// validation set).
    pub final_val_psnr: Option<f64>,
    pub final_val_ssim: Option<f64>,
}

/// Writes the log as CSV: `iter,epoch,lr,loss,valPSNR,valSSIM,wallclock`.
/// Numeric cells use the shortest round-trip float form, so two logs are
/// textually identical exactly when the underlying runs were; empty cells
/// mark iterations without validation.
pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,epoch,lr,loss,valPSNR,valSSIM,wallclock")?;
    let opt = |v: Option<f64>| v.map(crate::metrics::csv_score).unwrap_or_default();
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{:.3}",
            r.iter,
            r.epoch,
            r.lr,
            r.loss,
            opt(r.val_psnr),
            opt(r.val_ssim),
            r.wallclock
        )?;
    }
    f.flush()?;
    Ok(())
}

fn hr_batch_tensor(frames: &[&Frame]) -> ArrayD<f64> {
    let (h, w) = (frames[0].h(), frames[0].w());
    let mut out = ArrayD::<f64>::zeros(vec![frames.len(), 3, h, w]);
    for (bi, f) in frames.iter().enumerate() {
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    out[[bi, c, i, j]] = f.pixels[[c, i, j]];
                }
            }
        }
    }
    out
}

/// Mean validation scores of the model over paired samples (clamped
/// inference, default protocol on the luma channel).
pub fn validate(
    model: &Lgtd,
    ps: &ParamStore,
    val_set: &[PairedSample],
    proto: &EvalProtocol,
) -> Result<(f64, f64)> {
    let mut sum_p = 0.0;
    let mut sum_s = 0.0;
    for sample in val_set {
        let x = clip_to_tensor(&sample.lr);
        let y = model.infer(ps, &x)?;
        let (h, w) = (sample.hr.h(), sample.hr.w());
        let mut px = ndarray::Array3::zeros((3, h, w));
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    px[[c, i, j]] = y[[0, c, i, j]];
                }
            }
        }
        let out = Frame::from_clamped(px);
        sum_p += metrics::psnr(&out, &sample.hr, proto)?;
        sum_s += metrics::ssim(&out, &sample.hr, proto)?;
    }
    let n = val_set.len() as f64;
    Ok((sum_p / n, sum_s / n))
}

/// Runs the optimisation loop: per iteration, sample a batch of clips,
/// crop aligned patches, apply a random dihedral transform, take one
/// mean-absolute-error gradient step; per epoch, update the learning rate,
/// validate, and checkpoint.
///
/// All randomness flows from one generator seeded with `cfg.seed`, so two
/// runs with the same seed and data produce bitwise-identical parameters
/// and loss logs. A non-finite loss or gradient aborts with the batch
/// indices, learning rate, and gradient norm in the error.
pub fn train(
    model: &Lgtd,
    ps: &mut ParamStore,
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let t = model.cfg.t();
    for (i, s) in train_set.iter().chain(val_set.iter()).enumerate() {
        if s.lr.len() != t {
            return Err(Error::Training(format!(
                "sample {i} has {} frames, the model consumes {t}",
                s.lr.len()
            )));
        }
        if s.r != model.cfg.r {
            return Err(Error::Training(format!(
                "sample {i} pairs at scale {}, the model upsamples by {}",
                s.r, model.cfg.r
            )));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(ps, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut grads = Grads::zeros_like(ps);
    let iters = cfg
        .iters_per_epoch
        .unwrap_or_else(|| train_set.len().div_ceil(cfg.batch_size));
    // Progress validation shrinks the border crop when the validation
    // frames are too small to keep a structural-similarity window after
    // the conventional 8-pixel crop.
    let proto = match val_set.first() {
        Some(s) => {
            let side = s.hr.h().min(s.hr.w());
            let max_crop = side.saturating_sub(metrics::SSIM_WINDOW) / 2;
            EvalProtocol {
                border_crop: EvalProtocol::default().border_crop.min(max_crop),
                ..Default::default()
            }
        }
        None => EvalProtocol::default(),
    };
    let start = Instant::now();

    let mut rows: Vec<TrainLogRow> = Vec::with_capacity(cfg.epochs * iters);
    let mut global_iter = 0usize;
    let mut last_val: (Option<f64>, Option<f64>) = (None, None);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        for _ in 0..iters {
            global_iter += 1;
            let indices: Vec<usize> = (0..cfg.batch_size)
                .map(|_| rng.gen_range(0..train_set.len()))
                .collect();
            let mut lr_clips = Vec::with_capacity(cfg.batch_size);
            let mut hr_frames = Vec::with_capacity(cfg.batch_size);
            for &idx in &indices {
                let patch = sample_patch(&train_set[idx], cfg.patch_size, &mut rng)?;
                let flags = AugmentFlags::random(&mut rng);
                let aug = augment(&patch, flags);
                lr_clips.push(aug.lr);
                hr_frames.push(aug.hr);
            }
            let x = batch_to_tensor(&lr_clips);
            let gt = hr_batch_tensor(&hr_frames.iter().collect::<Vec<_>>());

            let (sr, ctx) = match model.forward(ps, &x) {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    return Err(Error::Training(format!(
                        "non-finite {what} at iter {global_iter} (epoch {epoch}): \
                         lr {lr}, batch indices {indices:?}"
                    )));
                }
                Err(e) => return Err(e),
            };
            let loss = l1_loss(&sr, &gt)?;
            let dy = l1_loss_backward(&sr, &gt)?;
            grads.reset();
            model.backward(ps, &ctx, &dy, &mut grads);
            let gnorm = grads.global_norm();
            if !loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite training signal at iter {global_iter} (epoch {epoch}): \
                     loss {loss}, gradient norm {gnorm}, lr {lr}, batch indices {indices:?}"
                )));
            }
            adam.step(ps, &grads, lr);

            rows.push(TrainLogRow {
                iter: global_iter,
                epoch,
                lr,
                loss,
                val_psnr: None,
                val_ssim: None,
                wallclock: start.elapsed().as_secs_f64(),
            });
        }

        if !val_set.is_empty() {
            let (vp, vs) = validate(model, ps, val_set, &proto)?;
            last_val = (Some(vp), Some(vs));
            if let Some(row) = rows.last_mut() {
                row.val_psnr = Some(vp);
                row.val_ssim = Some(vs);
            }
        }
        if let Some(dir) = out_dir {
            checkpoint::save(
                &dir.join(format!("epoch_{epoch:04}.ckpt")),
                &model.cfg,
                ps,
                Some(&adam),
                Some(&rng),
                epoch,
                global_iter,
            )?;
        }
    }

    let final_checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join("final.ckpt");
            checkpoint::save(
                &path,
                &model.cfg,
                ps,
                Some(&adam),
                Some(&rng),
                cfg.epochs.saturating_sub(1),
                global_iter,
            )?;
            write_train_log(&dir.join("train_log.csv"), &rows)?;
            Some(path)
        }
        None => None,
    };

    Ok(TrainOutcome {
        rows,
        final_checkpoint,
        final_val_psnr: last_val.0,
        final_val_ssim: last_val.1,
    })
}

#[cfg(test)]
mod schedule_tests {
    use super::*;

    #[test]
    fn halving_schedule_matches_closed_form() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert_eq!(lr_at(9, &cfg), 1e-4);
        assert_eq!(lr_at(10, &cfg), 5e-5);
        assert_eq!(lr_at(19, &cfg), 5e-5);
        assert_eq!(lr_at(20, &cfg), 2.5e-5);
        assert!((lr_at(49, &cfg) - 6.25e-6).abs() < 1e-20);
    }

    #[test]
    fn schedule_has_no_floor() {
        let cfg = TrainConfig { lr_init: 1.0, halve_every: 1, ..TrainConfig::default() };
        assert_eq!(lr_at(60, &cfg), 0.5f64.powi(60));
    }

    #[test]
    fn config_validation_names_the_offending_field() {
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
        let bad = TrainConfig { adam_beta1: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("adam_beta1"));
        TrainConfig::default().validate().unwrap();
    }
}

#[cfg(test)]
mod loop_tests {
    use super::*;
    use crate::data::{synth_scene, SynthParams};
    use crate::model::{ModelConfig, ReconMode};

    fn micro_model() -> ModelConfig {
        ModelConfig {
            n: 1,
            c: 4,
            r: 2,
            recon_blocks: 1,
            msa_heads: 2,
            window_size: 2,
            ca_reduction: 2,
            ..ModelConfig::default()
        }
    }

    fn clips(n: usize, frames: usize, hw: usize, r: usize, seed: u64) -> Vec<PairedSample> {
        (0..n)
            .map(|k| {
                let p = SynthParams {
                    num_frames: frames,
                    height: hw,
                    width: hw,
                    num_objects: 2,
                    max_speed: 1.0,
                    texture_scale: 6.0,
                };
                let hr = synth_scene(seed + k as u64, &p).unwrap();
                PairedSample::from_hr_clip(&hr, r).unwrap()
            })
            .collect()
    }

    fn quick_cfg(epochs: usize, iters: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            patch_size: 8,
            lr_init: 1e-3,
            halve_every: 1,
            epochs,
            iters_per_epoch: Some(iters),
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn two_hundred_iterations_reduce_the_loss() {
        let mcfg = ModelConfig {
            recon_mode: ReconMode::Resblock,
            ..micro_model()
        };
        let (model, mut ps) = Lgtd::build(&mcfg, 7).unwrap();
        let data = clips(32, 3, 16, 2, 100);
        let out = train(&model, &mut ps, &data, &[], &quick_cfg(2, 100), None).unwrap();
        assert_eq!(out.rows.len(), 200);
        let first = out.rows[0].loss;
        let last = out.rows[199].loss;
        assert!(
            last < first,
            "loss failed to descend: started {first}, ended {last}"
        );
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_logs() {
        let mcfg = micro_model();
        let data = clips(6, 3, 16, 2, 50);
        let run = |seed: u64| {
            let (model, mut ps) = Lgtd::build(&mcfg, 3).unwrap();
            let cfg = TrainConfig { seed, ..quick_cfg(1, 12) };
            train(&model, &mut ps, &data, &[], &cfg, None).unwrap()
        };
        let a = run(42);
        let b = run(42);
        let c = run(43);
        let losses = |o: &TrainOutcome| o.rows.iter().map(|r| r.loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b), "same seed must replay bitwise");
        assert_ne!(losses(&a), losses(&c), "different seed must diverge");
    }

    #[test]
    fn epoch_boundaries_carry_validation_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mcfg = micro_model();
        let (model, mut ps) = Lgtd::build(&mcfg, 11).unwrap();
        let data = clips(4, 3, 24, 2, 200);
        let out = train(
            &model,
            &mut ps,
            &data,
            &data[..2],
            &quick_cfg(2, 3),
            Some(dir.path()),
        )
        .unwrap();

        // Validation scores only on the last row of each epoch.
        for (i, row) in out.rows.iter().enumerate() {
            let at_epoch_end = (i + 1) % 3 == 0;
            assert_eq!(row.val_psnr.is_some(), at_epoch_end, "row {i}");
            assert_eq!(row.val_ssim.is_some(), at_epoch_end, "row {i}");
        }
        assert!(out.final_val_psnr.is_some());

        // Learning rate halves each epoch under halve_every = 1.
        assert_eq!(out.rows[0].lr, 1e-3);
        assert_eq!(out.rows[3].lr, 5e-4);

        // Checkpoints and the log land in the output directory.
        assert!(dir.path().join("epoch_0000.ckpt").exists());
        assert!(dir.path().join("epoch_0001.ckpt").exists());
        let final_path = out.final_checkpoint.unwrap();
        assert!(final_path.exists());
        let text = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,epoch,lr,loss,valPSNR,valSSIM,wallclock");
        assert_eq!(lines.len(), 7);
        // Off-epoch rows leave the validation cells empty.
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[4], "");
        assert_eq!(cells[5], "");
        let end_cells: Vec<&str> = lines[3].split(',').collect();
        assert!(!end_cells[4].is_empty());

        // The final checkpoint restores to the exact trained parameters.
        let loaded = checkpoint::load(&final_path).unwrap();
        for (a, b) in ps.values().iter().zip(loaded.ps.values().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn runaway_learning_rate_aborts_with_diagnostics() {
        let mcfg = micro_model();
        let (model, mut ps) = Lgtd::build(&mcfg, 5).unwrap();
        let data = clips(2, 3, 16, 2, 300);
        let cfg = TrainConfig {
            lr_init: 1e25,
            ..quick_cfg(1, 50)
        };
        let err = train(&model, &mut ps, &data, &[], &cfg, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("non-finite"), "{err}");
        assert!(err.contains("batch indices"), "{err}");
        assert!(err.contains("lr"), "{err}");
    }

    #[test]
    fn mismatched_data_is_rejected_up_front() {
        let mcfg = micro_model();
        let (model, mut ps) = Lgtd::build(&mcfg, 2).unwrap();
        let err = train(&model, &mut ps, &[], &[], &quick_cfg(1, 1), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("empty"), "{err}");

        // Wrong frame count for the model's window.
        let five = clips(1, 5, 16, 2, 400);
        let err = train(&model, &mut ps, &five, &[], &quick_cfg(1, 1), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("frames"), "{err}");

        // Wrong pairing scale.
        let wrong_scale = clips(1, 3, 16, 4, 500);
        let err = train(&model, &mut ps, &wrong_scale, &[], &quick_cfg(1, 1), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("scale"), "{err}");
    }
}
