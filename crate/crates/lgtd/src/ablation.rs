//! The ablation registry: every architectural variant the experiments
//! compare, each expressed as a delta on a base configuration.
//!
//! Entries that were benchmarked on the standard evaluation set carry the
//! reported luma PSNR in dB for context; entries without a published score
//! carry `None`. The runner trains each variant briefly and writes one CSV
//! row per entry so the relative behaviour of the variants can be eyeballed
//! against those reference numbers.

use std::io::Write as _;
use std::path::Path;

use crate::data::PairedSample;
use crate::error::Result;
use crate::metrics::csv_score;
use crate::model::{
    Lgtd, LtdmDirection, LtdmMode, ModelConfig, ReconMode, StdmMode,
};
use crate::train::{train, TrainConfig, TrainOutcome};

/// One architectural variant: a name, what changes, the configuration
/// delta, and the reference luma PSNR (dB) where one was reported.
pub struct AblationEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub reference_psnr: Option<f64>,
    apply: fn(&mut ModelConfig),
}

impl AblationEntry {
    /// The variant's configuration, derived from `base`.
    pub fn config(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        (self.apply)(&mut cfg);
        cfg
    }
}

/// All registered variants, the full model first.
pub fn registry() -> Vec<AblationEntry> {
    vec![
        AblationEntry {
            name: "full",
            description: "complete model: both temporal-difference branches, \
                          difference computation, dual-direction gating, \
                          feature comparison units, hybrid reconstruction",
            reference_psnr: Some(35.38),
            apply: |_| {},
        },
        AblationEntry {
            name: "model-1",
            description: "short-range branch only (long-range branch removed)",
            reference_psnr: Some(35.28),
            apply: |c| c.use_ltdm = false,
        },
        AblationEntry {
            name: "model-2",
            description: "long-range branch only (short-range branch removed)",
            reference_psnr: Some(35.34),
            apply: |c| c.use_stdm = false,
        },
        AblationEntry {
            name: "model-3",
            description: "short-range branch encodes raw neighbour frames \
                          instead of temporal differences",
            reference_psnr: None,
            apply: |c| c.stdm_mode = StdmMode::Concat,
        },
        AblationEntry {
            name: "model-4",
            description: "long-range branch concatenates the two frame orders \
                          instead of computing their cross-difference",
            reference_psnr: None,
            apply: |c| c.ltdm_mode = LtdmMode::Concat,
        },
        AblationEntry {
            name: "model-5",
            description: "both branches switched from differences to \
                          concatenation",
            reference_psnr: None,
            apply: |c| {
                c.stdm_mode = StdmMode::Concat;
                c.ltdm_mode = LtdmMode::Concat;
            },
        },
        AblationEntry {
            name: "model-6",
            description: "long-range gating from the forward frame order only",
            reference_psnr: Some(35.15),
            apply: |c| c.ltdm_direction = LtdmDirection::Forward,
        },
        AblationEntry {
            name: "model-7",
            description: "long-range gating from the backward frame order only",
            reference_psnr: Some(35.28),
            apply: |c| c.ltdm_direction = LtdmDirection::Backward,
        },
        AblationEntry {
            name: "model-8",
            description: "feature comparison units replaced by plain \
                          concatenate-and-fuse stages",
            reference_psnr: None,
            apply: |c| c.use_dcu = false,
        },
        AblationEntry {
            name: "model-9",
            description: "reconstruction uses plain residual blocks instead \
                          of attention",
            reference_psnr: Some(34.83),
            apply: |c| c.recon_mode = ReconMode::Resblock,
        },
        AblationEntry {
            name: "model-10",
            description: "reconstruction keeps only the channel-attention \
                          half of each block",
            reference_psnr: Some(35.26),
            apply: |c| c.recon_mode = ReconMode::LaOnly,
        },
        AblationEntry {
            name: "model-11",
            description: "reconstruction keeps only the windowed \
                          self-attention half of each block",
            reference_psnr: Some(34.72),
            apply: |c| c.recon_mode = ReconMode::SaOnly,
        },
    ]
}

/// Result of briefly training one variant.
pub struct AblationRun {
    pub name: &'static str,
    pub reference_psnr: Option<f64>,
    pub params: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

/// Builds every variant from `base`, trains each for the steps `tcfg`
/// specifies on the given data, and collects comparable numbers.
pub fn run_all(
    base: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    seed: u64,
) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::new();
    for entry in registry() {
        let cfg = entry.config(base);
        let (model, mut ps) = Lgtd::build(&cfg, seed)?;
        let params = ps.num_scalars();
        let out: TrainOutcome = train(&model, &mut ps, train_set, val_set, tcfg, None)?;
        runs.push(AblationRun {
            name: entry.name,
            reference_psnr: entry.reference_psnr,
            params,
            first_loss: out.rows.first().map(|r| r.loss).unwrap_or(f64::NAN),
            last_loss: out.rows.last().map(|r| r.loss).unwrap_or(f64::NAN),
            val_psnr: out.final_val_psnr,
            val_ssim: out.final_val_ssim,
        });
    }
    Ok(runs)
}

/// Writes ablation results as CSV:
/// `variant,params,firstLoss,lastLoss,valPSNR,valSSIM,referencePSNR`.
pub fn write_csv(path: &Path, runs: &[AblationRun]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "variant,params,firstLoss,lastLoss,valPSNR,valSSIM,referencePSNR")?;
    let opt = |v: Option<f64>| v.map(csv_score).unwrap_or_default();
    for r in runs {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.name,
            r.params,
            csv_score(r.first_loss),
            csv_score(r.last_loss),
            opt(r.val_psnr),
            opt(r.val_ssim),
            opt(r.reference_psnr),
        )?;
    }
    f.flush()?;
    Ok(())
}
