//! Model configuration: architecture sizes plus the ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdmMode {
    /// Encode adjacent-frame differences (the production path).
    Diff,
    /// Encode the raw neighbor frames instead of differences.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LtdmMode {
    /// Cross-difference of forward/backward features drives sigmoid gates.
    Diff,
    /// Concatenate forward/backward features and fuse with one 3x3 conv.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LtdmDirection {
    Both,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Windowed self-attention followed by channel attention, both residual.
    Hybrid,
    /// Plain residual blocks.
    Resblock,
    /// Self-attention sub-block only.
    LaOnly,
    /// Channel-attention sub-block only.
    SaOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Clip half-width: the model consumes 2n+1 frames.
    pub n: usize,
    /// Feature width.
    pub c: usize,
    /// Upscale factor (2 or 4).
    pub r: usize,
    /// Number of reconstruction blocks.
    pub recon_blocks: usize,
    pub msa_heads: usize,
    pub window_size: usize,
    pub ca_reduction: usize,
    /// Deformable alignment kernel size (odd).
    pub deform_kernel: usize,
    /// Offset clamp for deformable alignment, in pixels.
    pub max_disp: f64,
    /// Balance coefficients for the forward/backward gates.
    pub alpha: f64,
    pub beta: f64,
    pub use_stdm: bool,
    pub use_ltdm: bool,
    pub use_dcu: bool,
    pub stdm_mode: StdmMode,
    pub ltdm_mode: LtdmMode,
    pub ltdm_direction: LtdmDirection,
    pub recon_mode: ReconMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 2,
            c: 64,
            r: 4,
            recon_blocks: 5,
            msa_heads: 4,
            window_size: 8,
            ca_reduction: 16,
            deform_kernel: 3,
            max_disp: 16.0,
            alpha: 0.5,
            beta: 0.5,
            use_stdm: true,
            use_ltdm: true,
            use_dcu: true,
            stdm_mode: StdmMode::Diff,
            ltdm_mode: LtdmMode::Diff,
            ltdm_direction: LtdmDirection::Both,
            recon_mode: ReconMode::Hybrid,
        }
    }
}

impl ModelConfig {
    /// Clip length consumed per forward pass.
    pub fn t(&self) -> usize {
        2 * self.n + 1
    }

    /// Modes whose blocks contain windowed self-attention.
    pub fn uses_msa(&self) -> bool {
        matches!(self.recon_mode, ReconMode::Hybrid | ReconMode::SaOnly)
    }

    /// Modes whose blocks contain channel attention.
    pub fn uses_ca(&self) -> bool {
        matches!(self.recon_mode, ReconMode::Hybrid | ReconMode::LaOnly)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: String| Err(Error::config(field, detail));
        if self.n == 0 {
            return bad("n", "need at least one neighbor on each side".into());
        }
        if self.c == 0 {
            return bad("c", "feature width must be positive".into());
        }
        if self.r != 2 && self.r != 4 {
            return bad("r", format!("upscale factor must be 2 or 4, got {}", self.r));
        }
        if self.recon_blocks == 0 {
            return bad("recon_blocks", "need at least one block".into());
        }
        if self.deform_kernel % 2 == 0 || self.deform_kernel == 0 {
            return bad(
                "deform_kernel",
                format!("kernel must be odd, got {}", self.deform_kernel),
            );
        }
        if !(self.max_disp > 0.0) {
            return bad("max_disp", format!("must be positive, got {}", self.max_disp));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("alpha", "balance coefficients must be >= 0".into());
        }
        if self.uses_msa() {
            if self.msa_heads == 0 {
                return bad("msa_heads", "need at least one head".into());
            }
            if self.c % self.msa_heads != 0 {
                return bad(
                    "msa_heads",
                    format!("c={} not divisible by {} heads", self.c, self.msa_heads),
                );
            }
            if self.window_size == 0 {
                return bad("window_size", "must be positive".into());
            }
        }
        if self.uses_ca() && (self.c < self.ca_reduction || self.c % self.ca_reduction != 0) {
            return bad(
                "ca_reduction",
                format!("c={} must be a multiple of {}", self.c, self.ca_reduction),
            );
        }
        if !self.use_stdm && self.stdm_mode == StdmMode::Concat {
            return bad("stdm_mode", "concat variant requires use_stdm=true".into());
        }
        if !self.use_ltdm && self.ltdm_mode == LtdmMode::Concat {
            return bad("ltdm_mode", "concat variant requires use_ltdm=true".into());
        }
        if !self.use_ltdm && self.ltdm_direction != LtdmDirection::Both {
            return bad(
                "ltdm_direction",
                "single-direction variant requires use_ltdm=true".into(),
            );
        }
        if self.ltdm_mode == LtdmMode::Concat && self.ltdm_direction != LtdmDirection::Both {
            return bad(
                "ltdm_direction",
                "single-direction applies only to the difference mode".into(),
            );
        }
        Ok(())
    }

    /// Check an LR input size against the model's divisibility needs.
    pub fn validate_input(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "input",
                format!("spatial dims must be positive and even, got {h}x{w}"),
            ));
        }
        if self.uses_msa() && (h % self.window_size != 0 || w % self.window_size != 0) {
            return Err(Error::shape(
                "input",
                format!(
                    "{h}x{w} not divisible by window size {}",
                    self.window_size
                ),
            ));
        }
        Ok(())
    }
}
