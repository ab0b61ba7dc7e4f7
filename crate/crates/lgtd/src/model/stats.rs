//! Closed-form parameter counts and compute estimates for any network
//! configuration, derived from the layer shapes alone. The parameter count
//! must agree exactly with a freshly built store; the compute estimate
//! counts multiply-adds as two operations and ignores activations, pooling,
//! interpolation and normalisation, which are all lower-order.

use crate::model::config::{LtdmDirection, LtdmMode, ModelConfig, ReconMode};

/// Published figures for the reference implementation of this architecture
/// at its full size, evaluated on 160x160 inputs. Reported alongside our
/// own numbers for orientation; this compact implementation is smaller.
pub const REFERENCE_PARAMS: f64 = 20.7e6;
pub const REFERENCE_FLOPS: f64 = 647.8e9;
pub const REFERENCE_INPUT: (usize, usize) = (160, 160);

/// Scalar parameters in one `k x k` convolution with bias.
pub fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn resblock_params(c: usize) -> usize {
    2 * conv_params(c, c, 3)
}

fn window_attention_params(c: usize) -> usize {
    4 * c * c + 4 * c
}

fn channel_attention_params(c: usize, reduction: usize) -> usize {
    let mid = c / reduction;
    c * mid + mid + mid * c + c
}

fn layernorm_params(c: usize) -> usize {
    2 * c
}

fn activate_branch_params(c: usize) -> usize {
    3 * conv_params(c, c, 3)
}

fn stage_params(c: usize, use_comp: bool) -> usize {
    if use_comp {
        resblock_params(c)
    } else {
        conv_params(2 * c, c, 3)
    }
}

/// Per-module scalar parameter counts, in registration order.
pub fn param_breakdown(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let c = cfg.c;
    let mut out = Vec::new();
    out.push(("guide".to_string(), conv_params(3, c, 3)));
    if cfg.use_stdm {
        let stdm = conv_params(3, c, 3)            // target-frame embed
            + conv_params(3, c, 3)                 // shared per-difference conv
            + conv_params(2 * cfg.n * c, c, 3)     // fusion across differences
            + 2 * resblock_params(c);              // the two refinement blocks
        out.push(("stdm".to_string(), stdm));
        out.push(("stage1".to_string(), stage_params(c, cfg.use_dcu)));
    }
    if cfg.use_ltdm {
        let extract = conv_params(3, c, 3) + 5 * resblock_params(c);
        out.push(("long.extract".to_string(), extract));
        let k = cfg.deform_kernel;
        let offset_level = conv_params(2 * c, c, 3) + conv_params(c, 2 * k * k, 3);
        let align = 2 * offset_level + conv_params(c, c, k);
        out.push(("long.align".to_string(), align));
        let mut ltdm = conv_params(cfg.t() * c, c, 1) + conv_params(c, c, 3);
        match cfg.ltdm_mode {
            LtdmMode::Diff => {
                let branches = match cfg.ltdm_direction {
                    LtdmDirection::Both => 2,
                    _ => 1,
                };
                ltdm += branches * activate_branch_params(c);
            }
            LtdmMode::Concat => ltdm += conv_params(2 * c, c, 3),
        }
        out.push(("long.ltdm".to_string(), ltdm));
        out.push(("stage2".to_string(), stage_params(c, cfg.use_dcu)));
    }
    let block = match cfg.recon_mode {
        ReconMode::Hybrid => {
            layernorm_params(c)
                + window_attention_params(c)
                + conv_params(c, c, 3)
                + channel_attention_params(c, cfg.ca_reduction)
        }
        ReconMode::Resblock => resblock_params(c),
        ReconMode::LaOnly => conv_params(c, c, 3) + channel_attention_params(c, cfg.ca_reduction),
        ReconMode::SaOnly => layernorm_params(c) + window_attention_params(c),
    };
    let tail = match cfg.r {
        2 => conv_params(c, 12, 3),
        4 => 2 * conv_params(c, 4 * c, 3) + conv_params(c, 3, 3),
        _ => unreachable!("config validation admits only r in {{2, 4}}"),
    };
    out.push(("recon".to_string(), cfg.recon_blocks * block + tail));
    out
}

/// Total scalar parameters for a configuration. Matches
/// `ParamStore::num_scalars()` of a freshly built network exactly.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_breakdown(cfg).iter().map(|(_, n)| n).sum()
}

/// Operation estimate split by kind, for a single clip at the given
/// low-resolution input size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopsBreakdown {
    /// Spatial convolutions, including deformable and 1x1.
    pub conv: f64,
    /// Self-attention projections and window score/apply matmuls.
    pub attention: f64,
    /// Per-image squeeze-excite vector products.
    pub dense: f64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> f64 {
        self.conv + self.attention + self.dense
    }
}

/// Multiply-add ops (counted twice) of one conv at `s` output pixels.
fn conv_flops(cin: usize, cout: usize, k: usize, s: usize) -> f64 {
    2.0 * (cin * cout * k * k * s) as f64
}

/// Compute estimate for one forward pass on a `[1, t, 3, h, w]` clip.
pub fn flops_estimate(cfg: &ModelConfig, h: usize, w: usize) -> FlopsBreakdown {
    let c = cfg.c;
    let t = cfg.t();
    let s = h * w;
    let s2 = s / 4; // after one 2x pooling
    let mut conv = 0.0;
    let mut attention = 0.0;
    let mut dense = 0.0;

    conv += conv_flops(3, c, 3, s); // guide embed

    if cfg.use_stdm {
        conv += conv_flops(3, c, 3, s); // target embed
        conv += 2.0 * cfg.n as f64 * conv_flops(3, c, 3, s); // per-difference convs
        conv += conv_flops(2 * cfg.n * c, c, 3, s2); // fusion at half res
        conv += 2.0 * conv_flops(c, c, 3, s); // refinement on the full-res sum
        conv += 2.0 * conv_flops(c, c, 3, s2); // refinement on the half-res summary
        conv += stage_flops(c, cfg.use_dcu, s);
    }

    if cfg.use_ltdm {
        conv += t as f64 * (conv_flops(3, c, 3, s) + 5.0 * 2.0 * conv_flops(c, c, 3, s));
        let k = cfg.deform_kernel;
        let neighbours = (t - 1) as f64;
        let level = |sp: usize| conv_flops(2 * c, c, 3, sp) + conv_flops(c, 2 * k * k, 3, sp);
        conv += neighbours * (level(s2) + level(s));
        conv += t as f64 * conv_flops(c, c, k, s); // shared deformable conv
        let orders = match (cfg.ltdm_mode, cfg.ltdm_direction) {
            (LtdmMode::Diff, LtdmDirection::Both) | (LtdmMode::Concat, _) => 2.0,
            _ => 1.0,
        };
        conv += orders * (conv_flops(t * c, c, 1, s) + conv_flops(c, c, 3, s));
        match cfg.ltdm_mode {
            LtdmMode::Diff => {
                let branches = if cfg.ltdm_direction == LtdmDirection::Both { 2.0 } else { 1.0 };
                // h2 and the output conv at full res, h3 at half res.
                conv += branches
                    * (2.0 * conv_flops(c, c, 3, s) + conv_flops(c, c, 3, s2));
            }
            LtdmMode::Concat => conv += conv_flops(2 * c, c, 3, s),
        }
        conv += stage_flops(c, cfg.use_dcu, s);
    }

    let blocks = cfg.recon_blocks as f64;
    if cfg.uses_msa() {
        let ws2 = (cfg.window_size * cfg.window_size) as f64;
        attention += blocks * (4.0 * 2.0 * (s * c * c) as f64 + 4.0 * (s as f64) * ws2 * c as f64);
    }
    if cfg.uses_ca() {
        conv += blocks * conv_flops(c, c, 3, s);
        let mid = (c / cfg.ca_reduction) as f64;
        dense += blocks * 4.0 * c as f64 * mid;
    }
    if cfg.recon_mode == ReconMode::Resblock {
        conv += blocks * 2.0 * conv_flops(c, c, 3, s);
    }
    match cfg.r {
        2 => conv += conv_flops(c, 12, 3, s),
        4 => {
            conv += conv_flops(c, 4 * c, 3, s);
            conv += conv_flops(c, 4 * c, 3, 4 * s);
            conv += conv_flops(c, 3, 3, 16 * s);
        }
        _ => unreachable!("config validation admits only r in {{2, 4}}"),
    }

    FlopsBreakdown {
        conv,
        attention,
        dense,
    }
}

fn stage_flops(c: usize, use_comp: bool, s: usize) -> f64 {
    if use_comp {
        2.0 * conv_flops(c, c, 3, s)
    } else {
        conv_flops(2 * c, c, 3, s)
    }
}
