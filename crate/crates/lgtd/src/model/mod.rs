//! The video super-resolution network: configuration, the two temporal
//! difference branches, feature alignment, compensation stages, the
//! reconstruction head, full assembly, and closed-form size/compute stats.

pub mod align;
pub mod config;
pub mod dcu;
pub mod ltdm;
pub mod net;
pub mod recon;
pub mod stats;
pub mod stdm;

pub use config::{LtdmDirection, LtdmMode, ModelConfig, ReconMode, StdmMode};
pub use net::{batch_to_tensor, clip_to_tensor, Lgtd, LgtdCtx};
pub use stats::{
    flops_estimate, param_breakdown, param_count, FlopsBreakdown, REFERENCE_FLOPS,
    REFERENCE_INPUT, REFERENCE_PARAMS,
};
