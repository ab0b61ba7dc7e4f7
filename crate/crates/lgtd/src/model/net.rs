//! Full video super-resolution network.
//!
//! A clip of `2n+1` frames flows through two complementary branches anchored
//! on the centre frame's own feature map:
//!
//! 1. the short-range branch summarises adjacent-frame differences and is
//!    merged into the centre feature by a compensation stage;
//! 2. the long-range branch extracts per-frame features, aligns them onto
//!    the centre frame with learned deformable offsets, blends the aligned
//!    stack in both temporal orders, and gates the result before a second
//!    compensation stage merges it back.
//!
//! The merged feature is decoded to an RGB image by the reconstruction head.
//! Both compensation stages and every reconstruction block start as exact
//! identities, so a freshly initialised network reproduces the decoded
//! centre-frame feature and nothing else.

use ndarray::{ArrayD, Axis, Ix5};
use rand_chacha::ChaCha12Rng;

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::model::align::{AlignCtx, CoarseAlign, Extractor, ExtractorCtx};
use crate::model::config::ModelConfig;
use crate::model::dcu::{Dcu, DcuCtx};
use crate::model::ltdm::{Ltdm, LtdmCtx};
use crate::model::recon::{Recon, ReconCtx};
use crate::model::stdm::{Stdm, StdmCtx};
use crate::nn::conv::{Conv2d, ConvCtx, PadMode};
use crate::nn::ops::{clamp01, concat_channels, split_channels};
use crate::nn::{Grads, ParamStore};

/// A merge stage: difference compensation by default, or a plain fusion conv
/// over the concatenated pair when compensation is disabled.
enum Stage {
    Comp(Dcu),
    Fuse(Conv2d),
}

enum StageCtx {
    Comp(DcuCtx),
    Fuse(ConvCtx),
}

impl Stage {
    fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        use_comp: bool,
    ) -> Self {
        if use_comp {
            Stage::Comp(Dcu::new(ps, rng, name, c))
        } else {
            Stage::Fuse(Conv2d::new(
                ps,
                rng,
                &format!("{name}.fuse"),
                2 * c,
                c,
                3,
                PadMode::Zero,
            ))
        }
    }

    fn forward(
        &self,
        ps: &ParamStore,
        guide: &ArrayD<f64>,
        companion: &ArrayD<f64>,
    ) -> Result<(ArrayD<f64>, StageCtx)> {
        match self {
            Stage::Comp(dcu) => {
                let (y, ctx) = dcu.forward(ps, guide, companion)?;
                Ok((y, StageCtx::Comp(ctx)))
            }
            Stage::Fuse(conv) => {
                let cat = concat_channels(&[guide, companion]);
                let (y, ctx) = conv.forward(ps, &cat);
                Ok((y, StageCtx::Fuse(ctx)))
            }
        }
    }

    /// Returns `(d_guide, d_companion)`.
    fn backward(
        &self,
        ps: &ParamStore,
        ctx: &StageCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
        c: usize,
    ) -> (ArrayD<f64>, ArrayD<f64>) {
        match (self, ctx) {
            (Stage::Comp(dcu), StageCtx::Comp(dctx)) => dcu.backward(ps, dctx, dy, grads),
            (Stage::Fuse(conv), StageCtx::Fuse(cctx)) => {
                let d_cat = conv.backward(ps, cctx, dy, grads);
                let mut parts = split_channels(&d_cat, &[c, c]);
                let d_comp = parts.pop().unwrap();
                let d_guide = parts.pop().unwrap();
                (d_guide, d_comp)
            }
            _ => unreachable!("stage/context mismatch"),
        }
    }
}

struct LongBranch {
    extract: Extractor,
    align: CoarseAlign,
    ltdm: Ltdm,
}

struct LongCtx {
    extract: Vec<ExtractorCtx>,
    align: AlignCtx,
    ltdm: LtdmCtx,
}

pub struct Lgtd {
    pub cfg: ModelConfig,
    guide: Conv2d,
    stdm: Option<Stdm>,
    stage1: Option<Stage>,
    long: Option<LongBranch>,
    stage2: Option<Stage>,
    recon: Recon,
}

pub struct LgtdCtx {
    guide: ConvCtx,
    stdm: Option<StdmCtx>,
    stage1: Option<StageCtx>,
    long: Option<LongCtx>,
    stage2: Option<StageCtx>,
    recon: ReconCtx,
    input_shape: Vec<usize>,
}

impl Lgtd {
    /// Builds the network, registering parameters in a fixed order so that
    /// identical configs and seeds give identical stores.
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha12Rng, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.c;
        let guide = Conv2d::new(ps, rng, "guide", 3, c, 3, PadMode::Zero);
        let stdm = cfg
            .use_stdm
            .then(|| Stdm::new(ps, rng, "stdm", cfg.n, c, cfg.stdm_mode));
        let stage1 = cfg
            .use_stdm
            .then(|| Stage::new(ps, rng, "stage1", c, cfg.use_dcu));
        let long = cfg.use_ltdm.then(|| LongBranch {
            extract: Extractor::new(ps, rng, "long.extract", c),
            align: CoarseAlign::new(
                ps,
                rng,
                "long.align",
                c,
                cfg.deform_kernel,
                cfg.max_disp,
            ),
            ltdm: Ltdm::new(
                ps,
                rng,
                "long.ltdm",
                cfg.t(),
                c,
                cfg.ltdm_mode,
                cfg.ltdm_direction,
                cfg.alpha,
                cfg.beta,
            ),
        });
        let stage2 = cfg
            .use_ltdm
            .then(|| Stage::new(ps, rng, "stage2", c, cfg.use_dcu));
        let recon = Recon::new(
            ps,
            rng,
            "recon",
            cfg.recon_mode,
            cfg.recon_blocks,
            c,
            cfg.r,
            cfg.msa_heads,
            cfg.window_size,
            cfg.ca_reduction,
        );
        Ok(Lgtd {
            cfg: cfg.clone(),
            guide,
            stdm,
            stage1,
            long,
            stage2,
            recon,
        })
    }

    /// Convenience constructor: fresh store seeded deterministically.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        use rand::SeedableRng;
        let mut ps = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = Lgtd::new(&mut ps, &mut rng, cfg)?;
        Ok((model, ps))
    }

    /// Clip tensor `[b, t, 3, h, w]` to pre-clamp RGB `[b, 3, r*h, r*w]`.
    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> Result<(ArrayD<f64>, LgtdCtx)> {
        let x5 = x
            .view()
            .into_dimensionality::<Ix5>()
            .map_err(|_| Error::shape("model", format!("want 5-d clip, got {:?}", x.shape())))?;
        let (_b, t, ch, h, w) = x5.dim();
        if t != self.cfg.t() {
            return Err(Error::shape(
                "model",
                format!("clip has {t} frames, config wants {}", self.cfg.t()),
            ));
        }
        if ch != 3 {
            return Err(Error::shape("model", format!("want RGB frames, got {ch} channels")));
        }
        self.cfg.validate_input(h, w)?;
        let centre = self.cfg.n;

        let centre_frame = x5.index_axis(Axis(1), centre).to_owned().into_dyn();
        let (f_t, guide_ctx) = self.guide.forward(ps, &centre_frame);

        let (f_s, stdm_ctx, stage1_ctx) = match (&self.stdm, &self.stage1) {
            (Some(stdm), Some(stage1)) => {
                let (g_s, sctx) = stdm.forward(ps, &x5)?;
                let (f_s, mctx) = stage1.forward(ps, &f_t, &g_s)?;
                (f_s, Some(sctx), Some(mctx))
            }
            _ => (f_t.clone(), None, None),
        };

        let (f_hat, long_ctx, stage2_ctx) = match (&self.long, &self.stage2) {
            (Some(long), Some(stage2)) => {
                let mut feats = Vec::with_capacity(t);
                let mut ectxs = Vec::with_capacity(t);
                for ti in 0..t {
                    let frame = x5.index_axis(Axis(1), ti).to_owned().into_dyn();
                    let (f, ec) = long.extract.forward(ps, &frame);
                    feats.push(f);
                    ectxs.push(ec);
                }
                let (aligned, actx) = long.align.forward(ps, &feats, centre)?;
                let (f_l, lctx) = long.ltdm.forward(ps, &aligned)?;
                let (f_hat, mctx) = stage2.forward(ps, &f_s, &f_l)?;
                (
                    f_hat,
                    Some(LongCtx {
                        extract: ectxs,
                        align: actx,
                        ltdm: lctx,
                    }),
                    Some(mctx),
                )
            }
            _ => (f_s.clone(), None, None),
        };

        let (y, recon_ctx) = self.recon.forward(ps, &f_hat)?;
        Ok((
            y,
            LgtdCtx {
                guide: guide_ctx,
                stdm: stdm_ctx,
                stage1: stage1_ctx,
                long: long_ctx,
                stage2: stage2_ctx,
                recon: recon_ctx,
                input_shape: x.shape().to_vec(),
            },
        ))
    }

    /// Forward pass clamped to the displayable range.
    pub fn infer(&self, ps: &ParamStore, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let (y, _) = self.forward(ps, x)?;
        Ok(clamp01(&y))
    }

    /// Propagates `dy` (same shape as the forward output) back to the input
    /// clip, accumulating parameter gradients into `grads`.
    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &LgtdCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let c = self.cfg.c;
        let centre = self.cfg.n;
        let mut d_input = ArrayD::<f64>::zeros(ctx.input_shape.clone());

        let d_fhat = self.recon.backward(ps, &ctx.recon, dy, grads);

        let d_fs = match (&self.long, &self.stage2, &ctx.long, &ctx.stage2) {
            (Some(long), Some(stage2), Some(lctx), Some(mctx)) => {
                let (d_fs, d_fl) = stage2.backward(ps, mctx, &d_fhat, grads, c);
                let d_aligned = long.ltdm.backward(ps, &lctx.ltdm, &d_fl, grads);
                let d_feats = long.align.backward(ps, &lctx.align, &d_aligned, grads);
                for (ti, (d_f, ec)) in d_feats.iter().zip(lctx.extract.iter()).enumerate() {
                    let d_frame = long.extract.backward(ps, ec, d_f, grads);
                    let mut slot = d_input.index_axis_mut(Axis(1), ti);
                    slot += &d_frame;
                }
                d_fs
            }
            _ => d_fhat,
        };

        let d_ft = match (&self.stdm, &self.stage1, &ctx.stdm, &ctx.stage1) {
            (Some(stdm), Some(stage1), Some(sctx), Some(mctx)) => {
                let (d_ft, d_gs) = stage1.backward(ps, mctx, &d_fs, grads, c);
                let d_clip = stdm.backward(ps, sctx, &d_gs, grads);
                d_input += &d_clip;
                d_ft
            }
            _ => d_fs,
        };

        let d_centre = self.guide.backward(ps, &ctx.guide, &d_ft, grads);
        {
            let mut slot = d_input.index_axis_mut(Axis(1), centre);
            slot += &d_centre;
        }
        d_input
    }
}

/// Stacks one clip into a `[1, t, 3, h, w]` tensor.
pub fn clip_to_tensor(clip: &Clip) -> ArrayD<f64> {
    batch_to_tensor(std::slice::from_ref(clip))
}

/// Stacks equally-sized clips into a `[b, t, 3, h, w]` tensor.
pub fn batch_to_tensor(clips: &[Clip]) -> ArrayD<f64> {
    assert!(!clips.is_empty(), "empty batch");
    let t = clips[0].len();
    let (h, w) = (clips[0].h(), clips[0].w());
    let mut out = ArrayD::<f64>::zeros(vec![clips.len(), t, 3, h, w]);
    for (bi, clip) in clips.iter().enumerate() {
        assert!(
            clip.len() == t && clip.h() == h && clip.w() == w,
            "batch clips must share shape"
        );
        for (ti, frame) in clip.frames.iter().enumerate() {
            let mut slot = out.index_axis_mut(Axis(0), bi);
            let mut slot = slot.index_axis_mut(Axis(0), ti);
            slot.assign(&frame.pixels);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{LtdmDirection, LtdmMode, ReconMode, StdmMode};
    use crate::nn::testutil::{assert_close, rand_arr, sample_indices};
    use rand::{Rng, SeedableRng};

    fn tiny_cfg() -> ModelConfig {
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

    fn perturb(ps: &mut ParamStore, rng: &mut ChaCha12Rng) {
        for v in ps.values_mut() {
            v.map_inplace(|x| *x += 0.2 * (rng.gen::<f64>() - 0.5));
        }
    }

    #[test]
    fn fresh_network_decodes_the_centre_frame_feature_alone() {
        let cfg = tiny_cfg();
        let (model, ps) = Lgtd::build(&cfg, 7).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = rand_arr(&mut rng, &[2, 3, 3, 4, 4]);
        let (y, _) = model.forward(&ps, &x).unwrap();

        let centre = x
            .view()
            .into_dimensionality::<Ix5>()
            .unwrap()
            .index_axis(Axis(1), 1)
            .to_owned()
            .into_dyn();
        let (f_t, _) = model.guide.forward(&ps, &centre);
        let (want, _) = model.recon.forward(&ps, &f_t).unwrap();
        assert_eq!(y, want, "merge stages must start as exact identities");
    }

    #[test]
    fn disabled_branches_leave_no_trace() {
        let mut cfg = tiny_cfg();
        cfg.use_stdm = false;
        cfg.use_ltdm = false;
        let (model, mut ps) = Lgtd::build(&cfg, 8).unwrap();
        for (name, _) in ps.iter() {
            assert!(
                !name.starts_with("stdm") && !name.starts_with("long") && !name.starts_with("stage"),
                "unexpected parameter {name}"
            );
        }
        // Even off-init, the centre frame is the only input that matters.
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        perturb(&mut ps, &mut rng);
        let x = rand_arr(&mut rng, &[1, 3, 3, 4, 4]);
        let mut x2 = x.clone();
        {
            let mut v = x2.view_mut().into_dimensionality::<Ix5>().unwrap();
            v.index_axis_mut(Axis(1), 0).fill(0.0);
            v.index_axis_mut(Axis(1), 2).fill(0.0);
        }
        let (y1, _) = model.forward(&ps, &x).unwrap();
        let (y2, _) = model.forward(&ps, &x2).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn neighbour_frames_do_influence_the_full_model() {
        let cfg = tiny_cfg();
        let (model, mut ps) = Lgtd::build(&cfg, 9).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        perturb(&mut ps, &mut rng);
        let x = rand_arr(&mut rng, &[1, 3, 3, 4, 4]);
        let mut x2 = x.clone();
        {
            let mut v = x2.view_mut().into_dimensionality::<Ix5>().unwrap();
            v.index_axis_mut(Axis(1), 0).fill(0.5);
        }
        let (y1, _) = model.forward(&ps, &x).unwrap();
        let (y2, _) = model.forward(&ps, &x2).unwrap();
        let diff: f64 = (&y1 - &y2).iter().map(|v| v.abs()).sum();
        assert!(diff > 1e-9, "first frame must reach the output");
    }

    #[test]
    fn identical_seeds_build_identical_networks() {
        let cfg = tiny_cfg();
        let (model_a, ps_a) = Lgtd::build(&cfg, 42).unwrap();
        let (model_b, ps_b) = Lgtd::build(&cfg, 42).unwrap();
        assert_eq!(ps_a.len(), ps_b.len());
        for ((na, va), (nb, vb)) in ps_a.iter().zip(ps_b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = rand_arr(&mut rng, &[1, 3, 3, 4, 4]);
        let (ya, _) = model_a.forward(&ps_a, &x).unwrap();
        let (yb, _) = model_b.forward(&ps_b, &x).unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let cfg = tiny_cfg();
        let (model, ps) = Lgtd::build(&cfg, 10).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        // Wrong frame count.
        let x = rand_arr(&mut rng, &[1, 5, 3, 4, 4]);
        assert!(model.forward(&ps, &x).is_err());
        // Wrong channel count.
        let x = rand_arr(&mut rng, &[1, 3, 1, 4, 4]);
        assert!(model.forward(&ps, &x).is_err());
        // Odd spatial size.
        let x = rand_arr(&mut rng, &[1, 3, 3, 5, 4]);
        assert!(model.forward(&ps, &x).is_err());
        // Not a clip tensor at all.
        let x = rand_arr(&mut rng, &[3, 4, 4]);
        assert!(model.forward(&ps, &x).is_err());
    }

    #[test]
    fn inference_is_the_clamped_forward_pass() {
        let cfg = tiny_cfg();
        let (model, mut ps) = Lgtd::build(&cfg, 11).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        perturb(&mut ps, &mut rng);
        let x = rand_arr(&mut rng, &[1, 3, 3, 4, 4]);
        let (y, _) = model.forward(&ps, &x).unwrap();
        let z = model.infer(&ps, &x).unwrap();
        assert!(z.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (a, b) in z.iter().zip(y.iter()) {
            assert_eq!(*a, b.clamp(0.0, 1.0));
        }
    }

    #[test]
    fn every_ablation_config_runs_forward_and_backward() {
        let variants: Vec<ModelConfig> = vec![
            ModelConfig { use_ltdm: false, ..tiny_cfg() },
            ModelConfig { use_stdm: false, ..tiny_cfg() },
            ModelConfig { stdm_mode: StdmMode::Concat, ..tiny_cfg() },
            ModelConfig { ltdm_mode: LtdmMode::Concat, ..tiny_cfg() },
            ModelConfig {
                stdm_mode: StdmMode::Concat,
                ltdm_mode: LtdmMode::Concat,
                ..tiny_cfg()
            },
            ModelConfig { ltdm_direction: LtdmDirection::Forward, ..tiny_cfg() },
            ModelConfig { ltdm_direction: LtdmDirection::Backward, ..tiny_cfg() },
            ModelConfig { use_dcu: false, ..tiny_cfg() },
            ModelConfig { recon_mode: ReconMode::Resblock, ..tiny_cfg() },
            ModelConfig { recon_mode: ReconMode::LaOnly, ..tiny_cfg() },
            ModelConfig { recon_mode: ReconMode::SaOnly, ..tiny_cfg() },
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for (i, cfg) in variants.iter().enumerate() {
            let (model, mut ps) = Lgtd::build(cfg, 20 + i as u64).unwrap();
            perturb(&mut ps, &mut rng);
            let x = rand_arr(&mut rng, &[1, 3, 3, 4, 4]);
            let (y, ctx) = model.forward(&ps, &x).unwrap();
            assert_eq!(y.shape(), &[1, 3, 8, 8], "variant {i}");
            let mut grads = Grads::zeros_like(&ps);
            let dx = model.backward(&ps, &ctx, &y, &mut grads);
            assert_eq!(dx.shape(), x.shape(), "variant {i}");
            assert!(grads.global_norm() > 0.0, "variant {i} produced no gradient");
        }
    }

    #[test]
    fn clip_batching_preserves_pixels() {
        use crate::data::Frame;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let frames: Vec<Frame> = (0..3)
            .map(|_| {
                Frame::new(
                    rand_arr(&mut rng, &[3, 4, 5])
                        .mapv(|v| (v + 1.0) / 2.0)
                        .into_dimensionality::<ndarray::Ix3>()
                        .unwrap(),
                )
                .unwrap()
            })
            .collect();
        let clip = Clip::new(frames, "s", 0).unwrap();
        let t = clip_to_tensor(&clip);
        assert_eq!(t.shape(), &[1, 3, 3, 4, 5]);
        for (ti, frame) in clip.frames.iter().enumerate() {
            for c in 0..3 {
                for i in 0..4 {
                    for j in 0..5 {
                        assert_eq!(t[[0, ti, c, i, j]], frame.pixels[[c, i, j]]);
                    }
                }
            }
        }
        let b = batch_to_tensor(&[clip.clone(), clip]);
        assert_eq!(b.shape(), &[2, 3, 3, 4, 5]);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let (model, mut ps) = Lgtd::build(&cfg, 30).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        perturb(&mut ps, &mut rng);
        let x = rand_arr(&mut rng, &[1, 3, 3, 4, 4]);
        let proj = rand_arr(&mut rng, &[1, 3, 8, 8]);
        let loss = |ps: &ParamStore, x: &ArrayD<f64>| -> f64 {
            let (y, _) = model.forward(ps, x).unwrap();
            (&y * &proj).sum()
        };
        let (_, ctx) = model.forward(&ps, &x).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        let dx = model.backward(&ps, &ctx, &proj, &mut grads);

        let h = 1e-5;
        for idx in sample_indices(&mut rng, x.len(), 12) {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= h;
            let num = (loss(&ps, &xp) - loss(&ps, &xm)) / (2.0 * h);
            assert_close(dx.as_slice().unwrap()[idx], num, 2e-4);
        }
        for pi in 0..ps.len() {
            let n = ps.values()[pi].len();
            for idx in sample_indices(&mut rng, n, 3) {
                let mut psp = ps.clone();
                psp.values_mut()[pi].as_slice_mut().unwrap()[idx] += h;
                let mut psm = ps.clone();
                psm.values_mut()[pi].as_slice_mut().unwrap()[idx] -= h;
                let num = (loss(&psp, &x) - loss(&psm, &x)) / (2.0 * h);
                assert_close(grads.values()[pi].as_slice().unwrap()[idx], num, 2e-4);
            }
        }
    }
}
