//! Coarse deformable alignment: a shared feature extractor, a two-level
//! pyramid offset predictor (shared across neighbor frames), and one shared
//! deformable convolution that warps every frame's feature toward the
//! target. The target frame itself passes through the same deformable
//! convolution with offsets held at zero, so at initialization (offset
//! predictor zeroed) all frames receive the identical operator.

use ndarray::{Array4, ArrayD};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::nn::conv::{Conv2d, ConvCtx, PadMode};
use crate::nn::deform::{DeformConv2d, DeformConvCtx};
use crate::nn::ops::{
    avgpool2, avgpool2_backward, bilinear_up2, bilinear_up2_backward, concat_channels, relu,
    relu_backward, split_channels,
};
use crate::nn::resblock::{ResBlock, ResBlockCtx};
use crate::nn::{Grads, ParamStore};

/// Per-frame feature encoder shared across the clip: one 3x3 conv and five
/// residual blocks.
pub struct Extractor {
    conv_in: Conv2d,
    blocks: Vec<ResBlock>,
}

pub struct ExtractorCtx {
    conv_in: ConvCtx,
    blocks: Vec<ResBlockCtx>,
}

impl Extractor {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize) -> Self {
        Extractor {
            conv_in: Conv2d::new(ps, rng, &format!("{name}.conv_in"), 3, c, 3, PadMode::Zero),
            blocks: (0..5)
                .map(|i| ResBlock::new(ps, rng, &format!("{name}.block{i}"), c, PadMode::Zero))
                .collect(),
        }
    }

    pub fn forward(&self, ps: &ParamStore, frame: &ArrayD<f64>) -> (ArrayD<f64>, ExtractorCtx) {
        let (mut h, conv_in) = self.conv_in.forward(ps, frame);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, ctx) = b.forward(ps, &h);
            h = next;
            blocks.push(ctx);
        }
        (h, ExtractorCtx { conv_in, blocks })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &ExtractorCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let mut d = dy.clone();
        for (b, c) in self.blocks.iter().zip(ctx.blocks.iter()).rev() {
            d = b.backward(ps, c, &d, grads);
        }
        self.conv_in.backward(ps, &ctx.conv_in, &d, grads)
    }
}

/// One pyramid level of the offset predictor: conv -> ReLU -> conv, the
/// second conv zero-initialized so offsets start at exactly zero.
struct OffsetLevel {
    c1: Conv2d,
    c2: Conv2d,
}

struct OffsetLevelCtx {
    c1: ConvCtx,
    pre: ArrayD<f64>,
    c2: ConvCtx,
}

impl OffsetLevel {
    fn new(ps: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize, k: usize) -> Self {
        OffsetLevel {
            c1: Conv2d::new(ps, rng, &format!("{name}.c1"), 2 * c, c, 3, PadMode::Zero),
            c2: Conv2d::new_zero(ps, &format!("{name}.c2"), c, 2 * k * k, 3, PadMode::Zero),
        }
    }

    fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, OffsetLevelCtx) {
        let (pre, c1) = self.c1.forward(ps, x);
        let act = relu(&pre);
        let (out, c2) = self.c2.forward(ps, &act);
        (out, OffsetLevelCtx { c1, pre, c2 })
    }

    fn backward(
        &self,
        ps: &ParamStore,
        ctx: &OffsetLevelCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dact = self.c2.backward(ps, &ctx.c2, dy, grads);
        let dpre = relu_backward(&ctx.pre, &dact);
        self.c1.backward(ps, &ctx.c1, &dpre, grads)
    }
}

pub struct CoarseAlign {
    /// Coarse (half-resolution) and fine offset predictors, shared across
    /// all neighbor frames.
    coarse: OffsetLevel,
    fine: OffsetLevel,
    dconv: DeformConv2d,
    c: usize,
    k: usize,
    max_disp: f64,
}

enum FrameCtx {
    /// Target frame: deformable conv with offsets pinned to zero.
    Target(DeformConvCtx),
    Neighbor {
        coarse: OffsetLevelCtx,
        fine: OffsetLevelCtx,
        /// Offset sum before clamping, for the clamp gradient mask.
        pre_clamp: ArrayD<f64>,
        dconv: DeformConvCtx,
    },
}

pub struct AlignCtx {
    frames: Vec<FrameCtx>,
    target_index: usize,
}

impl CoarseAlign {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        k: usize,
        max_disp: f64,
    ) -> Self {
        CoarseAlign {
            coarse: OffsetLevel::new(ps, rng, &format!("{name}.coarse"), c, k),
            fine: OffsetLevel::new(ps, rng, &format!("{name}.fine"), c, k),
            dconv: DeformConv2d::new(ps, rng, &format!("{name}.dconv"), c, c, k),
            c,
            k,
            max_disp,
        }
    }

    /// Predict per-tap offsets for one neighbor from [neighbor, target]
    /// features: coarse level at half resolution, upsampled (values doubled
    /// to stay in pixel units) and refined at full resolution, then clamped.
    fn predict_offsets(
        &self,
        ps: &ParamStore,
        feat: &ArrayD<f64>,
        target: &ArrayD<f64>,
    ) -> (ArrayD<f64>, OffsetLevelCtx, OffsetLevelCtx, ArrayD<f64>) {
        let cat = concat_channels(&[feat, target]);
        let pooled = avgpool2(&cat);
        let (off_c, coarse_ctx) = self.coarse.forward(ps, &pooled);
        let up = bilinear_up2(&off_c).mapv(|v| 2.0 * v);
        let (off_f, fine_ctx) = self.fine.forward(ps, &cat);
        let pre_clamp = &up + &off_f;
        let m = self.max_disp;
        let off = pre_clamp.mapv(|v| v.clamp(-m, m));
        (off, coarse_ctx, fine_ctx, pre_clamp)
    }

    /// Align every frame's feature toward the target frame's.
    pub fn forward(
        &self,
        ps: &ParamStore,
        feats: &[ArrayD<f64>],
        target_index: usize,
    ) -> Result<(Vec<ArrayD<f64>>, AlignCtx)> {
        let target = &feats[target_index];
        let mut out = Vec::with_capacity(feats.len());
        let mut frames = Vec::with_capacity(feats.len());
        for (t, feat) in feats.iter().enumerate() {
            if t == target_index {
                let zero_off = zero_offsets(feat, self.k);
                let (y, ctx) = self.dconv.forward(ps, feat, &zero_off)?;
                out.push(y);
                frames.push(FrameCtx::Target(ctx));
            } else {
                let (off, coarse, fine, pre_clamp) = self.predict_offsets(ps, feat, target);
                let (y, dctx) = self.dconv.forward(ps, feat, &off)?;
                out.push(y);
                frames.push(FrameCtx::Neighbor {
                    coarse,
                    fine,
                    pre_clamp,
                    dconv: dctx,
                });
            }
        }
        Ok((
            out,
            AlignCtx {
                frames,
                target_index,
            },
        ))
    }

    /// Returns per-frame input-feature gradients.
    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &AlignCtx,
        dy: &[ArrayD<f64>],
        grads: &mut Grads,
    ) -> Vec<ArrayD<f64>> {
        let mut d_feats: Vec<ArrayD<f64>> = dy.iter().map(|d| ArrayD::zeros(d.shape())).collect();
        let m = self.max_disp;
        for (t, fctx) in ctx.frames.iter().enumerate() {
            match fctx {
                FrameCtx::Target(dctx) => {
                    let (dx, _doff) = self.dconv.backward(ps, dctx, &dy[t], grads);
                    d_feats[t] += &dx;
                }
                FrameCtx::Neighbor {
                    coarse,
                    fine,
                    pre_clamp,
                    dconv,
                } => {
                    let (dx, doff) = self.dconv.backward(ps, dconv, &dy[t], grads);
                    d_feats[t] += &dx;
                    // Clamp passes gradient only inside the active range.
                    let mut d_pre = doff;
                    d_pre.zip_mut_with(pre_clamp, |g, &p| {
                        if p.abs() > m {
                            *g = 0.0;
                        }
                    });
                    let d_cat_fine = self.fine.backward(ps, fine, &d_pre, grads);
                    let d_up = d_pre.mapv(|v| 2.0 * v);
                    let d_off_c = bilinear_up2_backward(&d_up);
                    let d_pooled = self.coarse.backward(ps, coarse, &d_off_c, grads);
                    let d_cat_coarse = avgpool2_backward(&d_pooled);
                    let d_cat = &d_cat_fine + &d_cat_coarse;
                    let parts = split_channels(&d_cat, &[self.c, self.c]);
                    d_feats[t] += &parts[0];
                    d_feats[ctx.target_index] += &parts[1];
                }
            }
        }
        d_feats
    }
}

fn zero_offsets(feat: &ArrayD<f64>, k: usize) -> ArrayD<f64> {
    let (b, h, w) = (feat.shape()[0], feat.shape()[2], feat.shape()[3]);
    Array4::<f64>::zeros((b, 2 * k * k, h, w)).into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{assert_close, rand_arr, sample_indices};
    use rand::{Rng, SeedableRng};

    fn setup(c: usize, seed: u64) -> (ParamStore, Extractor, CoarseAlign, ChaCha12Rng) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let ex = Extractor::new(&mut ps, &mut rng, "ex", c);
        let al = CoarseAlign::new(&mut ps, &mut rng, "al", c, 3, 16.0);
        (ps, ex, al, rng)
    }

    #[test]
    fn identical_frames_align_identically_at_init() {
        let (ps, ex, al, mut rng) = setup(4, 0);
        let frame = rand_arr(&mut rng, &[1, 3, 8, 8]);
        let (feat, _) = ex.forward(&ps, &frame);
        let feats = vec![feat.clone(), feat.clone(), feat.clone()];
        let (aligned, _) = al.forward(&ps, &feats, 1).unwrap();
        // Zero-initialized offset predictor: every frame goes through the
        // same deformable conv with zero offsets.
        let zero_off = super::zero_offsets(&feat, 3);
        let (want, _) = al.dconv.forward(&ps, &feat, &zero_off).unwrap();
        for a in &aligned {
            assert_eq!(a, &want);
        }
    }

    #[test]
    fn output_shapes_match_input_features() {
        let (ps, ex, al, mut rng) = setup(6, 1);
        let feats: Vec<_> = (0..5)
            .map(|_| ex.forward(&ps, &rand_arr(&mut rng, &[2, 3, 6, 8])).0)
            .collect();
        let (aligned, _) = al.forward(&ps, &feats, 2).unwrap();
        assert_eq!(aligned.len(), 5);
        for a in &aligned {
            assert_eq!(a.shape(), &[2, 6, 6, 8]);
        }
    }

    #[test]
    fn extractor_is_shared_and_deterministic() {
        let (ps, ex, _, mut rng) = setup(4, 2);
        let frame = rand_arr(&mut rng, &[1, 3, 6, 6]);
        let (a, _) = ex.forward(&ps, &frame);
        let (b, _) = ex.forward(&ps, &frame);
        assert_eq!(a, b);
    }

    /// Randomize all parameters so gradients flow through every path.
    fn perturb(ps: &mut ParamStore, rng: &mut ChaCha12Rng) {
        for v in ps.values_mut() {
            v.map_inplace(|x| *x += 0.1 * (rng.gen::<f64>() - 0.5));
        }
    }

    #[test]
    fn align_then_reverse_equals_reverse_then_align() {
        let (mut ps, ex, al, mut rng) = setup(3, 3);
        perturb(&mut ps, &mut rng);
        let feats: Vec<_> = (0..5)
            .map(|_| ex.forward(&ps, &rand_arr(&mut rng, &[1, 3, 6, 6])).0)
            .collect();
        let rev: Vec<_> = feats.iter().rev().cloned().collect();
        let (fwd, _) = al.forward(&ps, &feats, 2).unwrap();
        let (bwd, _) = al.forward(&ps, &rev, 2).unwrap();
        for t in 0..5 {
            for (a, b) in fwd[t].iter().zip(bwd[4 - t].iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn offsets_never_exceed_the_clamp() {
        // Blow up the predictor weights; sampled coordinates must still stay
        // within max_disp of the base grid.
        let (mut ps, ex, mut al, mut rng) = setup(3, 4);
        for v in ps.values_mut() {
            v.map_inplace(|x| *x = (*x + 0.3) * 50.0);
        }
        al.max_disp = 2.5;
        let feats: Vec<_> = (0..3)
            .map(|_| ex.forward(&ps, &rand_arr(&mut rng, &[1, 3, 6, 6])).0)
            .collect();
        let (off, _, _, pre) = al.predict_offsets(&ps, &feats[0], &feats[1]);
        assert!(
            pre.iter().any(|v| v.abs() > 2.5),
            "test needs offsets that actually hit the clamp"
        );
        assert!(off.iter().all(|v| v.abs() <= 2.5));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut ps, ex, al, mut rng) = setup(2, 5);
        perturb(&mut ps, &mut rng);
        let frames: Vec<_> = (0..3).map(|_| rand_arr(&mut rng, &[1, 3, 4, 4])).collect();
        let proj: Vec<_> = (0..3).map(|_| rand_arr(&mut rng, &[1, 2, 4, 4])).collect();

        let loss = |ps: &ParamStore, frames: &[ArrayD<f64>]| -> f64 {
            let feats: Vec<_> = frames.iter().map(|f| ex.forward(ps, f).0).collect();
            let (aligned, _) = al.forward(ps, &feats, 1).unwrap();
            aligned
                .iter()
                .zip(proj.iter())
                .map(|(a, p)| (a * p).sum())
                .sum()
        };

        let mut ectxs = Vec::new();
        let mut feats = Vec::new();
        for f in &frames {
            let (ft, c) = ex.forward(&ps, f);
            feats.push(ft);
            ectxs.push(c);
        }
        let (_, actx) = al.forward(&ps, &feats, 1).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        let d_feats = al.backward(&ps, &actx, &proj, &mut grads);
        let d_frames: Vec<_> = (0..3)
            .map(|t| ex.backward(&ps, &ectxs[t], &d_feats[t], &mut grads))
            .collect();

        let h = 1e-5;
        for t in 0..3 {
            for idx in sample_indices(&mut rng, frames[t].len(), 10) {
                let mut fp = frames.to_vec();
                fp[t].as_slice_mut().unwrap()[idx] += h;
                let mut fm = frames.to_vec();
                fm[t].as_slice_mut().unwrap()[idx] -= h;
                let num = (loss(&ps, &fp) - loss(&ps, &fm)) / (2.0 * h);
                assert_close(d_frames[t].as_slice().unwrap()[idx], num, 1e-4);
            }
        }
        for pi in 0..ps.len() {
            let n = ps.values()[pi].len();
            for idx in sample_indices(&mut rng, n, 6) {
                let mut psp = ps.clone();
                psp.values_mut()[pi].as_slice_mut().unwrap()[idx] += h;
                let mut psm = ps.clone();
                psm.values_mut()[pi].as_slice_mut().unwrap()[idx] -= h;
                let num = (loss(&psp, &frames) - loss(&psm, &frames)) / (2.0 * h);
                assert_close(grads.values()[pi].as_slice().unwrap()[idx], num, 1e-4);
            }
        }
    }
}
