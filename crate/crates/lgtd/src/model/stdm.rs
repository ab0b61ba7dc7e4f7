//! Short-term temporal difference branch: encode adjacent-frame RGB
//! differences and inject the fused motion signal into the target-frame
//! feature in two stages.

use ndarray::{ArrayD, ArrayView5, Axis};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::config::StdmMode;
use crate::nn::conv::{Conv2d, ConvCtx, PadMode};
use crate::nn::ops::{
    avgpool2, avgpool2_backward, bilinear_up2, bilinear_up2_backward, concat_channels,
    split_channels,
};
use crate::nn::resblock::{ResBlock, ResBlockCtx};
use crate::nn::{Grads, ParamStore};

/// Signed adjacent-frame differences in the fixed order
/// (-n, ..., -1, +1, ..., +n) relative to the clip center.
///
/// Entries left of the center subtract the frame one step closer to the
/// center; entries right of the center do the same, so every map points
/// "away from the target". In concat mode the maps are the raw neighbor
/// frames instead.
pub fn rgb_differences(x: &ArrayView5<f64>, n: usize, mode: StdmMode) -> Result<Vec<ArrayD<f64>>> {
    let t_len = x.shape()[1];
    if t_len != 2 * n + 1 {
        return Err(Error::shape(
            "rgb_differences",
            format!("clip length {t_len} is not 2*{n}+1"),
        ));
    }
    let center = n as isize;
    let frame = |t: isize| x.index_axis(Axis(1), t as usize);
    let mut out = Vec::with_capacity(2 * n);
    for i in -(n as isize)..=(n as isize) {
        if i == 0 {
            continue;
        }
        let t = center + i;
        let map = match mode {
            StdmMode::Diff => {
                let toward = if i < 0 { t + 1 } else { t - 1 };
                (&frame(t) - &frame(toward)).into_dyn()
            }
            StdmMode::Concat => frame(t).to_owned().into_dyn(),
        };
        out.push(map);
    }
    Ok(out)
}

pub struct Stdm {
    /// Target-frame feature extractor (separate from the guide feature).
    conv_target: Conv2d,
    /// Shared encoder applied to every difference map.
    conv_diff: Conv2d,
    /// Fuses the concatenated encoded differences at half resolution.
    fusion: Conv2d,
    res1: ResBlock,
    res2: ResBlock,
    n: usize,
    c: usize,
    mode: StdmMode,
}

pub struct StdmCtx {
    target: ConvCtx,
    diffs: Vec<ConvCtx>,
    /// Pre-pool encoder outputs, needed to size the pooling backward.
    fusion_ctx: ConvCtx,
    res1: ResBlockCtx,
    res2: ResBlockCtx,
}

impl Stdm {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        n: usize,
        c: usize,
        mode: StdmMode,
    ) -> Self {
        Stdm {
            conv_target: Conv2d::new(ps, rng, &format!("{name}.target"), 3, c, 3, PadMode::Zero),
            conv_diff: Conv2d::new(ps, rng, &format!("{name}.diff"), 3, c, 3, PadMode::Zero),
            fusion: Conv2d::new(ps, rng, &format!("{name}.fusion"), 2 * n * c, c, 3, PadMode::Zero),
            res1: ResBlock::new_zero_tail(ps, rng, &format!("{name}.res1"), c, PadMode::Zero),
            res2: ResBlock::new_zero_tail(ps, rng, &format!("{name}.res2"), c, PadMode::Zero),
            n,
            c,
            mode,
        }
    }

    /// Full branch: differences -> shared encode + pool -> fuse -> two-stage
    /// injection into the target feature. Returns the motion-injected
    /// feature [B, C, H, W].
    pub fn forward(&self, ps: &ParamStore, x: &ArrayView5<f64>) -> Result<(ArrayD<f64>, StdmCtx)> {
        let (h, w) = (x.shape()[3], x.shape()[4]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "stdm",
                format!("pooling needs even dims, got {h}x{w}"),
            ));
        }
        let raws = rgb_differences(x, self.n, self.mode)?;
        let target_frame = x.index_axis(Axis(1), self.n).to_owned().into_dyn();
        let (f_t, target_ctx) = self.conv_target.forward(ps, &target_frame);

        let mut encoded = Vec::with_capacity(raws.len());
        let mut diff_ctxs = Vec::with_capacity(raws.len());
        for raw in &raws {
            let (e, ctx) = self.conv_diff.forward(ps, raw);
            encoded.push(avgpool2(&e));
            diff_ctxs.push(ctx);
        }
        let cat = concat_channels(&encoded.iter().collect::<Vec<_>>());
        let (d_s, fusion_ctx) = self.fusion.forward(ps, &cat);

        let f_1 = &f_t + &bilinear_up2(&d_s);
        let (r1, res1_ctx) = self.res1.forward(ps, &f_1);
        let (r2, res2_ctx) = self.res2.forward(ps, &d_s);
        let g_s = &r1 + &bilinear_up2(&r2);

        Ok((
            g_s,
            StdmCtx {
                target: target_ctx,
                diffs: diff_ctxs,
                fusion_ctx,
                res1: res1_ctx,
                res2: res2_ctx,
            },
        ))
    }

    /// Propagate the output gradient back to the parameters and to every
    /// input frame; returns d_input [B, T, 3, H, W].
    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &StdmCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        // g_s = res1(f_1) + up(res2(d_s))
        let d_r2 = bilinear_up2_backward(dy);
        let d_ds_a = self.res2.backward(ps, &ctx.res2, &d_r2, grads);
        let d_f1 = self.res1.backward(ps, &ctx.res1, dy, grads);
        // f_1 = f_t + up(d_s)
        let d_ft = d_f1.clone();
        let d_ds_b = bilinear_up2_backward(&d_f1);
        let d_ds = &d_ds_a + &d_ds_b;

        let d_cat = self.fusion.backward(ps, &ctx.fusion_ctx, &d_ds, grads);
        let sizes = vec![self.c; 2 * self.n];
        let d_encoded = split_channels(&d_cat, &sizes);

        let b = dy.shape()[0];
        let (h, w) = (dy.shape()[2], dy.shape()[3]);
        let mut d_x = ArrayD::zeros(vec![b, 2 * self.n + 1, 3, h, w]);
        let center = self.n as isize;
        let mut add_frame = |t: isize, g: &ArrayD<f64>, sign: f64| {
            let mut dst = d_x.index_axis_mut(Axis(1), t as usize);
            dst.zip_mut_with(g, |d, &s| *d += sign * s);
        };

        let mut slot = 0usize;
        for i in -(self.n as isize)..=(self.n as isize) {
            if i == 0 {
                continue;
            }
            let d_pooled = avgpool2_backward(&d_encoded[slot]);
            let d_raw = self
                .conv_diff
                .backward(ps, &ctx.diffs[slot], &d_pooled, grads);
            let t = center + i;
            match self.mode {
                StdmMode::Diff => {
                    let toward = if i < 0 { t + 1 } else { t - 1 };
                    add_frame(t, &d_raw, 1.0);
                    add_frame(toward, &d_raw, -1.0);
                }
                StdmMode::Concat => add_frame(t, &d_raw, 1.0),
            }
            slot += 1;
        }

        let d_target = self.conv_target.backward(ps, &ctx.target, &d_ft, grads);
        add_frame(center, &d_target, 1.0);
        d_x
    }
}
