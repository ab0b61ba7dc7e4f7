//! Long-term temporal difference branch: blend the aligned stack in forward
//! and reversed order, form cross-differences, turn them into multi-scale
//! sigmoid gates, and modulate the global feature.

use ndarray::ArrayD;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::config::{LtdmDirection, LtdmMode};
use crate::nn::conv::{Conv2d, ConvCtx, PadMode};
use crate::nn::ops::{
    avgpool2, avgpool2_backward, bilinear_up2, bilinear_up2_backward, concat_channels, sigmoid,
    sigmoid_backward, split_channels,
};
use crate::nn::{Grads, ParamStore};

/// Three-branch gate head: identity + full-resolution conv + half-resolution
/// conv, summed and squashed. The final conv starts at zero so the gate
/// opens at exactly 0.5.
pub struct ActivateBranch {
    h2: Conv2d,
    h3: Conv2d,
    out: Conv2d,
}

pub struct ActivateCtx {
    h2: ConvCtx,
    h3: ConvCtx,
    out: ConvCtx,
    att: ArrayD<f64>,
}

impl ActivateBranch {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize) -> Self {
        ActivateBranch {
            h2: Conv2d::new(ps, rng, &format!("{name}.h2"), c, c, 3, PadMode::Zero),
            h3: Conv2d::new(ps, rng, &format!("{name}.h3"), c, c, 3, PadMode::Zero),
            out: Conv2d::new_zero(ps, &format!("{name}.out"), c, c, 3, PadMode::Zero),
        }
    }

    pub fn forward(&self, ps: &ParamStore, d: &ArrayD<f64>) -> Result<(ArrayD<f64>, ActivateCtx)> {
        let (h, w) = (d.shape()[2], d.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "activate",
                format!("pooling needs even dims, got {h}x{w}"),
            ));
        }
        let (b2, h2_ctx) = self.h2.forward(ps, d);
        let (b3_inner, h3_ctx) = self.h3.forward(ps, &avgpool2(d));
        let b3 = bilinear_up2(&b3_inner);
        let s = d + &b2 + &b3;
        let (z, out_ctx) = self.out.forward(ps, &s);
        let att = sigmoid(&z);
        Ok((
            att.clone(),
            ActivateCtx {
                h2: h2_ctx,
                h3: h3_ctx,
                out: out_ctx,
                att,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &ActivateCtx,
        d_att: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dz = sigmoid_backward(&ctx.att, d_att);
        let ds = self.out.backward(ps, &ctx.out, &dz, grads);
        // s = d + h2(d) + up(h3(pool(d)))
        let mut dd = ds.clone();
        dd += &self.h2.backward(ps, &ctx.h2, &ds, grads);
        let d_b3_inner = bilinear_up2_backward(&ds);
        let d_pool = self.h3.backward(ps, &ctx.h3, &d_b3_inner, grads);
        dd += &avgpool2_backward(&d_pool);
        dd
    }
}

pub struct Ltdm {
    /// 1x1 blend over the stacked clip followed by a 3x3 conv; weights
    /// shared between the forward and reversed orderings.
    smooth1: Conv2d,
    smooth3: Conv2d,
    act_f: Option<ActivateBranch>,
    act_b: Option<ActivateBranch>,
    /// Concat-mode replacement for the whole difference/gate path.
    fuse: Option<Conv2d>,
    pub alpha: f64,
    pub beta: f64,
    mode: LtdmMode,
    direction: LtdmDirection,
    c: usize,
    t: usize,
}

struct SmoothCtx {
    s1: ConvCtx,
    s3: ConvCtx,
}

pub struct LtdmCtx {
    smooth_f: Option<(SmoothCtx, ArrayD<f64>)>,
    smooth_b: Option<(SmoothCtx, ArrayD<f64>)>,
    act_f: Option<ActivateCtx>,
    act_b: Option<ActivateCtx>,
    fuse: Option<ConvCtx>,
    gate: Option<ArrayD<f64>>,
}

impl Ltdm {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        t: usize,
        c: usize,
        mode: LtdmMode,
        direction: LtdmDirection,
        alpha: f64,
        beta: f64,
    ) -> Self {
        let smooth1 = Conv2d::new(ps, rng, &format!("{name}.smooth1"), t * c, c, 1, PadMode::Zero);
        let smooth3 = Conv2d::new(ps, rng, &format!("{name}.smooth3"), c, c, 3, PadMode::Zero);
        let (act_f, act_b, fuse) = match mode {
            LtdmMode::Diff => {
                let f = (direction != LtdmDirection::Backward)
                    .then(|| ActivateBranch::new(ps, rng, &format!("{name}.act_f"), c));
                let b = (direction != LtdmDirection::Forward)
                    .then(|| ActivateBranch::new(ps, rng, &format!("{name}.act_b"), c));
                (f, b, None)
            }
            LtdmMode::Concat => (
                None,
                None,
                Some(Conv2d::new(
                    ps,
                    rng,
                    &format!("{name}.fuse"),
                    2 * c,
                    c,
                    3,
                    PadMode::Zero,
                )),
            ),
        };
        Ltdm {
            smooth1,
            smooth3,
            act_f,
            act_b,
            fuse,
            alpha,
            beta,
            mode,
            direction,
            c,
            t,
        }
    }

    /// Blend the stack (optionally in reversed order) into one feature map.
    fn smooth(
        &self,
        ps: &ParamStore,
        stack: &[ArrayD<f64>],
        reversed: bool,
    ) -> (ArrayD<f64>, SmoothCtx) {
        let ordered: Vec<&ArrayD<f64>> = if reversed {
            stack.iter().rev().collect()
        } else {
            stack.iter().collect()
        };
        let cat = concat_channels(&ordered);
        let (mid, s1) = self.smooth1.forward(ps, &cat);
        let (out, s3) = self.smooth3.forward(ps, &mid);
        (out, SmoothCtx { s1, s3 })
    }

    fn smooth_backward(
        &self,
        ps: &ParamStore,
        ctx: &SmoothCtx,
        dy: &ArrayD<f64>,
        reversed: bool,
        d_stack: &mut [ArrayD<f64>],
        grads: &mut Grads,
    ) {
        let d_mid = self.smooth3.backward(ps, &ctx.s3, dy, grads);
        let d_cat = self.smooth1.backward(ps, &ctx.s1, &d_mid, grads);
        let parts = split_channels(&d_cat, &vec![self.c; self.t]);
        for (slot, part) in parts.iter().enumerate() {
            let t = if reversed { self.t - 1 - slot } else { slot };
            d_stack[t] += part;
        }
    }

    /// Produce the modulated global feature from the aligned stack.
    pub fn forward(
        &self,
        ps: &ParamStore,
        stack: &[ArrayD<f64>],
    ) -> Result<(ArrayD<f64>, LtdmCtx)> {
        if stack.len() != self.t {
            return Err(Error::shape(
                "ltdm",
                format!("stack length {} != {}", stack.len(), self.t),
            ));
        }
        match self.mode {
            LtdmMode::Concat => {
                let (f_fwd, ctx_f) = self.smooth(ps, stack, false);
                let (f_bwd, ctx_b) = self.smooth(ps, stack, true);
                let cat = concat_channels(&[&f_fwd, &f_bwd]);
                let (out, fuse_ctx) = self.fuse.as_ref().unwrap().forward(ps, &cat);
                Ok((
                    out,
                    LtdmCtx {
                        smooth_f: Some((ctx_f, f_fwd)),
                        smooth_b: Some((ctx_b, f_bwd)),
                        act_f: None,
                        act_b: None,
                        fuse: Some(fuse_ctx),
                        gate: None,
                    },
                ))
            }
            LtdmMode::Diff => match self.direction {
                LtdmDirection::Both => {
                    let (f_fwd, ctx_f) = self.smooth(ps, stack, false);
                    let (f_bwd, ctx_b) = self.smooth(ps, stack, true);
                    let d_f = &f_fwd - &f_bwd;
                    let d_b = d_f.mapv(|v| -v);
                    let (att_f, actx_f) = self.act_f.as_ref().unwrap().forward(ps, &d_f)?;
                    let (att_b, actx_b) = self.act_b.as_ref().unwrap().forward(ps, &d_b)?;
                    let gate = att_f.mapv(|v| self.alpha * v) + att_b.mapv(|v| self.beta * v);
                    let out = &f_bwd * &gate + &f_bwd;
                    Ok((
                        out,
                        LtdmCtx {
                            smooth_f: Some((ctx_f, f_fwd)),
                            smooth_b: Some((ctx_b, f_bwd)),
                            act_f: Some(actx_f),
                            act_b: Some(actx_b),
                            fuse: None,
                            gate: Some(gate),
                        },
                    ))
                }
                dir => {
                    // Single-direction variant: the lone blended feature
                    // doubles as the gate input, and the missing branch's
                    // coefficient folds into the present one.
                    let rev = dir == LtdmDirection::Backward;
                    let (f_dir, ctx_s) = self.smooth(ps, stack, rev);
                    let branch = if rev {
                        self.act_b.as_ref().unwrap()
                    } else {
                        self.act_f.as_ref().unwrap()
                    };
                    let (att, actx) = branch.forward(ps, &f_dir)?;
                    let gate = att.mapv(|v| (self.alpha + self.beta) * v);
                    let out = &f_dir * &gate + &f_dir;
                    let (sf, sb, af, ab) = if rev {
                        (None, Some((ctx_s, f_dir)), None, Some(actx))
                    } else {
                        (Some((ctx_s, f_dir)), None, Some(actx), None)
                    };
                    Ok((
                        out,
                        LtdmCtx {
                            smooth_f: sf,
                            smooth_b: sb,
                            act_f: af,
                            act_b: ab,
                            fuse: None,
                            gate: Some(gate),
                        },
                    ))
                }
            },
        }
    }

    /// Returns per-frame gradients for the aligned stack.
    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &LtdmCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> Vec<ArrayD<f64>> {
        let shape = dy.shape().to_vec();
        let mut d_stack: Vec<ArrayD<f64>> =
            (0..self.t).map(|_| ArrayD::zeros(shape.clone())).collect();
        match self.mode {
            LtdmMode::Concat => {
                let d_cat =
                    self.fuse
                        .as_ref()
                        .unwrap()
                        .backward(ps, ctx.fuse.as_ref().unwrap(), dy, grads);
                let parts = split_channels(&d_cat, &[self.c, self.c]);
                let (ctx_f, _) = ctx.smooth_f.as_ref().unwrap();
                let (ctx_b, _) = ctx.smooth_b.as_ref().unwrap();
                self.smooth_backward(ps, ctx_f, &parts[0], false, &mut d_stack, grads);
                self.smooth_backward(ps, ctx_b, &parts[1], true, &mut d_stack, grads);
            }
            LtdmMode::Diff => match self.direction {
                LtdmDirection::Both => {
                    let (ctx_f, f_fwd) = ctx.smooth_f.as_ref().unwrap();
                    let (ctx_b, f_bwd) = ctx.smooth_b.as_ref().unwrap();
                    let gate = ctx.gate.as_ref().unwrap();
                    let _ = f_fwd;
                    // out = f_bwd * gate + f_bwd
                    let d_fbwd_direct = dy * &(gate.mapv(|v| v + 1.0));
                    let d_gate = dy * f_bwd;
                    let d_att_f = d_gate.mapv(|v| self.alpha * v);
                    let d_att_b = d_gate.mapv(|v| self.beta * v);
                    let d_df_pos = self.act_f.as_ref().unwrap().backward(
                        ps,
                        ctx.act_f.as_ref().unwrap(),
                        &d_att_f,
                        grads,
                    );
                    let d_db = self.act_b.as_ref().unwrap().backward(
                        ps,
                        ctx.act_b.as_ref().unwrap(),
                        &d_att_b,
                        grads,
                    );
                    // d_f = f_fwd - f_bwd, d_b = -d_f
                    let d_df = &d_df_pos - &d_db;
                    let d_ffwd = d_df.clone();
                    let d_fbwd = &d_fbwd_direct - &d_df;
                    self.smooth_backward(ps, ctx_f, &d_ffwd, false, &mut d_stack, grads);
                    self.smooth_backward(ps, ctx_b, &d_fbwd, true, &mut d_stack, grads);
                }
                dir => {
                    let rev = dir == LtdmDirection::Backward;
                    let (ctx_s, f_dir) = if rev {
                        ctx.smooth_b.as_ref().unwrap()
                    } else {
                        ctx.smooth_f.as_ref().unwrap()
                    };
                    let gate = ctx.gate.as_ref().unwrap();
                    let branch = if rev {
                        self.act_b.as_ref().unwrap()
                    } else {
                        self.act_f.as_ref().unwrap()
                    };
                    let actx = if rev {
                        ctx.act_b.as_ref().unwrap()
                    } else {
                        ctx.act_f.as_ref().unwrap()
                    };
                    // out = f_dir * gate + f_dir; gate = (a+b) * att(f_dir)
                    let d_fdir_direct = dy * &(gate.mapv(|v| v + 1.0));
                    let d_gate = dy * f_dir;
                    let d_att = d_gate.mapv(|v| (self.alpha + self.beta) * v);
                    let d_fdir_gate = branch.backward(ps, actx, &d_att, grads);
                    let d_fdir = &d_fdir_direct + &d_fdir_gate;
                    self.smooth_backward(ps, ctx_s, &d_fdir, rev, &mut d_stack, grads);
                }
            },
        }
        d_stack
    }
}

/// Elementwise cross-differences of the two blended features.
pub fn cross_difference(f_l: &ArrayD<f64>, f_lr: &ArrayD<f64>) -> (ArrayD<f64>, ArrayD<f64>) {
    let d_f = f_l - f_lr;
    let d_b = d_f.mapv(|v| -v);
    (d_f, d_b)
}
