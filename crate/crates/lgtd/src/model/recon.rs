//! Reconstruction head: a stack of refinement blocks followed by a
//! sub-pixel upsampling tail that maps features to an RGB residual image.
//!
//! Block flavours:
//! * `hybrid`  — windowed self-attention then channel attention, each behind
//!   a residual skip (the default block);
//! * `resblock` — plain convolutional residual blocks;
//! * `la_only` — channel-attention half only;
//! * `sa_only` — self-attention half only.
//!
//! Every flavour is an exact identity when freshly initialised (attention
//! output projections and pre-gate convs start at zero), so a fresh head
//! reduces to the tail alone.

use ndarray::ArrayD;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::config::ReconMode;
use crate::nn::attention::{
    ChannelAttention, ChannelAttentionCtx, LayerNorm, LayerNormCtx, WindowAttention,
    WindowAttentionCtx,
};
use crate::nn::conv::{Conv2d, ConvCtx, PadMode};
use crate::nn::ops::{pixel_shuffle, pixel_unshuffle};
use crate::nn::resblock::{ResBlock, ResBlockCtx};
use crate::nn::{Grads, ParamStore};

/// Self-attention half: `y = x + msa(layernorm(x))`.
struct SaHalf {
    norm: LayerNorm,
    msa: WindowAttention,
}

struct SaHalfCtx {
    norm: LayerNormCtx,
    msa: WindowAttentionCtx,
}

impl SaHalf {
    fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        heads: usize,
        window: usize,
    ) -> Self {
        SaHalf {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), c),
            msa: WindowAttention::new(ps, rng, &format!("{name}.msa"), c, heads, window, true),
        }
    }

    fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, SaHalfCtx) {
        let (n, norm) = self.norm.forward(ps, x);
        let (a, msa) = self.msa.forward(ps, &n);
        (x + &a, SaHalfCtx { norm, msa })
    }

    fn backward(
        &self,
        ps: &ParamStore,
        ctx: &SaHalfCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dn = self.msa.backward(ps, &ctx.msa, dy, grads);
        let dx_norm = self.norm.backward(ps, &ctx.norm, &dn, grads);
        dy + &dx_norm
    }
}

/// Channel-attention half: `y = x + ca(conv3x3(x))`, conv starting at zero.
struct CaHalf {
    conv: Conv2d,
    ca: ChannelAttention,
}

struct CaHalfCtx {
    conv: ConvCtx,
    ca: ChannelAttentionCtx,
}

impl CaHalf {
    fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        reduction: usize,
    ) -> Self {
        CaHalf {
            conv: Conv2d::new_zero(ps, &format!("{name}.conv"), c, c, 3, PadMode::Zero),
            ca: ChannelAttention::new(ps, rng, &format!("{name}.ca"), c, reduction),
        }
    }

    fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, CaHalfCtx) {
        let (cv, conv) = self.conv.forward(ps, x);
        let (g, ca) = self.ca.forward(ps, &cv);
        (x + &g, CaHalfCtx { conv, ca })
    }

    fn backward(
        &self,
        ps: &ParamStore,
        ctx: &CaHalfCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dcv = self.ca.backward(ps, &ctx.ca, dy, grads);
        let dx_conv = self.conv.backward(ps, &ctx.conv, &dcv, grads);
        dy + &dx_conv
    }
}

enum Block {
    Hybrid(SaHalf, CaHalf),
    Res(ResBlock),
    La(CaHalf),
    Sa(SaHalf),
}

enum BlockCtx {
    Hybrid(SaHalfCtx, CaHalfCtx),
    Res(ResBlockCtx),
    La(CaHalfCtx),
    Sa(SaHalfCtx),
}

impl Block {
    fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, BlockCtx) {
        match self {
            Block::Hybrid(sa, ca) => {
                let (y, sctx) = sa.forward(ps, x);
                let (out, cctx) = ca.forward(ps, &y);
                (out, BlockCtx::Hybrid(sctx, cctx))
            }
            Block::Res(rb) => {
                let (out, ctx) = rb.forward(ps, x);
                (out, BlockCtx::Res(ctx))
            }
            Block::La(ca) => {
                let (out, ctx) = ca.forward(ps, x);
                (out, BlockCtx::La(ctx))
            }
            Block::Sa(sa) => {
                let (out, ctx) = sa.forward(ps, x);
                (out, BlockCtx::Sa(ctx))
            }
        }
    }

    fn backward(
        &self,
        ps: &ParamStore,
        ctx: &BlockCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        match (self, ctx) {
            (Block::Hybrid(sa, ca), BlockCtx::Hybrid(sctx, cctx)) => {
                let d_mid = ca.backward(ps, cctx, dy, grads);
                sa.backward(ps, sctx, &d_mid, grads)
            }
            (Block::Res(rb), BlockCtx::Res(rctx)) => rb.backward(ps, rctx, dy, grads),
            (Block::La(ca), BlockCtx::La(cctx)) => ca.backward(ps, cctx, dy, grads),
            (Block::Sa(sa), BlockCtx::Sa(sctx)) => sa.backward(ps, sctx, dy, grads),
            _ => unreachable!("block/context mismatch"),
        }
    }
}

/// Sub-pixel tail. The x2 variant is a single shuffle stage straight to RGB;
/// the x4 variant is two feature-space shuffle stages followed by an RGB
/// projection. Shuffle convs use replicated sub-kernels so a fresh tail is a
/// plain nearest-neighbour-style upsampler, and replicate padding so constant
/// inputs stay exactly constant.
enum Tail {
    R2 {
        conv: Conv2d,
    },
    R4 {
        c1: Conv2d,
        c2: Conv2d,
        c3: Conv2d,
    },
}

enum TailCtx {
    R2 { conv: ConvCtx },
    R4 { c1: ConvCtx, c2: ConvCtx, c3: ConvCtx },
}

impl Tail {
    fn new(ps: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, c: usize, r: usize) -> Self {
        match r {
            2 => Tail::R2 {
                conv: Conv2d::new_icnr(ps, rng, &format!("{name}.up"), c, 3, 3, 2, PadMode::Replicate),
            },
            4 => Tail::R4 {
                c1: Conv2d::new_icnr(ps, rng, &format!("{name}.up1"), c, c, 3, 2, PadMode::Replicate),
                c2: Conv2d::new_icnr(ps, rng, &format!("{name}.up2"), c, c, 3, 2, PadMode::Replicate),
                c3: Conv2d::new(ps, rng, &format!("{name}.rgb"), c, 3, 3, PadMode::Replicate),
            },
            _ => panic!("unsupported scale {r}"),
        }
    }

    fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, TailCtx) {
        match self {
            Tail::R2 { conv } => {
                let (y, ctx) = conv.forward(ps, x);
                (pixel_shuffle(&y, 2), TailCtx::R2 { conv: ctx })
            }
            Tail::R4 { c1, c2, c3 } => {
                let (y1, ctx1) = c1.forward(ps, x);
                let u1 = pixel_shuffle(&y1, 2);
                let (y2, ctx2) = c2.forward(ps, &u1);
                let u2 = pixel_shuffle(&y2, 2);
                let (out, ctx3) = c3.forward(ps, &u2);
                (
                    out,
                    TailCtx::R4 {
                        c1: ctx1,
                        c2: ctx2,
                        c3: ctx3,
                    },
                )
            }
        }
    }

    fn backward(
        &self,
        ps: &ParamStore,
        ctx: &TailCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        match (self, ctx) {
            (Tail::R2 { conv }, TailCtx::R2 { conv: cctx }) => {
                let d_pre = pixel_unshuffle(dy, 2);
                conv.backward(ps, cctx, &d_pre, grads)
            }
            (Tail::R4 { c1, c2, c3 }, TailCtx::R4 { c1: x1, c2: x2, c3: x3 }) => {
                let d_u2 = c3.backward(ps, x3, dy, grads);
                let d_y2 = pixel_unshuffle(&d_u2, 2);
                let d_u1 = c2.backward(ps, x2, &d_y2, grads);
                let d_y1 = pixel_unshuffle(&d_u1, 2);
                c1.backward(ps, x1, &d_y1, grads)
            }
            _ => unreachable!("tail/context mismatch"),
        }
    }
}

pub struct Recon {
    blocks: Vec<Block>,
    tail: Tail,
    r: usize,
}

pub struct ReconCtx {
    blocks: Vec<BlockCtx>,
    tail: TailCtx,
}

impl Recon {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        mode: ReconMode,
        num_blocks: usize,
        c: usize,
        r: usize,
        heads: usize,
        window: usize,
        reduction: usize,
    ) -> Self {
        let blocks = (0..num_blocks)
            .map(|i| {
                let bn = format!("{name}.block{i}");
                match mode {
                    ReconMode::Hybrid => Block::Hybrid(
                        SaHalf::new(ps, rng, &format!("{bn}.sa"), c, heads, window),
                        CaHalf::new(ps, rng, &format!("{bn}.ca"), c, reduction),
                    ),
                    ReconMode::Resblock => {
                        Block::Res(ResBlock::new(ps, rng, &bn, c, PadMode::Zero))
                    }
                    ReconMode::LaOnly => {
                        Block::La(CaHalf::new(ps, rng, &format!("{bn}.ca"), c, reduction))
                    }
                    ReconMode::SaOnly => {
                        Block::Sa(SaHalf::new(ps, rng, &format!("{bn}.sa"), c, heads, window))
                    }
                }
            })
            .collect();
        Recon {
            blocks,
            tail: Tail::new(ps, rng, &format!("{name}.tail"), c, r),
            r,
        }
    }

    pub fn scale(&self) -> usize {
        self.r
    }

    /// Features in, RGB image (pre-clamp) out: `[b, c, h, w] -> [b, 3, rh, rw]`.
    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> Result<(ArrayD<f64>, ReconCtx)> {
        if x.ndim() != 4 {
            return Err(Error::shape("recon", format!("want 4-d input, got {:?}", x.shape())));
        }
        let mut cur = x.clone();
        let mut ctxs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, ctx) = b.forward(ps, &cur);
            cur = next;
            ctxs.push(ctx);
        }
        let (out, tail) = self.tail.forward(ps, &cur);
        Ok((out, ReconCtx { blocks: ctxs, tail }))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &ReconCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let mut cur = self.tail.backward(ps, &ctx.tail, dy, grads);
        for (b, c) in self.blocks.iter().zip(ctx.blocks.iter()).rev() {
            cur = b.backward(ps, c, &cur, grads);
        }
        cur
    }
}
