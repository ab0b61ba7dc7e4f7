//! conv-ReLU-conv residual block.

use ndarray::ArrayD;
use rand_chacha::ChaCha12Rng;

use super::conv::{Conv2d, ConvCtx, PadMode};
use super::ops::{relu, relu_backward};
use super::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

pub struct ResBlockCtx {
    c1: ConvCtx,
    pre: ArrayD<f64>,
    c2: ConvCtx,
}

impl ResBlock {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        pad_mode: PadMode,
    ) -> Self {
        ResBlock {
            c1: Conv2d::new(ps, rng, &format!("{name}.c1"), c, c, 3, pad_mode),
            c2: Conv2d::new(ps, rng, &format!("{name}.c2"), c, c, 3, pad_mode),
        }
    }

    /// Second conv starts at zero, so the block is the identity map until
    /// training moves it.
    pub fn new_zero_tail(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        pad_mode: PadMode,
    ) -> Self {
        ResBlock {
            c1: Conv2d::new(ps, rng, &format!("{name}.c1"), c, c, 3, pad_mode),
            c2: Conv2d::new_zero(ps, &format!("{name}.c2"), c, c, 3, pad_mode),
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, ResBlockCtx) {
        let (pre, c1) = self.c1.forward(ps, x);
        let act = relu(&pre);
        let (res, c2) = self.c2.forward(ps, &act);
        (x + &res, ResBlockCtx { c1, pre, c2 })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &ResBlockCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dact = self.c2.backward(ps, &ctx.c2, dy, grads);
        let dpre = relu_backward(&ctx.pre, &dact);
        let dres = self.c1.backward(ps, &ctx.c1, &dpre, grads);
        dy + &dres
    }
}
