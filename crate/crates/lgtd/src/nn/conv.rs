//! 2-D convolution (stride 1) via im2col and GEMM.

use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView4, Ix4};
use rand_chacha::ChaCha12Rng;

use super::{he_normal, zeros, Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

/// Pad the two trailing dims of a [B,C,H,W] tensor by `p` on every side.
pub fn pad2d(x: ArrayView4<f64>, p: usize, mode: PadMode) -> Array4<f64> {
    if p == 0 {
        return x.to_owned();
    }
    let (b, c, h, w) = x.dim();
    let mut out = Array4::zeros((b, c, h + 2 * p, w + 2 * p));
    match mode {
        PadMode::Zero => {
            out.slice_mut(s![.., .., p..p + h, p..p + w]).assign(&x);
        }
        PadMode::Replicate => {
            for i in 0..h + 2 * p {
                let si = i.saturating_sub(p).min(h - 1);
                for j in 0..w + 2 * p {
                    let sj = j.saturating_sub(p).min(w - 1);
                    out.slice_mut(s![.., .., i, j])
                        .assign(&x.slice(s![.., .., si, sj]));
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad2d`]: fold a padded gradient back onto the source pixels.
pub fn pad2d_backward(dp: &Array4<f64>, p: usize, mode: PadMode) -> Array4<f64> {
    if p == 0 {
        return dp.clone();
    }
    let (_, _, hp, wp) = dp.dim();
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    match mode {
        PadMode::Zero => dp.slice(s![.., .., p..p + h, p..p + w]).to_owned(),
        PadMode::Replicate => {
            let (b, c, _, _) = dp.dim();
            let mut dx = Array4::zeros((b, c, h, w));
            for i in 0..hp {
                let si = i.saturating_sub(p).min(h - 1);
                for j in 0..wp {
                    let sj = j.saturating_sub(p).min(w - 1);
                    let mut d = dx.slice_mut(s![.., .., si, sj]);
                    d += &dp.slice(s![.., .., i, j]);
                }
            }
            dx
        }
    }
}

fn im2col(xp: &Array4<f64>, bi: usize, k: usize) -> Array2<f64> {
    let (_, c, hp, wp) = xp.dim();
    let ho = hp - k + 1;
    let wo = wp - k + 1;
    let mut col = Array2::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for oi in 0..ho {
                    let src = xp.slice(s![bi, ci, oi + ki, kj..kj + wo]);
                    let mut dst = col.slice_mut(s![row, oi * wo..(oi + 1) * wo]);
                    dst.assign(&src);
                }
            }
        }
    }
    col
}

fn col2im_add(dcol: &Array2<f64>, dxp: &mut Array4<f64>, bi: usize, k: usize) {
    let (_, c, hp, wp) = dxp.dim();
    let ho = hp - k + 1;
    let wo = wp - k + 1;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for oi in 0..ho {
                    let src = dcol.slice(s![row, oi * wo..(oi + 1) * wo]);
                    let mut dst = dxp.slice_mut(s![bi, ci, oi + ki, kj..kj + wo]);
                    dst += &src;
                }
            }
        }
    }
}

/// Stride-1 convolution with odd kernel size; output keeps the input's
/// spatial dims (pad = k/2).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

pub struct ConvCtx {
    x: Array4<f64>,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        pad_mode: PadMode,
    ) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd, got {k}");
        let w = ps.add(
            format!("{name}.w"),
            he_normal(rng, &[cout, cin, k, k], cin * k * k),
        );
        let b = ps.add(format!("{name}.b"), zeros(&[cout]));
        Conv2d {
            w,
            b,
            cin,
            cout,
            k,
            pad: k / 2,
            pad_mode,
        }
    }

    /// Weights and bias start at zero; the layer emits exactly zero until the
    /// first optimizer step. Used for residual tails and offset predictors.
    pub fn new_zero(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        pad_mode: PadMode,
    ) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd, got {k}");
        let w = ps.add(format!("{name}.w"), zeros(&[cout, cin, k, k]));
        let b = ps.add(format!("{name}.b"), zeros(&[cout]));
        Conv2d {
            w,
            b,
            cin,
            cout,
            k,
            pad: k / 2,
            pad_mode,
        }
    }

    /// Sub-pixel-aware init for convs feeding a ×r pixel shuffle: cout =
    /// base·r², and the r² output channels of each base group share one
    /// kernel. Until training breaks the tie, shuffled output carries no
    /// r×r checkerboard, so a spatially constant input stays constant.
    pub fn new_icnr(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        cin: usize,
        base: usize,
        k: usize,
        r: usize,
        pad_mode: PadMode,
    ) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd, got {k}");
        let cout = base * r * r;
        let mut wt = Array4::zeros((cout, cin, k, k));
        for cb in 0..base {
            let ker = he_normal(rng, &[cin, k, k], cin * k * k);
            let ker = ker.view().into_dimensionality::<ndarray::Ix3>().unwrap();
            for sub in 0..r * r {
                wt.slice_mut(s![cb * r * r + sub, .., .., ..]).assign(&ker);
            }
        }
        let w = ps.add(format!("{name}.w"), wt.into_dyn());
        let b = ps.add(format!("{name}.b"), zeros(&[cout]));
        Conv2d {
            w,
            b,
            cin,
            cout,
            k,
            pad: k / 2,
            pad_mode,
        }
    }

    fn wmat<'a>(&self, ps: &'a ParamStore) -> ndarray::ArrayView2<'a, f64> {
        ps.get(self.w)
            .view()
            .into_shape_with_order((self.cout, self.cin * self.k * self.k))
            .expect("conv weight is owned and contiguous")
    }

    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, ConvCtx) {
        let x4 = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv input must be [B,C,H,W]");
        let (bsz, cin, h, w) = x4.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let xp = pad2d(x4, self.pad, self.pad_mode);
        let ho = h + 2 * self.pad - self.k + 1;
        let wo = w + 2 * self.pad - self.k + 1;
        let wmat = self.wmat(ps);
        let bias = ps.get(self.b);
        let mut out = Array4::zeros((bsz, self.cout, ho, wo));
        for bi in 0..bsz {
            let col = im2col(&xp, bi, self.k);
            let y = wmat.dot(&col);
            let y3 = y.into_shape_with_order((self.cout, ho, wo)).unwrap();
            out.slice_mut(s![bi, .., .., ..]).assign(&y3);
            for co in 0..self.cout {
                let mut ch = out.slice_mut(s![bi, co, .., ..]);
                ch += bias[[co]];
            }
        }
        (out.into_dyn(), ConvCtx { x: x4.to_owned() })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &ConvCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dy4 = dy
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv upstream gradient must be [B,C,H,W]");
        let (bsz, cout, ho, wo) = dy4.dim();
        assert_eq!(cout, self.cout, "conv upstream channels");
        let xp = pad2d(ctx.x.view(), self.pad, self.pad_mode);
        let wmat = self.wmat(ps);
        let mut dxp = Array4::zeros(xp.raw_dim());
        let mut dwmat = Array2::zeros((cout, self.cin * self.k * self.k));
        let mut db = Array1::zeros(cout);
        for bi in 0..bsz {
            let col = im2col(&xp, bi, self.k);
            let dy_mat = dy4
                .slice(s![bi, .., .., ..])
                .into_shape_with_order((cout, ho * wo))
                .expect("dy slice contiguous");
            dwmat += &dy_mat.dot(&col.t());
            db += &dy_mat.sum_axis(ndarray::Axis(1));
            let dcol = wmat.t().dot(&dy_mat);
            col2im_add(&dcol, &mut dxp, bi, self.k);
        }
        *grads.get_mut(self.w) += &dwmat
            .into_shape_with_order((cout, self.cin, self.k, self.k))
            .unwrap()
            .into_dyn();
        *grads.get_mut(self.b) += &db.into_dyn();
        pad2d_backward(&dxp, self.pad, self.pad_mode).into_dyn()
    }
}
