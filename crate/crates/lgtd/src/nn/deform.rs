//! Deformable convolution (v1: offsets only, no modulation masks).
//!
//! Each kernel tap samples the input at (base grid + per-location offset)
//! via bilinear interpolation; coordinates outside the image read zero.
//! A tap whose undisplaced grid position falls in the padding ring
//! contributes zero no matter where its offset points, exactly as in an
//! ordinary zero-padded convolution — this keeps integer-offset outputs
//! equal to shift-then-convolve on the full image including edges.
//! Offsets are an input tensor, not parameters — the caller predicts them.

use ndarray::{s, Array1, Array2, Array4, ArrayD, Ix4};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

use super::ops::as4;
use super::{he_normal, zeros, Grads, ParamId, ParamStore};

/// Offset channel layout: for tap t = ki·k + kj, channel 2t is the row
/// displacement and 2t+1 the column displacement, in pixels.
#[derive(Debug, Clone)]
pub struct DeformConv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

pub struct DeformConvCtx {
    x: Array4<f64>,
    offsets: Array4<f64>,
}

#[inline]
fn at(x: &Array4<f64>, bi: usize, ci: usize, h: usize, w: usize, r: isize, c: isize) -> f64 {
    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
        0.0
    } else {
        x[[bi, ci, r as usize, c as usize]]
    }
}

impl DeformConv2d {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd, got {k}");
        let w = ps.add(
            format!("{name}.w"),
            he_normal(rng, &[cout, cin, k, k], cin * k * k),
        );
        let b = ps.add(format!("{name}.b"), zeros(&[cout]));
        DeformConv2d { w, b, cin, cout, k }
    }

    fn wmat<'a>(&self, ps: &'a ParamStore) -> ndarray::ArrayView2<'a, f64> {
        ps.get(self.w)
            .view()
            .into_shape_with_order((self.cout, self.cin * self.k * self.k))
            .unwrap()
    }

    /// Sampled-column matrix for one batch item: rows indexed like im2col
    /// ((ci·k + ki)·k + kj), columns in raster order.
    fn sample_col(&self, x: &Array4<f64>, off: &Array4<f64>, bi: usize) -> Array2<f64> {
        let (_, cin, h, w) = x.dim();
        let k = self.k;
        let pad = k / 2;
        let mut col = Array2::zeros((cin * k * k, h * w));
        for ki in 0..k {
            for kj in 0..k {
                let t = ki * k + kj;
                for i in 0..h {
                    for j in 0..w {
                        let br = i as isize + ki as isize - pad as isize;
                        let bc = j as isize + kj as isize - pad as isize;
                        if br < 0 || bc < 0 || br >= h as isize || bc >= w as isize {
                            continue;
                        }
                        let py = br as f64 + off[[bi, 2 * t, i, j]];
                        let px = bc as f64 + off[[bi, 2 * t + 1, i, j]];
                        let i0 = py.floor() as isize;
                        let j0 = px.floor() as isize;
                        let fi = py - i0 as f64;
                        let fj = px - j0 as f64;
                        for ci in 0..cin {
                            let v00 = at(x, bi, ci, h, w, i0, j0);
                            let v01 = at(x, bi, ci, h, w, i0, j0 + 1);
                            let v10 = at(x, bi, ci, h, w, i0 + 1, j0);
                            let v11 = at(x, bi, ci, h, w, i0 + 1, j0 + 1);
                            let v = (1.0 - fi) * ((1.0 - fj) * v00 + fj * v01)
                                + fi * ((1.0 - fj) * v10 + fj * v11);
                            col[[(ci * k + ki) * k + kj, i * w + j]] = v;
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &ArrayD<f64>,
        offsets: &ArrayD<f64>,
    ) -> Result<(ArrayD<f64>, DeformConvCtx)> {
        if !offsets.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("deformable conv offsets"));
        }
        let x4 = as4(x).to_owned();
        let off4 = as4(offsets).to_owned();
        let (bsz, cin, h, w) = x4.dim();
        assert_eq!(cin, self.cin, "deform conv input channels");
        if off4.dim() != (bsz, 2 * self.k * self.k, h, w) {
            return Err(Error::shape(
                "deformable_conv",
                format!(
                    "offset field {:?} does not match input {}x{}x{}x{} with k={}",
                    off4.dim(),
                    bsz,
                    cin,
                    h,
                    w,
                    self.k
                ),
            ));
        }
        let wmat = self.wmat(ps);
        let bias = ps.get(self.b);
        let mut out = Array4::zeros((bsz, self.cout, h, w));
        for bi in 0..bsz {
            let col = self.sample_col(&x4, &off4, bi);
            let y = wmat.dot(&col);
            let y3 = y.into_shape_with_order((self.cout, h, w)).unwrap();
            out.slice_mut(s![bi, .., .., ..]).assign(&y3);
            for co in 0..self.cout {
                let mut ch = out.slice_mut(s![bi, co, .., ..]);
                ch += bias[[co]];
            }
        }
        Ok((
            out.into_dyn(),
            DeformConvCtx {
                x: x4,
                offsets: off4,
            },
        ))
    }

    /// Returns (dx, doffsets).
    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &DeformConvCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> (ArrayD<f64>, ArrayD<f64>) {
        let dy4 = dy.view().into_dimensionality::<Ix4>().unwrap();
        let (bsz, cin, h, w) = ctx.x.dim();
        let k = self.k;
        let pad = k / 2;
        let wmat = self.wmat(ps);
        let mut dwmat = Array2::<f64>::zeros((self.cout, cin * k * k));
        let mut db = Array1::<f64>::zeros(self.cout);
        let mut dx = Array4::zeros((bsz, cin, h, w));
        let mut doff = Array4::zeros(ctx.offsets.raw_dim());
        for bi in 0..bsz {
            let col = self.sample_col(&ctx.x, &ctx.offsets, bi);
            let dy_mat = dy4
                .slice(s![bi, .., .., ..])
                .into_shape_with_order((self.cout, h * w))
                .unwrap();
            dwmat += &dy_mat.dot(&col.t());
            db += &dy_mat.sum_axis(ndarray::Axis(1));
            let dcol = wmat.t().dot(&dy_mat);
            for ki in 0..k {
                for kj in 0..k {
                    let t = ki * k + kj;
                    for i in 0..h {
                        for j in 0..w {
                            let br = i as isize + ki as isize - pad as isize;
                            let bc = j as isize + kj as isize - pad as isize;
                            if br < 0 || bc < 0 || br >= h as isize || bc >= w as isize {
                                continue;
                            }
                            let py = br as f64 + ctx.offsets[[bi, 2 * t, i, j]];
                            let px = bc as f64 + ctx.offsets[[bi, 2 * t + 1, i, j]];
                            let i0 = py.floor() as isize;
                            let j0 = px.floor() as isize;
                            let fi = py - i0 as f64;
                            let fj = px - j0 as f64;
                            let mut gy = 0.0;
                            let mut gx = 0.0;
                            for ci in 0..cin {
                                let g = dcol[[(ci * k + ki) * k + kj, i * w + j]];
                                if g == 0.0 {
                                    continue;
                                }
                                let v00 = at(&ctx.x, bi, ci, h, w, i0, j0);
                                let v01 = at(&ctx.x, bi, ci, h, w, i0, j0 + 1);
                                let v10 = at(&ctx.x, bi, ci, h, w, i0 + 1, j0);
                                let v11 = at(&ctx.x, bi, ci, h, w, i0 + 1, j0 + 1);
                                // Value gradient: scatter the 4 bilinear weights.
                                for (r, c, wt) in [
                                    (i0, j0, (1.0 - fi) * (1.0 - fj)),
                                    (i0, j0 + 1, (1.0 - fi) * fj),
                                    (i0 + 1, j0, fi * (1.0 - fj)),
                                    (i0 + 1, j0 + 1, fi * fj),
                                ] {
                                    if r >= 0 && c >= 0 && r < h as isize && c < w as isize {
                                        dx[[bi, ci, r as usize, c as usize]] += g * wt;
                                    }
                                }
                                // Position gradient of the bilinear sample.
                                gy += g * ((1.0 - fj) * (v10 - v00) + fj * (v11 - v01));
                                gx += g * ((1.0 - fi) * (v01 - v00) + fi * (v11 - v10));
                            }
                            doff[[bi, 2 * t, i, j]] += gy;
                            doff[[bi, 2 * t + 1, i, j]] += gx;
                        }
                    }
                }
            }
        }
        *grads.get_mut(self.w) += &dwmat
            .into_shape_with_order((self.cout, cin, k, k))
            .unwrap()
            .into_dyn();
        *grads.get_mut(self.b) += &db.into_dyn();
        (dx.into_dyn(), doff.into_dyn())
    }
}
