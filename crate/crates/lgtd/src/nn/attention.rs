//! Layer normalization, windowed multi-head self-attention, and
//! squeeze-excite channel attention.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayD, Axis};
use rand_chacha::ChaCha12Rng;

use super::ops::as4;
use super::{he_normal, ones, xavier_uniform, zeros, Grads, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;

/// Per-token layer normalization over the channel axis of [B,C,H,W].
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub c: usize,
}

pub struct LayerNormCtx {
    xhat: Array4<f64>,
    inv_std: Array3<f64>,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), ones(&[c]));
        let beta = ps.add(format!("{name}.beta"), zeros(&[c]));
        LayerNorm { gamma, beta, c }
    }

    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, LayerNormCtx) {
        let x4 = as4(x);
        let (b, c, h, w) = x4.dim();
        assert_eq!(c, self.c, "layernorm channels");
        let gamma = ps.get(self.gamma);
        let beta = ps.get(self.beta);
        let mut xhat = Array4::zeros((b, c, h, w));
        let mut inv_std = Array3::zeros((b, h, w));
        let mut out = Array4::zeros((b, c, h, w));
        let cn = c as f64;
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let mut mu = 0.0;
                    for ci in 0..c {
                        mu += x4[[bi, ci, i, j]];
                    }
                    mu /= cn;
                    let mut var = 0.0;
                    for ci in 0..c {
                        let d = x4[[bi, ci, i, j]] - mu;
                        var += d * d;
                    }
                    var /= cn;
                    let istd = 1.0 / (var + LN_EPS).sqrt();
                    inv_std[[bi, i, j]] = istd;
                    for ci in 0..c {
                        let xh = (x4[[bi, ci, i, j]] - mu) * istd;
                        xhat[[bi, ci, i, j]] = xh;
                        out[[bi, ci, i, j]] = gamma[[ci]] * xh + beta[[ci]];
                    }
                }
            }
        }
        (out.into_dyn(), LayerNormCtx { xhat, inv_std })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &LayerNormCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dy4 = as4(dy);
        let (b, c, h, w) = dy4.dim();
        let gamma = ps.get(self.gamma);
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        let mut dx = Array4::zeros((b, c, h, w));
        let cn = c as f64;
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let istd = ctx.inv_std[[bi, i, j]];
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for ci in 0..c {
                        let g = dy4[[bi, ci, i, j]] * gamma[[ci]];
                        let xh = ctx.xhat[[bi, ci, i, j]];
                        mean_g += g;
                        mean_gx += g * xh;
                        dgamma[[ci]] += dy4[[bi, ci, i, j]] * xh;
                        dbeta[[ci]] += dy4[[bi, ci, i, j]];
                    }
                    mean_g /= cn;
                    mean_gx /= cn;
                    for ci in 0..c {
                        let g = dy4[[bi, ci, i, j]] * gamma[[ci]];
                        let xh = ctx.xhat[[bi, ci, i, j]];
                        dx[[bi, ci, i, j]] = istd * (g - mean_g - xh * mean_gx);
                    }
                }
            }
        }
        *grads.get_mut(self.gamma) += &dgamma.into_dyn();
        *grads.get_mut(self.beta) += &dbeta.into_dyn();
        dx.into_dyn()
    }
}

/// Non-overlapping-window multi-head self-attention. Tokens are window
/// pixels in raster order; projections act per token on the channel vector.
/// No window shifting, no positional terms.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bq: ParamId,
    pub bk: ParamId,
    pub bv: ParamId,
    pub bo: ParamId,
    pub c: usize,
    pub heads: usize,
    pub window: usize,
}

struct WindowCtx {
    xw: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Array3<f64>,
    o: Array2<f64>,
}

pub struct WindowAttentionCtx {
    windows: Vec<WindowCtx>,
    dims: (usize, usize, usize, usize),
}

impl WindowAttention {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        heads: usize,
        window: usize,
        zero_out: bool,
    ) -> Self {
        assert!(c % heads == 0, "channels {c} not divisible by {heads} heads");
        let proj = |ps: &mut ParamStore, rng: &mut ChaCha12Rng, n: String| {
            ps.add(n, xavier_uniform(rng, &[c, c], c, c))
        };
        let wq = proj(ps, rng, format!("{name}.wq"));
        let wk = proj(ps, rng, format!("{name}.wk"));
        let wv = proj(ps, rng, format!("{name}.wv"));
        let wo = if zero_out {
            ps.add(format!("{name}.wo"), zeros(&[c, c]))
        } else {
            proj(ps, rng, format!("{name}.wo"))
        };
        let bq = ps.add(format!("{name}.bq"), zeros(&[c]));
        let bk = ps.add(format!("{name}.bk"), zeros(&[c]));
        let bv = ps.add(format!("{name}.bv"), zeros(&[c]));
        let bo = ps.add(format!("{name}.bo"), zeros(&[c]));
        WindowAttention {
            wq,
            wk,
            wv,
            wo,
            bq,
            bk,
            bv,
            bo,
            c,
            heads,
            window,
        }
    }

    fn mat<'a>(&self, ps: &'a ParamStore, id: ParamId) -> ndarray::ArrayView2<'a, f64> {
        ps.get(id)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
    }

    fn vec<'a>(&self, ps: &'a ParamStore, id: ParamId) -> ndarray::ArrayView1<'a, f64> {
        ps.get(id)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
    }

    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, WindowAttentionCtx) {
        let x4 = as4(x);
        let (b, c, h, w) = x4.dim();
        assert_eq!(c, self.c, "attention channels");
        let ws = self.window;
        assert!(
            h % ws == 0 && w % ws == 0,
            "spatial dims {h}x{w} not divisible by window {ws}"
        );
        let n = ws * ws;
        let d = c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (wq, wk, wv, wo) = (
            self.mat(ps, self.wq),
            self.mat(ps, self.wk),
            self.mat(ps, self.wv),
            self.mat(ps, self.wo),
        );
        let (bq, bk, bv, bo) = (
            self.vec(ps, self.bq),
            self.vec(ps, self.bk),
            self.vec(ps, self.bv),
            self.vec(ps, self.bo),
        );
        let mut out = Array4::zeros((b, c, h, w));
        let mut windows = Vec::with_capacity(b * (h / ws) * (w / ws));
        for bi in 0..b {
            for wi in 0..h / ws {
                for wj in 0..w / ws {
                    let mut xw = Array2::zeros((n, c));
                    for ii in 0..ws {
                        for jj in 0..ws {
                            for ci in 0..c {
                                xw[[ii * ws + jj, ci]] = x4[[bi, ci, wi * ws + ii, wj * ws + jj]];
                            }
                        }
                    }
                    let q = xw.dot(&wq) + &bq;
                    let k = xw.dot(&wk) + &bk;
                    let v = xw.dot(&wv) + &bv;
                    let mut att = Array3::zeros((self.heads, n, n));
                    let mut o = Array2::zeros((n, c));
                    for hd in 0..self.heads {
                        let cols = hd * d..(hd + 1) * d;
                        let qh = q.slice(s![.., cols.clone()]);
                        let kh = k.slice(s![.., cols.clone()]);
                        let vh = v.slice(s![.., cols.clone()]);
                        let mut scores = qh.dot(&kh.t());
                        scores *= scale;
                        for mut row in scores.rows_mut() {
                            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            row.mapv_inplace(|z| (z - m).exp());
                            let sum = row.sum();
                            row.mapv_inplace(|z| z / sum);
                        }
                        let oh = scores.dot(&vh);
                        o.slice_mut(s![.., cols]).assign(&oh);
                        att.slice_mut(s![hd, .., ..]).assign(&scores);
                    }
                    let yw = o.dot(&wo) + &bo;
                    for ii in 0..ws {
                        for jj in 0..ws {
                            for ci in 0..c {
                                out[[bi, ci, wi * ws + ii, wj * ws + jj]] = yw[[ii * ws + jj, ci]];
                            }
                        }
                    }
                    windows.push(WindowCtx {
                        xw,
                        q,
                        k,
                        v,
                        att,
                        o,
                    });
                }
            }
        }
        (
            out.into_dyn(),
            WindowAttentionCtx {
                windows,
                dims: (b, c, h, w),
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &WindowAttentionCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dy4 = as4(dy);
        let (b, c, h, w) = ctx.dims;
        assert_eq!(dy4.dim(), (b, c, h, w));
        let ws = self.window;
        let n = ws * ws;
        let d = c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let (wq, wk, wv, wo) = (
            self.mat(ps, self.wq),
            self.mat(ps, self.wk),
            self.mat(ps, self.wv),
            self.mat(ps, self.wo),
        );
        let mut dwq = Array2::<f64>::zeros((c, c));
        let mut dwk = Array2::<f64>::zeros((c, c));
        let mut dwv = Array2::<f64>::zeros((c, c));
        let mut dwo = Array2::<f64>::zeros((c, c));
        let mut dbq = Array1::<f64>::zeros(c);
        let mut dbk = Array1::<f64>::zeros(c);
        let mut dbv = Array1::<f64>::zeros(c);
        let mut dbo = Array1::<f64>::zeros(c);
        let mut dx = Array4::zeros((b, c, h, w));
        let mut widx = 0;
        for bi in 0..b {
            for wi in 0..h / ws {
                for wj in 0..w / ws {
                    let wc = &ctx.windows[widx];
                    widx += 1;
                    let mut dyw = Array2::zeros((n, c));
                    for ii in 0..ws {
                        for jj in 0..ws {
                            for ci in 0..c {
                                dyw[[ii * ws + jj, ci]] = dy4[[bi, ci, wi * ws + ii, wj * ws + jj]];
                            }
                        }
                    }
                    let do_ = dyw.dot(&wo.t());
                    dwo += &wc.o.t().dot(&dyw);
                    dbo += &dyw.sum_axis(Axis(0));
                    let mut dq = Array2::zeros((n, c));
                    let mut dk = Array2::zeros((n, c));
                    let mut dv = Array2::zeros((n, c));
                    for hd in 0..self.heads {
                        let cols = hd * d..(hd + 1) * d;
                        let a = wc.att.slice(s![hd, .., ..]);
                        let qh = wc.q.slice(s![.., cols.clone()]);
                        let kh = wc.k.slice(s![.., cols.clone()]);
                        let vh = wc.v.slice(s![.., cols.clone()]);
                        let doh = do_.slice(s![.., cols.clone()]);
                        let da = doh.dot(&vh.t());
                        dv.slice_mut(s![.., cols.clone()])
                            .assign(&a.t().dot(&doh));
                        // Softmax rows: dz_ij = a_ij * (da_ij - sum_j da_ij a_ij).
                        let mut dz = Array2::zeros((n, n));
                        for i in 0..n {
                            let mut rs = 0.0;
                            for j in 0..n {
                                rs += da[[i, j]] * a[[i, j]];
                            }
                            for j in 0..n {
                                dz[[i, j]] = a[[i, j]] * (da[[i, j]] - rs);
                            }
                        }
                        dz *= scale;
                        dq.slice_mut(s![.., cols.clone()]).assign(&dz.dot(&kh));
                        dk.slice_mut(s![.., cols]).assign(&dz.t().dot(&qh));
                    }
                    dwq += &wc.xw.t().dot(&dq);
                    dwk += &wc.xw.t().dot(&dk);
                    dwv += &wc.xw.t().dot(&dv);
                    dbq += &dq.sum_axis(Axis(0));
                    dbk += &dk.sum_axis(Axis(0));
                    dbv += &dv.sum_axis(Axis(0));
                    let dxw = dq.dot(&wq.t()) + dk.dot(&wk.t()) + dv.dot(&wv.t());
                    for ii in 0..ws {
                        for jj in 0..ws {
                            for ci in 0..c {
                                dx[[bi, ci, wi * ws + ii, wj * ws + jj]] = dxw[[ii * ws + jj, ci]];
                            }
                        }
                    }
                }
            }
        }
        *grads.get_mut(self.wq) += &dwq.into_dyn();
        *grads.get_mut(self.wk) += &dwk.into_dyn();
        *grads.get_mut(self.wv) += &dwv.into_dyn();
        *grads.get_mut(self.wo) += &dwo.into_dyn();
        *grads.get_mut(self.bq) += &dbq.into_dyn();
        *grads.get_mut(self.bk) += &dbk.into_dyn();
        *grads.get_mut(self.bv) += &dbv.into_dyn();
        *grads.get_mut(self.bo) += &dbo.into_dyn();
        dx.into_dyn()
    }
}

/// Squeeze-excite channel attention: global average pool, two dense layers
/// with a bottleneck of C/reduction, sigmoid gate, channel-wise rescale.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub c: usize,
    pub red: usize,
}

pub struct ChannelAttentionCtx {
    x: Array4<f64>,
    g: Array2<f64>,
    h1: Array2<f64>,
    a1: Array2<f64>,
    s: Array2<f64>,
}

impl ChannelAttention {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        name: &str,
        c: usize,
        reduction: usize,
    ) -> Self {
        assert!(
            c >= reduction && c % reduction == 0,
            "channels {c} must be a multiple of reduction {reduction}"
        );
        let mid = c / reduction;
        let w1 = ps.add(format!("{name}.w1"), he_normal(rng, &[c, mid], c));
        let b1 = ps.add(format!("{name}.b1"), zeros(&[mid]));
        let w2 = ps.add(format!("{name}.w2"), he_normal(rng, &[mid, c], mid));
        let b2 = ps.add(format!("{name}.b2"), zeros(&[c]));
        ChannelAttention {
            w1,
            b1,
            w2,
            b2,
            c,
            red: reduction,
        }
    }

    pub fn forward(&self, ps: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, ChannelAttentionCtx) {
        let x4 = as4(x);
        let (b, c, h, w) = x4.dim();
        assert_eq!(c, self.c, "channel attention channels");
        let w1 = ps.get(self.w1).view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let w2 = ps.get(self.w2).view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b1 = ps.get(self.b1).view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let b2 = ps.get(self.b2).view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut g = Array2::zeros((b, c));
        let hw = (h * w) as f64;
        for bi in 0..b {
            for ci in 0..c {
                g[[bi, ci]] = x4.slice(s![bi, ci, .., ..]).sum() / hw;
            }
        }
        let h1 = g.dot(&w1) + &b1;
        let a1 = h1.mapv(|v| v.max(0.0));
        let h2 = a1.dot(&w2) + &b2;
        let s = h2.mapv(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let mut out = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                let sc = s[[bi, ci]];
                let mut ch = out.slice_mut(s![bi, ci, .., ..]);
                ch.assign(&x4.slice(s![bi, ci, .., ..]));
                ch *= sc;
            }
        }
        (
            out.into_dyn(),
            ChannelAttentionCtx {
                x: x4.to_owned(),
                g,
                h1,
                a1,
                s,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        ctx: &ChannelAttentionCtx,
        dy: &ArrayD<f64>,
        grads: &mut Grads,
    ) -> ArrayD<f64> {
        let dy4 = as4(dy);
        let (b, c, h, w) = dy4.dim();
        let w1 = ps.get(self.w1).view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let w2 = ps.get(self.w2).view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let hw = (h * w) as f64;

        // Through the gate value s: ds[b,c] = sum_ij dy * x.
        let mut ds = Array2::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                ds[[bi, ci]] = (&dy4.slice(s![bi, ci, .., ..]) * &ctx.x.slice(s![bi, ci, .., ..]))
                    .sum();
            }
        }
        let dh2 = &ds * &ctx.s.mapv(|v| v * (1.0 - v));
        let da1 = dh2.dot(&w2.t());
        let mut dh1 = da1;
        ndarray::Zip::from(&mut dh1)
            .and(&ctx.h1)
            .for_each(|d, &v| {
                if v <= 0.0 {
                    *d = 0.0;
                }
            });
        let dg = dh1.dot(&w1.t());

        *grads.get_mut(self.w2) += &ctx.a1.t().dot(&dh2).into_dyn();
        *grads.get_mut(self.b2) += &dh2.sum_axis(Axis(0)).into_dyn();
        *grads.get_mut(self.w1) += &ctx.g.t().dot(&dh1).into_dyn();
        *grads.get_mut(self.b1) += &dh1.sum_axis(Axis(0)).into_dyn();

        // Direct path dy*s plus pooled path dg spread uniformly.
        let mut dx = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                let sc = ctx.s[[bi, ci]];
                let gp = dg[[bi, ci]] / hw;
                let mut ch = dx.slice_mut(s![bi, ci, .., ..]);
                ch.assign(&dy4.slice(s![bi, ci, .., ..]));
                ch *= sc;
                ch += gp;
            }
        }
        dx.into_dyn()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_op_grads, rand_arr};
    use rand::SeedableRng;

    #[test]
    fn layernorm_normalizes_tokens() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut ps = ParamStore::new();
        let ln = LayerNorm::new(&mut ps, "ln", 8);
        let x = rand_arr(&mut rng, &[1, 8, 2, 2]);
        let (y, _) = ln.forward(&ps, &x);
        // gamma=1, beta=0: every token has ~zero mean and ~unit variance.
        for i in 0..2 {
            for j in 0..2 {
                let token: Vec<f64> = (0..8).map(|c| y[[0, c, i, j]]).collect();
                let mean = token.iter().sum::<f64>() / 8.0;
                let var = token.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn layernorm_grads() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let mut ps = ParamStore::new();
        let ln = LayerNorm::new(&mut ps, "ln", 4);
        let x = rand_arr(&mut rng, &[2, 4, 2, 3]);
        check_op_grads(
            &mut ps,
            &x,
            &|ps, x| ln.forward(ps, x).0,
            &|ps, x, dy| {
                let (_, ctx) = ln.forward(ps, x);
                let mut g = Grads::zeros_like(ps);
                let dx = ln.backward(ps, &ctx, dy, &mut g);
                (dx, g)
            },
            1e-5,
        );
    }

    #[test]
    fn window1_msa_is_per_pixel_projection() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut ps = ParamStore::new();
        let msa = WindowAttention::new(&mut ps, &mut rng, "msa", 6, 2, 1, false);
        let x = rand_arr(&mut rng, &[1, 6, 3, 3]);
        let (y, _) = msa.forward(&ps, &x);
        let wv = ps
            .get(msa.wv)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        let wo = ps
            .get(msa.wo)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        for i in 0..3 {
            for j in 0..3 {
                let tok = Array1::from_iter((0..6).map(|c| x[[0, c, i, j]]));
                let want = tok.dot(&wv).dot(&wo);
                for c in 0..6 {
                    assert!((y[[0, c, i, j]] - want[[c]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn msa_grads() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let mut ps = ParamStore::new();
        let msa = WindowAttention::new(&mut ps, &mut rng, "msa", 4, 2, 2, false);
        let x = rand_arr(&mut rng, &[1, 4, 4, 4]);
        check_op_grads(
            &mut ps,
            &x,
            &|ps, x| msa.forward(ps, x).0,
            &|ps, x, dy| {
                let (_, ctx) = msa.forward(ps, x);
                let mut g = Grads::zeros_like(ps);
                let dx = msa.backward(ps, &ctx, dy, &mut g);
                (dx, g)
            },
            1e-5,
        );
    }

    #[test]
    fn channel_attention_scales_channels() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        let mut ps = ParamStore::new();
        let ca = ChannelAttention::new(&mut ps, &mut rng, "ca", 8, 4);
        let x = rand_arr(&mut rng, &[2, 8, 3, 3]);
        let (y, ctx) = ca.forward(&ps, &x);
        for bi in 0..2 {
            for c in 0..8 {
                let sc = ctx.s[[bi, c]];
                assert!(sc > 0.0 && sc < 1.0);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((y[[bi, c, i, j]] - sc * x[[bi, c, i, j]]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn channel_attention_grads() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let mut ps = ParamStore::new();
        let ca = ChannelAttention::new(&mut ps, &mut rng, "ca", 4, 2);
        let x = rand_arr(&mut rng, &[2, 4, 3, 3]);
        check_op_grads(
            &mut ps,
            &x,
            &|ps, x| ca.forward(ps, x).0,
            &|ps, x, dy| {
                let (_, ctx) = ca.forward(ps, x);
                let mut g = Grads::zeros_like(ps);
                let dx = ca.backward(ps, &ctx, dy, &mut g);
                (dx, g)
            },
            1e-5,
        );
    }
}
