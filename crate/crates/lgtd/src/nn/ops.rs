//! Stateless tensor ops and their adjoints. Backward functions take either
//! the forward input or the forward output, whichever reconstructs the
//! Jacobian cheaper.

use ndarray::{azip, Array4, ArrayD, ArrayView4, Axis, Ix4, Slice};

pub(crate) fn as4(x: &ArrayD<f64>) -> ArrayView4<'_, f64> {
    x.view()
        .into_dimensionality::<Ix4>()
        .expect("expected a [B,C,H,W] tensor")
}

pub fn relu(x: &ArrayD<f64>) -> ArrayD<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &ArrayD<f64>, dy: &ArrayD<f64>) -> ArrayD<f64> {
    let mut dx = dy.clone();
    azip!((d in &mut dx, &v in x) if v <= 0.0 { *d = 0.0 });
    dx
}

pub fn sigmoid(x: &ArrayD<f64>) -> ArrayD<f64> {
    x.mapv(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// `y` is the forward output.
pub fn sigmoid_backward(y: &ArrayD<f64>, dy: &ArrayD<f64>) -> ArrayD<f64> {
    let mut dx = dy.clone();
    azip!((d in &mut dx, &sv in y) *d *= sv * (1.0 - sv));
    dx
}

/// 2×2 average pooling, stride 2. Spatial dims must be even.
pub fn avgpool2(x: &ArrayD<f64>) -> ArrayD<f64> {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool2 needs even dims, got {h}x{w}");
    let mut out = Array4::zeros((b, c, h / 2, w / 2));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    out[[bi, ci, i, j]] = 0.25
                        * (x4[[bi, ci, 2 * i, 2 * j]]
                            + x4[[bi, ci, 2 * i, 2 * j + 1]]
                            + x4[[bi, ci, 2 * i + 1, 2 * j]]
                            + x4[[bi, ci, 2 * i + 1, 2 * j + 1]]);
                }
            }
        }
    }
    out.into_dyn()
}

pub fn avgpool2_backward(dy: &ArrayD<f64>) -> ArrayD<f64> {
    let dy4 = as4(dy);
    let (b, c, h2, w2) = dy4.dim();
    let mut dx = Array4::zeros((b, c, h2 * 2, w2 * 2));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h2 {
                for j in 0..w2 {
                    let g = dy4[[bi, ci, i, j]] * 0.25;
                    dx[[bi, ci, 2 * i, 2 * j]] = g;
                    dx[[bi, ci, 2 * i, 2 * j + 1]] = g;
                    dx[[bi, ci, 2 * i + 1, 2 * j]] = g;
                    dx[[bi, ci, 2 * i + 1, 2 * j + 1]] = g;
                }
            }
        }
    }
    dx.into_dyn()
}

/// Source taps for ×2 bilinear upsampling without corner alignment: output
/// index i samples input coordinate (i + 0.5)/2 − 0.5, clamped to the edges.
fn up2_taps(n_in: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n_in)
        .map(|i| {
            let u = (i as f64 + 0.5) / 2.0 - 0.5;
            let f = u.floor();
            let t = u - f;
            let i0 = f as isize;
            let hi = n_in as isize - 1;
            let a = i0.clamp(0, hi) as usize;
            let b = (i0 + 1).clamp(0, hi) as usize;
            (a, b, 1.0 - t, t)
        })
        .collect()
}

/// ×2 bilinear upsampling.
pub fn bilinear_up2(x: &ArrayD<f64>) -> ArrayD<f64> {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let mut out = Array4::zeros((b, c, 2 * h, 2 * w));
    for bi in 0..b {
        for ci in 0..c {
            for (i, &(ia, ib, wy0, wy1)) in ty.iter().enumerate() {
                for (j, &(ja, jb, wx0, wx1)) in tx.iter().enumerate() {
                    out[[bi, ci, i, j]] = wy0 * (wx0 * x4[[bi, ci, ia, ja]] + wx1 * x4[[bi, ci, ia, jb]])
                        + wy1 * (wx0 * x4[[bi, ci, ib, ja]] + wx1 * x4[[bi, ci, ib, jb]]);
                }
            }
        }
    }
    out.into_dyn()
}

pub fn bilinear_up2_backward(dy: &ArrayD<f64>) -> ArrayD<f64> {
    let dy4 = as4(dy);
    let (b, c, h2, w2) = dy4.dim();
    assert!(h2 % 2 == 0 && w2 % 2 == 0);
    let (h, w) = (h2 / 2, w2 / 2);
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    let mut dx = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for (i, &(ia, ib, wy0, wy1)) in ty.iter().enumerate() {
                for (j, &(ja, jb, wx0, wx1)) in tx.iter().enumerate() {
                    let g = dy4[[bi, ci, i, j]];
                    dx[[bi, ci, ia, ja]] += wy0 * wx0 * g;
                    dx[[bi, ci, ia, jb]] += wy0 * wx1 * g;
                    dx[[bi, ci, ib, ja]] += wy1 * wx0 * g;
                    dx[[bi, ci, ib, jb]] += wy1 * wx1 * g;
                }
            }
        }
    }
    dx.into_dyn()
}

/// Channel-to-space permutation: out[c, i, j] = in[c·r² + r·(i mod r) + (j mod r), i/r, j/r].
/// Its adjoint and inverse are both [`pixel_unshuffle`].
pub fn pixel_shuffle(x: &ArrayD<f64>, r: usize) -> ArrayD<f64> {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    assert!(c % (r * r) == 0, "pixel_shuffle: {c} channels not divisible by r^2");
    let co = c / (r * r);
    let mut out = Array4::zeros((b, co, h * r, w * r));
    for bi in 0..b {
        for cj in 0..co {
            for i in 0..h * r {
                for j in 0..w * r {
                    out[[bi, cj, i, j]] =
                        x4[[bi, cj * r * r + r * (i % r) + (j % r), i / r, j / r]];
                }
            }
        }
    }
    out.into_dyn()
}

pub fn pixel_unshuffle(x: &ArrayD<f64>, r: usize) -> ArrayD<f64> {
    let x4 = as4(x);
    let (b, c, h, w) = x4.dim();
    assert!(h % r == 0 && w % r == 0, "pixel_unshuffle: dims not divisible by r");
    let mut out = Array4::zeros((b, c * r * r, h / r, w / r));
    for bi in 0..b {
        for cj in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[[bi, cj * r * r + r * (i % r) + (j % r), i / r, j / r]] =
                        x4[[bi, cj, i, j]];
                }
            }
        }
    }
    out.into_dyn()
}

pub fn concat_channels(xs: &[&ArrayD<f64>]) -> ArrayD<f64> {
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("channel concat shape mismatch")
}

/// Split an upstream gradient back into the pieces [`concat_channels`] joined.
pub fn split_channels(dy: &ArrayD<f64>, sizes: &[usize]) -> Vec<ArrayD<f64>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &sz in sizes {
        out.push(
            dy.slice_axis(Axis(1), Slice::from(start..start + sz))
                .to_owned(),
        );
        start += sz;
    }
    assert_eq!(start, dy.shape()[1], "split sizes must cover all channels");
    out
}

pub fn clamp01(x: &ArrayD<f64>) -> ArrayD<f64> {
    x.mapv(|v| v.clamp(0.0, 1.0))
}
