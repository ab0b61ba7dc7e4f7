//! Bicubic antialiased downsampling used to manufacture LR inputs from HR
//! ground truth.
//!
//! Catmull-Rom-style cubic kernel with a = -0.5. For a reduction by factor
//! `r` the kernel is stretched by `r` (support 4r taps) so it acts as a
//! low-pass filter, per-output-pixel weights are renormalized to sum to 1,
//! and edges are handled by clamping tap indices (replicate). Output is
//! clamped back into [0, 1] since the kernel has negative lobes.

use ndarray::Array3;

use super::{Clip, Frame};
use crate::error::{Error, Result};

/// Cubic interpolation kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-pixel taps for one axis: clamped source indices and
/// normalized weights.
fn axis_taps(n_in: usize, r: usize) -> Vec<Vec<(usize, f64)>> {
    let n_out = n_in / r;
    let rf = r as f64;
    let mut taps = Vec::with_capacity(n_out);
    for o in 0..n_out {
        // Center of output pixel o in input coordinates.
        let src = (o as f64 + 0.5) * rf - 0.5;
        let lo = (src - 2.0 * rf).ceil() as isize;
        let hi = (src + 2.0 * rf).floor() as isize;
        let mut row = Vec::with_capacity((hi - lo + 1) as usize);
        let mut sum = 0.0;
        for t in lo..=hi {
            let w = cubic((src - t as f64) / rf);
            if w == 0.0 {
                continue;
            }
            let idx = t.clamp(0, n_in as isize - 1) as usize;
            row.push((idx, w));
            sum += w;
        }
        for tw in &mut row {
            tw.1 /= sum;
        }
        taps.push(row);
    }
    taps
}

/// Per-output-pixel taps for one axis when *enlarging* by factor `r`: the
/// kernel stays at unit scale (4-tap support) and source positions map as
/// `src = (o + 0.5) / r - 0.5`.
fn up_axis_taps(n_in: usize, r: usize) -> Vec<Vec<(usize, f64)>> {
    let n_out = n_in * r;
    let rf = r as f64;
    let mut taps = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let src = (o as f64 + 0.5) / rf - 0.5;
        let lo = (src - 2.0).ceil() as isize;
        let hi = (src + 2.0).floor() as isize;
        let mut row = Vec::with_capacity((hi - lo + 1) as usize);
        let mut sum = 0.0;
        for t in lo..=hi {
            let w = cubic(src - t as f64);
            if w == 0.0 {
                continue;
            }
            let idx = t.clamp(0, n_in as isize - 1) as usize;
            row.push((idx, w));
            sum += w;
        }
        for tw in &mut row {
            tw.1 /= sum;
        }
        taps.push(row);
    }
    taps
}

/// Bicubic enlargement of a single frame by integer factor `r`, with
/// replicate edges and output clamped to [0, 1]. This is the reference
/// interpolation baseline that a trained network has to beat.
pub fn upsample_frame(frame: &Frame, r: usize) -> Frame {
    if r <= 1 {
        return frame.clone();
    }
    let (h, w) = (frame.h(), frame.w());
    let (ho, wo) = (h * r, w * r);
    let row_taps = up_axis_taps(h, r);
    let col_taps = up_axis_taps(w, r);

    let mut tmp = Array3::zeros((3, ho, w));
    for c in 0..3 {
        for (i, taps) in row_taps.iter().enumerate() {
            for j in 0..w {
                let mut acc = 0.0;
                for &(t, wt) in taps {
                    acc += wt * frame.pixels[[c, t, j]];
                }
                tmp[[c, i, j]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((3, ho, wo));
    for c in 0..3 {
        for i in 0..ho {
            for (j, taps) in col_taps.iter().enumerate() {
                let mut acc = 0.0;
                for &(t, wt) in taps {
                    acc += wt * tmp[[c, i, t]];
                }
                out[[c, i, j]] = acc;
            }
        }
    }
    Frame::from_clamped(out)
}

/// Bicubic enlargement of every frame in a clip by integer factor `r`.
pub fn upsample(clip: &Clip, r: usize) -> Result<Clip> {
    if r == 0 {
        return Err(Error::config("r", "scale must be >= 1"));
    }
    let frames = clip.frames.iter().map(|f| upsample_frame(f, r)).collect();
    Clip::new(frames, clip.scene_id.clone(), clip.start_index)
}

fn downsample_frame(frame: &Frame, r: usize) -> Frame {
    let (h, w) = (frame.h(), frame.w());
    let (ho, wo) = (h / r, w / r);
    let row_taps = axis_taps(h, r);
    let col_taps = axis_taps(w, r);

    // Rows first, then columns (the kernel is separable).
    let mut tmp = Array3::zeros((3, ho, w));
    for c in 0..3 {
        for (i, taps) in row_taps.iter().enumerate() {
            for j in 0..w {
                let mut acc = 0.0;
                for &(t, wt) in taps {
                    acc += wt * frame.pixels[[c, t, j]];
                }
                tmp[[c, i, j]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((3, ho, wo));
    for c in 0..3 {
        for i in 0..ho {
            for (j, taps) in col_taps.iter().enumerate() {
                let mut acc = 0.0;
                for &(t, wt) in taps {
                    acc += wt * tmp[[c, i, t]];
                }
                out[[c, i, j]] = acc;
            }
        }
    }
    Frame::from_clamped(out)
}

/// Downsample every frame of a clip by integer factor `r`.
///
/// Frame dimensions must be divisible by `r`.
pub fn degrade(clip: &Clip, r: usize) -> Result<Clip> {
    if r == 0 {
        return Err(Error::config("r", "scale must be >= 1"));
    }
    if clip.h() % r != 0 || clip.w() % r != 0 {
        return Err(Error::shape(
            "degrade",
            format!("{}x{} not divisible by {}", clip.h(), clip.w(), r),
        ));
    }
    if r == 1 {
        return Ok(clip.clone());
    }
    let frames = clip.frames.iter().map(|f| downsample_frame(f, r)).collect();
    Clip::new(frames, clip.scene_id.clone(), clip.start_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn clip_of(frames: Vec<Array3<f64>>) -> Clip {
        let frames = frames
            .into_iter()
            .map(|p| Frame::new(p).unwrap())
            .collect();
        Clip::new(frames, "t", 0).unwrap()
    }

    /// Independent direct (non-separable) evaluation of the same resampler:
    /// a full 2-D weighted sum over clamped taps with per-axis normalization.
    fn direct_downsample(px: &Array3<f64>, r: usize) -> Array3<f64> {
        let (h, w) = (px.shape()[1], px.shape()[2]);
        let (ho, wo) = (h / r, w / r);
        let rf = r as f64;
        let kernel = |x: f64| -> f64 {
            let a = -0.5;
            let x = x.abs();
            if x <= 1.0 {
                (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
            } else if x < 2.0 {
                a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
            } else {
                0.0
            }
        };
        let mut out = Array3::zeros((3, ho, wo));
        for c in 0..3 {
            for oi in 0..ho {
                for oj in 0..wo {
                    let si = (oi as f64 + 0.5) * rf - 0.5;
                    let sj = (oj as f64 + 0.5) * rf - 0.5;
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for ti in (si - 2.0 * rf).ceil() as isize..=(si + 2.0 * rf).floor() as isize {
                        let wi = kernel((si - ti as f64) / rf);
                        for tj in
                            (sj - 2.0 * rf).ceil() as isize..=(sj + 2.0 * rf).floor() as isize
                        {
                            let wj = kernel((sj - tj as f64) / rf);
                            let ii = ti.clamp(0, h as isize - 1) as usize;
                            let jj = tj.clamp(0, w as isize - 1) as usize;
                            num += wi * wj * px[[c, ii, jj]];
                            den += wi * wj;
                        }
                    }
                    out[[c, oi, oj]] = (num / den).clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn constant_frame_stays_constant() {
        let clip = clip_of(vec![Array3::from_elem((3, 32, 32), 0.37)]);
        let lr = degrade(&clip, 4).unwrap();
        assert_eq!(lr.h(), 8);
        assert_eq!(lr.w(), 8);
        for &v in lr.frames[0].pixels.iter() {
            assert!((v - 0.37).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn linear_ramp_interior_matches_analytic_value() {
        // The cubic kernel reproduces linear signals exactly, so away from
        // the clamped borders each output pixel must equal the ramp sampled
        // at its source position.
        let (h, w) = (8, 64);
        let mut px = Array3::zeros((3, h, w));
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    px[[c, i, j]] = j as f64 / (w - 1) as f64;
                }
            }
        }
        let clip = clip_of(vec![px]);
        let r = 4;
        let lr = degrade(&clip, r).unwrap();
        for j in 2..(w / r - 2) {
            let src = (j as f64 + 0.5) * r as f64 - 0.5;
            let expect = src / (w - 1) as f64;
            let got = lr.frames[0].pixels[[0, 1, j]];
            assert!((got - expect).abs() < 1e-6, "col {j}: {got} vs {expect}");
        }
    }

    #[test]
    fn separable_matches_direct_convolution() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for &r in &[2usize, 4] {
            let (h, w) = (4 * r, 6 * r);
            let px = Array3::from_shape_fn((3, h, w), |_| rng.gen::<f64>());
            let clip = clip_of(vec![px.clone()]);
            let lr = degrade(&clip, r).unwrap();
            let want = direct_downsample(&px, r);
            for (a, b) in lr.frames[0].pixels.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-6, "r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_non_divisible_dims() {
        let clip = clip_of(vec![Array3::zeros((3, 30, 32))]);
        assert!(degrade(&clip, 4).is_err());
        let clip = clip_of(vec![Array3::zeros((3, 32, 32))]);
        assert!(degrade(&clip, 4).is_ok());
    }

    #[test]
    fn output_stays_in_range() {
        // Checkerboard maximizes ringing from the negative lobes.
        let px = Array3::from_shape_fn((3, 16, 16), |(_, i, j)| ((i + j) % 2) as f64);
        let clip = clip_of(vec![px]);
        let lr = degrade(&clip, 2).unwrap();
        for &v in lr.frames[0].pixels.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn identity_at_scale_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let px = Array3::from_shape_fn((3, 8, 8), |_| rng.gen::<f64>());
        let clip = clip_of(vec![px.clone()]);
        let out = degrade(&clip, 1).unwrap();
        assert_eq!(out.frames[0].pixels, px);
    }

    /// Independent direct (non-separable) bicubic enlargement used as the
    /// oracle for the separable implementation.
    fn direct_upsample(px: &Array3<f64>, r: usize) -> Array3<f64> {
        let (h, w) = (px.shape()[1], px.shape()[2]);
        let rf = r as f64;
        let kernel = |x: f64| -> f64 {
            let a = -0.5;
            let x = x.abs();
            if x <= 1.0 {
                (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
            } else if x < 2.0 {
                a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
            } else {
                0.0
            }
        };
        let mut out = Array3::zeros((3, h * r, w * r));
        for c in 0..3 {
            for oi in 0..h * r {
                for oj in 0..w * r {
                    let si = (oi as f64 + 0.5) / rf - 0.5;
                    let sj = (oj as f64 + 0.5) / rf - 0.5;
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for ti in (si - 2.0).ceil() as isize..=(si + 2.0).floor() as isize {
                        let wi = kernel(si - ti as f64);
                        for tj in (sj - 2.0).ceil() as isize..=(sj + 2.0).floor() as isize {
                            let wj = kernel(sj - tj as f64);
                            let ii = ti.clamp(0, h as isize - 1) as usize;
                            let jj = tj.clamp(0, w as isize - 1) as usize;
                            num += wi * wj * px[[c, ii, jj]];
                            den += wi * wj;
                        }
                    }
                    out[[c, oi, oj]] = (num / den).clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn upsample_matches_direct_convolution() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for &r in &[2usize, 4] {
            let px = Array3::from_shape_fn((3, 6, 5), |_| rng.gen::<f64>());
            let clip = clip_of(vec![px.clone()]);
            let hr = upsample(&clip, r).unwrap();
            assert_eq!(hr.h(), 6 * r);
            assert_eq!(hr.w(), 5 * r);
            let want = direct_upsample(&px, r);
            for (a, b) in hr.frames[0].pixels.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-6, "r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn upsample_keeps_constants_and_linear_ramps() {
        let clip = clip_of(vec![Array3::from_elem((3, 6, 6), 0.42)]);
        let hr = upsample(&clip, 4).unwrap();
        for &v in hr.frames[0].pixels.iter() {
            assert!((v - 0.42).abs() < 1e-12);
        }

        // Cubic interpolation reproduces linear signals exactly away from
        // the replicated borders.
        let (h, w) = (4, 16);
        let px = Array3::from_shape_fn((3, h, w), |(_, _, j)| j as f64 / (w - 1) as f64);
        let clip = clip_of(vec![px]);
        let r = 2;
        let hr = upsample(&clip, r).unwrap();
        for oj in (2 * r)..(w * r - 2 * r) {
            let src = (oj as f64 + 0.5) / r as f64 - 0.5;
            let expect = src / (w - 1) as f64;
            let got = hr.frames[0].pixels[[1, 4, oj]];
            assert!((got - expect).abs() < 1e-9, "col {oj}: {got} vs {expect}");
        }
    }

    #[test]
    fn upsample_then_downsample_recovers_smooth_signals() {
        // A low-frequency signal survives the round trip nearly unchanged;
        // this ties the two resamplers together directionally.
        let (h, w) = (8, 8);
        let px = Array3::from_shape_fn((3, h, w), |(_, i, j)| {
            0.5 + 0.3 * ((i as f64 / h as f64) * std::f64::consts::PI).sin()
                * ((j as f64 / w as f64) * std::f64::consts::PI).cos()
        });
        let clip = clip_of(vec![px.clone()]);
        let hr = upsample(&clip, 4).unwrap();
        let back = degrade(&hr, 4).unwrap();
        for (a, b) in back.frames[0].pixels.iter().zip(px.iter()) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }
}
