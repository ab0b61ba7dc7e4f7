//! Patch sampling and dihedral (flip/rotate) augmentation.
//!
//! Both operate on a whole paired sample at once: every LR frame gets the
//! same crop offset / transform, and the HR frame gets the matching one at
//! `r` times the scale.

use ndarray::Array3;
use rand::Rng;

use super::{Clip, Frame, PairedSample};
use crate::error::{Error, Result};

/// Crop a random `size`x`size` LR patch (and the aligned `r*size` HR patch).
///
/// The offset is drawn uniformly over all valid positions and is identical
/// across the clip's frames. Determinism comes from the caller's seeded RNG.
pub fn sample_patch<R: Rng>(
    sample: &PairedSample,
    size: usize,
    rng: &mut R,
) -> Result<PairedSample> {
    let (h, w) = (sample.lr.h(), sample.lr.w());
    if size == 0 || size > h || size > w {
        return Err(Error::config(
            "patch_size",
            format!("patch {size} does not fit in {h}x{w}"),
        ));
    }
    let y0 = rng.gen_range(0..=h - size);
    let x0 = rng.gen_range(0..=w - size);

    let crop = |px: &Array3<f64>, y: usize, x: usize, s: usize| -> Array3<f64> {
        px.slice(ndarray::s![.., y..y + s, x..x + s]).to_owned()
    };

    let lr_frames = sample
        .lr
        .frames
        .iter()
        .map(|f| Frame::new(crop(&f.pixels, y0, x0, size)))
        .collect::<Result<Vec<_>>>()?;
    let lr = Clip::new(lr_frames, sample.lr.scene_id.clone(), sample.lr.start_index)?;
    let r = sample.r;
    let hr = Frame::new(crop(&sample.hr.pixels, r * y0, r * x0, r * size))?;
    PairedSample::new(lr, hr, r)
}

/// Which dihedral transforms to apply, in the fixed order
/// hflip -> vflip -> rot90 (k quarter turns clockwise).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentFlags {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90k: u8,
}

impl AugmentFlags {
    /// Draw a uniformly random element of the dihedral group.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        AugmentFlags {
            hflip: rng.gen::<bool>(),
            vflip: rng.gen::<bool>(),
            rot90k: rng.gen_range(0..4),
        }
    }
}

fn hflip_px(px: &Array3<f64>) -> Array3<f64> {
    let mut out = px.clone();
    out.invert_axis(ndarray::Axis(2));
    out
}

fn vflip_px(px: &Array3<f64>) -> Array3<f64> {
    let mut out = px.clone();
    out.invert_axis(ndarray::Axis(1));
    out
}

/// One quarter turn clockwise: input pixel (i, j) lands at (j, H-1-i).
fn rot90_px(px: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = (px.shape()[0], px.shape()[1], px.shape()[2]);
    let mut out = Array3::zeros((c, w, h));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[ch, j, h - 1 - i]] = px[[ch, i, j]];
            }
        }
    }
    out
}

fn transform_px(px: &Array3<f64>, flags: AugmentFlags) -> Array3<f64> {
    let mut out = px.clone();
    if flags.hflip {
        out = hflip_px(&out);
    }
    if flags.vflip {
        out = vflip_px(&out);
    }
    for _ in 0..(flags.rot90k % 4) {
        out = rot90_px(&out);
    }
    out
}

/// Apply the same dihedral transform to every LR frame and the HR frame.
pub fn augment(sample: &PairedSample, flags: AugmentFlags) -> PairedSample {
    let lr_frames = sample
        .lr
        .frames
        .iter()
        .map(|f| Frame {
            pixels: transform_px(&f.pixels, flags),
        })
        .collect();
    let lr = Clip {
        frames: lr_frames,
        scene_id: sample.lr.scene_id.clone(),
        start_index: sample.lr.start_index,
    };
    let hr = Frame {
        pixels: transform_px(&sample.hr.pixels, flags),
    };
    PairedSample { lr, hr, r: sample.r }
}
