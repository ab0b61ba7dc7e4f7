//! Procedural test scenes: a static textured background with a few rigid
//! objects drifting at constant sub-pixel velocities.
//!
//! Everything is a pure function of the seed and parameters, so repeated
//! calls are bit-identical. Object tracks are exposed separately so tests
//! can check motion (centroid drift, temporal-difference sparsity) against
//! ground truth.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{Clip, Frame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub num_objects: usize,
    /// Upper bound on per-axis speed in pixels per frame.
    pub max_speed: f64,
    /// Spatial period of the background texture, in pixels.
    pub texture_scale: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_frames: 5,
            height: 96,
            width: 96,
            num_objects: 4,
            max_speed: 1.5,
            texture_scale: 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectShape {
    /// Axis-aligned rectangle with the given half-extents.
    Rect { half_h: f64, half_w: f64 },
    Disk { radius: f64 },
}

/// Ground truth for one moving object.
#[derive(Debug, Clone, Copy)]
pub struct ObjectTrack {
    /// Center (row, col) at frame 0, in pixel coordinates.
    pub center0: (f64, f64),
    /// Displacement (rows, cols) per frame.
    pub velocity: (f64, f64),
    pub shape: ObjectShape,
    pub color: [f64; 3],
}

impl ObjectTrack {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        (
            self.center0.0 + frame as f64 * self.velocity.0,
            self.center0.1 + frame as f64 * self.velocity.1,
        )
    }
}

/// Smooth periodic background in [0.1, 0.9]: a few fixed-frequency waves
/// with seeded phases, plus a seeded per-channel tint.
fn background(rng: &mut ChaCha12Rng, h: usize, w: usize, scale: f64) -> Array3<f64> {
    let tau = std::f64::consts::TAU;
    let phases: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen::<f64>() * tau,
                rng.gen::<f64>() * tau,
                0.6 + 0.8 * rng.gen::<f64>(),
            )
        })
        .collect();
    let tint: Vec<f64> = (0..3).map(|_| 0.4 + 0.2 * rng.gen::<f64>()).collect();
    Array3::from_shape_fn((3, h, w), |(c, i, j)| {
        let (y, x) = (i as f64, j as f64);
        let mut v = tint[c];
        for (k, &(pi, pj, fm)) in phases.iter().enumerate() {
            let f = tau * fm * (k + 1) as f64 / scale;
            v += 0.08 * (f * y + pi).sin() * (f * 0.7 * x + pj + c as f64).cos();
        }
        v.clamp(0.1, 0.9)
    })
}

/// Fraction of the unit pixel centered at (i, j) covered by the object.
/// Rectangles are exact; disks use a fixed 4x4 subpixel grid.
fn coverage(shape: ObjectShape, center: (f64, f64), i: usize, j: usize) -> f64 {
    let (py0, py1) = (i as f64 - 0.5, i as f64 + 0.5);
    let (px0, px1) = (j as f64 - 0.5, j as f64 + 0.5);
    match shape {
        ObjectShape::Rect { half_h, half_w } => {
            let oy = (py1.min(center.0 + half_h) - py0.max(center.0 - half_h)).max(0.0);
            let ox = (px1.min(center.1 + half_w) - px0.max(center.1 - half_w)).max(0.0);
            oy * ox
        }
        ObjectShape::Disk { radius } => {
            let mut hit = 0usize;
            for si in 0..4 {
                for sj in 0..4 {
                    let y = py0 + (si as f64 + 0.5) / 4.0;
                    let x = px0 + (sj as f64 + 0.5) / 4.0;
                    let (dy, dx) = (y - center.0, x - center.1);
                    if dy * dy + dx * dx <= radius * radius {
                        hit += 1;
                    }
                }
            }
            hit as f64 / 16.0
        }
    }
}

fn shape_reach(shape: ObjectShape) -> (f64, f64) {
    match shape {
        ObjectShape::Rect { half_h, half_w } => (half_h, half_w),
        ObjectShape::Disk { radius } => (radius, radius),
    }
}

fn render_frame(bg: &Array3<f64>, objects: &[ObjectTrack], frame: usize) -> Frame {
    let (h, w) = (bg.shape()[1], bg.shape()[2]);
    let mut px = bg.clone();
    for obj in objects {
        let center = obj.center_at(frame);
        let (rh, rw) = shape_reach(obj.shape);
        let i0 = (center.0 - rh - 1.0).floor().max(0.0) as usize;
        let i1 = ((center.0 + rh + 1.0).ceil() as usize).min(h.saturating_sub(1));
        let j0 = (center.1 - rw - 1.0).floor().max(0.0) as usize;
        let j1 = ((center.1 + rw + 1.0).ceil() as usize).min(w.saturating_sub(1));
        for i in i0..=i1.min(h - 1) {
            for j in j0..=j1.min(w - 1) {
                let a = coverage(obj.shape, center, i, j);
                if a == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    px[[c, i, j]] = (1.0 - a) * px[[c, i, j]] + a * obj.color[c];
                }
            }
        }
    }
    Frame::from_clamped(px)
}

/// Generate a scene and return the object ground truth alongside it.
pub fn synth_scene_with_objects(seed: u64, p: &SynthParams) -> Result<(Clip, Vec<ObjectTrack>)> {
    if p.num_frames == 0 || p.height < 8 || p.width < 8 {
        return Err(Error::config(
            "synth",
            format!(
                "need at least one frame and 8x8 pixels, got {} frames {}x{}",
                p.num_frames, p.height, p.width
            ),
        ));
    }
    if p.max_speed < 0.0 || p.texture_scale <= 0.0 {
        return Err(Error::config(
            "synth",
            "max_speed must be >= 0 and texture_scale > 0",
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bg = background(&mut rng, p.height, p.width, p.texture_scale);

    // Keep objects inside the frame for the whole clip so motion oracles
    // are not confounded by border clipping.
    let travel = p.max_speed * (p.num_frames - 1) as f64;
    let mut objects = Vec::with_capacity(p.num_objects);
    for k in 0..p.num_objects {
        let shape = if k % 2 == 0 {
            ObjectShape::Rect {
                half_h: 1.5 + 2.0 * rng.gen::<f64>(),
                half_w: 1.5 + 2.0 * rng.gen::<f64>(),
            }
        } else {
            ObjectShape::Disk {
                radius: 1.5 + 2.0 * rng.gen::<f64>(),
            }
        };
        let (rh, rw) = shape_reach(shape);
        let margin_y = rh + travel + 1.0;
        let margin_x = rw + travel + 1.0;
        let span_y = (p.height as f64 - 2.0 * margin_y).max(1.0);
        let span_x = (p.width as f64 - 2.0 * margin_x).max(1.0);
        let center0 = (
            margin_y + rng.gen::<f64>() * span_y,
            margin_x + rng.gen::<f64>() * span_x,
        );
        let velocity = (
            (2.0 * rng.gen::<f64>() - 1.0) * p.max_speed,
            (2.0 * rng.gen::<f64>() - 1.0) * p.max_speed,
        );
        let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        objects.push(ObjectTrack {
            center0,
            velocity,
            shape,
            color,
        });
    }

    let frames = (0..p.num_frames)
        .map(|t| render_frame(&bg, &objects, t))
        .collect();
    let clip = Clip::new(frames, format!("synth-{seed}"), 0)?;
    Ok((clip, objects))
}

/// Generate a deterministic synthetic scene.
pub fn synth_scene(seed: u64, p: &SynthParams) -> Result<Clip> {
    synth_scene_with_objects(seed, p).map(|(clip, _)| clip)
}
