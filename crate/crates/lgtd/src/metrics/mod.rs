//! Image-quality metrics and scene evaluation.
//!
//! All pixel data enters in [0, 1]; metrics convert to the 8-bit scale
//! (×255) internally so scores match the conventions used across the
//! super-resolution literature: PSNR from the mean squared error against a
//! 255 peak, and SSIM with an 11×11 Gaussian window (σ = 1.5) and
//! stabilisers C1 = (0.01·255)², C2 = (0.03·255)².
//!
//! Scores are computed on the BT.601 limited-range luma channel by default
//! (the `Y` in YCbCr: black maps to 16/255, white to 235/255), with an RGB
//! option that pools the mean squared error (PSNR) or averages per-channel
//! scores (SSIM). A configurable border is cropped from every frame first,
//! since the pixels nearest the edge carry padding artefacts rather than
//! reconstruction quality.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};

/// Which channel(s) a metric is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// BT.601 limited-range luma. The conventional choice.
    #[default]
    Y,
    /// All three channels: pooled MSE for PSNR, averaged SSIM.
    Rgb,
}

/// How frames are scored: channel selection plus the border crop (in
/// pixels, applied to all four sides before any metric is computed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub channel: Channel,
    pub border_crop: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            channel: Channel::Y,
            border_crop: 8,
        }
    }
}

/// BT.601 limited-range luma of an RGB frame ([3, H, W] in [0, 1]):
/// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255`, again in [0, 1]
/// (black → 16/255, white → 235/255).
pub fn rgb_to_y(px: &Array3<f64>) -> Array2<f64> {
    let (h, w) = (px.shape()[1], px.shape()[2]);
    Array2::from_shape_fn((h, w), |(i, j)| {
        (65.481 * px[[0, i, j]] + 128.553 * px[[1, i, j]] + 24.966 * px[[2, i, j]] + 16.0) / 255.0
    })
}

fn crop<'a>(plane: &'a Array2<f64>, c: usize, op: &'static str) -> Result<ArrayView2<'a, f64>> {
    let (h, w) = plane.dim();
    if h <= 2 * c || w <= 2 * c {
        return Err(Error::shape(
            op,
            format!("{h}x{w} plane vanishes under a border crop of {c}"),
        ));
    }
    Ok(plane.slice(ndarray::s![c..h - c, c..w - c]))
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>, op: &'static str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            op,
            format!("mismatched planes {:?} vs {:?}", a.dim(), b.dim()),
        ));
    }
    Ok(())
}

/// PSNR in dB between two single-channel planes in [0, 1], on the 8-bit
/// scale: `10·log10(255² / MSE)`. Identical planes give `+∞`.
pub fn psnr_plane(a: &Array2<f64>, b: &Array2<f64>, border_crop: usize) -> Result<f64> {
    check_same_shape(a, b, "psnr")?;
    let (av, bv) = (crop(a, border_crop, "psnr")?, crop(b, border_crop, "psnr")?);
    let mut se = 0.0;
    for (&x, &y) in av.iter().zip(bv.iter()) {
        let d = (x - y) * 255.0;
        se += d * d;
    }
    let mse = se / av.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Side length of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// The normalised 11×11 Gaussian window used by SSIM.
fn gaussian_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(i, j)| {
        let di = i as f64 - half;
        let dj = j as f64 - half;
        (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let sum: f64 = w.iter().sum();
    w.mapv_inplace(|v| v / sum);
    w
}

/// Structural similarity between two single-channel planes in [0, 1].
///
/// Luminance, contrast, and structure terms are formed per window position
/// (valid positions only — the window never leaves the cropped plane) and
/// their product is averaged. Statistics use a weighted two-pass scheme so
/// variances are exact sums of squares; comparing a plane against itself
/// therefore yields exactly 1.0.
pub fn ssim_plane(a: &Array2<f64>, b: &Array2<f64>, border_crop: usize) -> Result<f64> {
    check_same_shape(a, b, "ssim")?;
    let av = crop(a, border_crop, "ssim")?;
    let bv = crop(b, border_crop, "ssim")?;
    let (h, w) = av.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("cropped plane {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }

    const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
    const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
    const C3: f64 = C2 / 2.0;
    let win = gaussian_window();

    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=(h - SSIM_WINDOW) {
        for j0 in 0..=(w - SSIM_WINDOW) {
            // Pass 1: weighted means (on the 8-bit scale).
            let mut ma = 0.0;
            let mut mb = 0.0;
            for di in 0..SSIM_WINDOW {
                for dj in 0..SSIM_WINDOW {
                    let g = win[[di, dj]];
                    ma += g * av[[i0 + di, j0 + dj]] * 255.0;
                    mb += g * bv[[i0 + di, j0 + dj]] * 255.0;
                }
            }
            // Pass 2: weighted central moments. Variances are weighted sums
            // of squares, hence never negative.
            let mut va = 0.0;
            let mut vb = 0.0;
            let mut cov = 0.0;
            for di in 0..SSIM_WINDOW {
                for dj in 0..SSIM_WINDOW {
                    let g = win[[di, dj]];
                    let da = av[[i0 + di, j0 + dj]] * 255.0 - ma;
                    let db = bv[[i0 + di, j0 + dj]] * 255.0 - mb;
                    // Products are grouped (x·y) first so that swapping the
                    // two planes swaps commutative multiplications only:
                    // the score is bitwise symmetric, and for identical
                    // planes cov is the same expression as va.
                    va += g * (da * da);
                    vb += g * (db * db);
                    cov += g * (da * db);
                }
            }
            // sqrt(va·vb) rather than sqrt(va)·sqrt(vb): for va == vb the
            // product is a perfect square, so the structure term of a plane
            // against itself is exactly 1.
            let sprod = (va * vb).sqrt();
            let l = (2.0 * (ma * mb) + C1) / (ma * ma + mb * mb + C1);
            let c = (2.0 * sprod + C2) / (va + vb + C2);
            let s = (cov + C3) / (sprod + C3);
            total += l * c * s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn pooled_rgb_psnr(a: &Frame, b: &Frame, border_crop: usize) -> Result<f64> {
    let mut se = 0.0;
    let mut n = 0usize;
    for ch in 0..3 {
        let pa = a.pixels.index_axis(ndarray::Axis(0), ch).to_owned();
        let pb = b.pixels.index_axis(ndarray::Axis(0), ch).to_owned();
        check_same_shape(&pa, &pb, "psnr")?;
        let (av, bv) = (crop(&pa, border_crop, "psnr")?, crop(&pb, border_crop, "psnr")?);
        for (&x, &y) in av.iter().zip(bv.iter()) {
            let d = (x - y) * 255.0;
            se += d * d;
        }
        n += av.len();
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// PSNR between two frames under a protocol (Y plane, or MSE pooled over
/// all three channels).
pub fn psnr(a: &Frame, b: &Frame, proto: &EvalProtocol) -> Result<f64> {
    match proto.channel {
        Channel::Y => psnr_plane(&rgb_to_y(&a.pixels), &rgb_to_y(&b.pixels), proto.border_crop),
        Channel::Rgb => pooled_rgb_psnr(a, b, proto.border_crop),
    }
}

/// SSIM between two frames under a protocol (Y plane, or the mean of the
/// three per-channel scores).
pub fn ssim(a: &Frame, b: &Frame, proto: &EvalProtocol) -> Result<f64> {
    match proto.channel {
        Channel::Y => ssim_plane(&rgb_to_y(&a.pixels), &rgb_to_y(&b.pixels), proto.border_crop),
        Channel::Rgb => {
            let mut acc = 0.0;
            for ch in 0..3 {
                let pa = a.pixels.index_axis(ndarray::Axis(0), ch).to_owned();
                let pb = b.pixels.index_axis(ndarray::Axis(0), ch).to_owned();
                acc += ssim_plane(&pa, &pb, proto.border_crop)?;
            }
            Ok(acc / 3.0)
        }
    }
}

/// Stacks one pixel row from every frame into a [3, T, W] image: output row
/// `k` is row `row` of frame `k`. Static content yields vertical bands;
/// content translating one pixel per frame yields a 45° streak, so the
/// image makes temporal consistency visible at a glance.
pub fn temporal_profile(frames: &[Frame], row: usize) -> Result<Array3<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::shape("temporal_profile", "no frames"))?;
    let (h, w) = (first.h(), first.w());
    if row >= h {
        return Err(Error::shape(
            "temporal_profile",
            format!("row {row} out of range for height {h}"),
        ));
    }
    let mut out = Array3::zeros((3, frames.len(), w));
    for (k, f) in frames.iter().enumerate() {
        if f.h() != h || f.w() != w {
            return Err(Error::shape(
                "temporal_profile",
                format!("frame {k} is {}x{}, expected {h}x{w}", f.h(), f.w()),
            ));
        }
        for c in 0..3 {
            for j in 0..w {
                out[[c, k, j]] = f.pixels[[c, row, j]];
            }
        }
    }
    Ok(out)
}

/// Scores for one output frame of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub frame_idx: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame and mean scores for a whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub scene: String,
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Runs a super-resolver over a scene with a sliding window of `t`
/// low-resolution frames per output frame and scores each output against
/// its ground-truth frame.
///
/// The window for target index `k` covers `k-n ..= k+n` (with `n = (t-1)/2`)
/// and is clamped at the scene boundaries, so the first and last frames see
/// their terminal neighbours replicated. Scenes shorter than `t` frames are
/// rejected. `sr` receives the window (always exactly `t` frames) and
/// returns the super-resolved centre frame.
pub fn evaluate_scene_with(
    scene: &str,
    lr: &[Frame],
    hr: &[Frame],
    t: usize,
    proto: &EvalProtocol,
    mut sr: impl FnMut(&[Frame]) -> Result<Frame>,
) -> Result<SceneReport> {
    if t == 0 || t % 2 == 0 {
        return Err(Error::config("t", "window length must be odd and positive"));
    }
    if lr.len() != hr.len() {
        return Err(Error::Scene {
            scene: scene.to_string(),
            detail: format!("{} LR frames but {} HR frames", lr.len(), hr.len()),
        });
    }
    if lr.len() < t {
        return Err(Error::Scene {
            scene: scene.to_string(),
            detail: format!("{} frames, need at least the window length {t}", lr.len()),
        });
    }
    let n = (t - 1) / 2;
    let len = lr.len();
    let mut frames = Vec::with_capacity(len);
    let mut sum_psnr = 0.0;
    let mut sum_ssim = 0.0;
    for k in 0..len {
        let window: Vec<Frame> = (0..t)
            .map(|i| {
                let idx = (k + i).saturating_sub(n).min(len - 1);
                lr[idx].clone()
            })
            .collect();
        let out = sr(&window)?;
        let p = psnr(&out, &hr[k], proto)?;
        let s = ssim(&out, &hr[k], proto)?;
        sum_psnr += p;
        sum_ssim += s;
        frames.push(FrameScore {
            frame_idx: k,
            psnr: p,
            ssim: s,
        });
    }
    Ok(SceneReport {
        scene: scene.to_string(),
        frames,
        mean_psnr: sum_psnr / len as f64,
        mean_ssim: sum_ssim / len as f64,
    })
}

/// Formats a score for CSV output; infinity becomes the sentinel `inf`.
pub fn csv_score(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Writes per-frame scene scores as CSV: `scene,frameIdx,psnrY,ssimY`.
pub fn write_scene_csv(path: &Path, reports: &[SceneReport]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "scene,frameIdx,psnrY,ssimY")?;
    for r in reports {
        for fs in &r.frames {
            writeln!(
                f,
                "{},{},{},{}",
                r.scene,
                fs.frame_idx,
                csv_score(fs.psnr),
                csv_score(fs.ssim)
            )?;
        }
    }
    f.flush()?;
    Ok(())
}
