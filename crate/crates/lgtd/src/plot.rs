//! Static PNG line charts for training logs and per-frame score curves.
//!
//! Deliberately minimal: white canvas, grey grid, one coloured polyline per
//! series, automatic axis ranges. No text — the CSVs next to each plot
//! carry the exact numbers; the plot is for shape at a glance.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// One named curve. Non-finite points are skipped when drawing (an
/// infinite score simply leaves a gap), but at least one finite point must
/// survive across all series.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

impl<'a> Series<'a> {
    /// A curve over 0,1,2,… for plain value sequences.
    pub fn from_values(label: &'a str, values: &[f64]) -> Self {
        Series {
            label,
            points: values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as f64, v))
                .collect(),
        }
    }
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],  // blue
    [214, 39, 40],   // red
    [44, 160, 44],   // green
    [255, 127, 14],  // orange
    [148, 103, 189], // purple
    [23, 190, 207],  // cyan
];
const MARGIN: u32 = 24;

fn draw_line(
    img: &mut ImageBuffer<Rgb<u8>, Vec<u8>>,
    (x0, y0): (f64, f64),
    (x1, y1): (f64, f64),
    color: Rgb<u8>,
) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round() as i64;
        let y = (y0 + t * (y1 - y0)).round() as i64;
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Renders the series into a `width`×`height` PNG at `path`.
pub fn line_chart(path: &Path, series: &[Series], width: u32, height: u32) -> Result<()> {
    if width < 2 * MARGIN + 16 || height < 2 * MARGIN + 16 {
        return Err(Error::config("plot", "canvas too small to hold the axes"));
    }
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::config("plot", "no finite points to draw"));
    }
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &finite {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    // Degenerate ranges still deserve a visible flat line mid-plot.
    if xmax == xmin {
        xmax += 1.0;
        xmin -= 1.0;
    }
    if ymax == ymin {
        ymax += 1.0;
        ymin -= 1.0;
    }

    let mut img = ImageBuffer::from_pixel(width, height, Rgb([255u8, 255, 255]));
    let inner_w = (width - 2 * MARGIN) as f64;
    let inner_h = (height - 2 * MARGIN) as f64;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            MARGIN as f64 + (x - xmin) / (xmax - xmin) * inner_w,
            // Pixel rows grow downward; data grows upward.
            MARGIN as f64 + (1.0 - (y - ymin) / (ymax - ymin)) * inner_h,
        )
    };

    // Grid: quarters, light grey.
    let grid = Rgb([225u8, 225, 225]);
    for k in 0..=4 {
        let fx = MARGIN as f64 + inner_w * k as f64 / 4.0;
        let fy = MARGIN as f64 + inner_h * k as f64 / 4.0;
        draw_line(&mut img, (fx, MARGIN as f64), (fx, MARGIN as f64 + inner_h), grid);
        draw_line(&mut img, (MARGIN as f64, fy), (MARGIN as f64 + inner_w, fy), grid);
    }
    // Axes: left and bottom, dark grey.
    let axis = Rgb([60u8, 60, 60]);
    draw_line(
        &mut img,
        (MARGIN as f64, MARGIN as f64),
        (MARGIN as f64, MARGIN as f64 + inner_h),
        axis,
    );
    draw_line(
        &mut img,
        (MARGIN as f64, MARGIN as f64 + inner_h),
        (MARGIN as f64 + inner_w, MARGIN as f64 + inner_h),
        axis,
    );

    for (si, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                prev = None; // gap at non-finite points
                continue;
            }
            let p = to_px(x, y);
            if let Some(q) = prev {
                draw_line(&mut img, q, p, color);
            } else {
                draw_line(&mut img, p, p, color);
            }
            prev = Some(p);
        }
    }

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    img.save(path)?;
    Ok(())
}
