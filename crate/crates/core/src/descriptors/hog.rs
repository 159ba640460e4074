use serde::{Deserialize, Serialize};

use super::require_gray;
use crate::tensor::Tensor;
use crate::{Error, Result};

const NORM_EPS: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Orientation bins over [0, 180) degrees.
    pub bins: usize,
    /// Square cell side in pixels.
    pub cell: usize,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig { bins: 9, cell: 8 }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || self.cell == 0 {
            return Err(Error::invalid(format!(
                "HOG needs bins >= 2 and cell >= 1, got bins={} cell={}",
                self.bins, self.cell
            )));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f32 {
        180.0 / self.bins as f32
    }
}

/// Per-cell orientation histograms, each L2-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct HogGrid {
    pub cells_y: usize,
    pub cells_x: usize,
    pub bins: usize,
    /// Row-major `cells_y x cells_x x bins`.
    pub histograms: Vec<f32>,
}

impl HogGrid {
    pub fn cell(&self, cy: usize, cx: usize) -> &[f32] {
        let o = (cy * self.cells_x + cx) * self.bins;
        &self.histograms[o..o + self.bins]
    }
}

/// Histogram of oriented gradients.
///
/// Gradients are `[-1, 0, 1]` central differences with replicated borders.
/// Orientation is unsigned; bin `b` is centred on `b * 180 / bins` degrees and
/// each pixel splits its magnitude linearly between the two nearest centres
/// (wrapping at 180). Cells not fully inside the image are dropped.
pub fn hog_compute(image: &Tensor, cfg: &HogConfig) -> Result<HogGrid> {
    cfg.validate()?;
    let (h, w) = require_gray(image, "hog")?;
    if h < cfg.cell || w < cfg.cell {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than one {0}x{0} HOG cell",
            cfg.cell
        )));
    }
    let px = image.data();
    let (cells_y, cells_x) = (h / cfg.cell, w / cfg.cell);
    let mut hist = vec![0.0f32; cells_y * cells_x * cfg.bins];
    let width = cfg.bin_width();
    for y in 0..cells_y * cfg.cell {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..cells_x * cfg.cell {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = px[y * w + xp] - px[y * w + xm];
            let gy = px[yp * w + x] - px[ym * w + x];
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            let pos = angle / width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % cfg.bins;
            let b1 = (b0 + 1) % cfg.bins;
            let base = ((y / cfg.cell) * cells_x + x / cfg.cell) * cfg.bins;
            hist[base + b0] += (1.0 - frac) * mag;
            hist[base + b1] += frac * mag;
        }
    }
    for cell in hist.chunks_mut(cfg.bins) {
        let norm = (cell.iter().map(|v| v * v).sum::<f32>() + NORM_EPS * NORM_EPS).sqrt();
        cell.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(HogGrid {
        cells_y,
        cells_x,
        bins: cfg.bins,
        histograms: hist,
    })
}

/// Draw each cell's histogram as strokes through the cell centre.
///
/// Bin `b` becomes a straight integer line of `cell` steps along its major
/// axis, perpendicular to the bin's gradient direction, adding the bin value
/// to every pixel it covers. The result is scaled so its maximum is 1.
pub fn hog_render(grid: &HogGrid, cell: usize, out_h: usize, out_w: usize) -> Tensor {
    let mut img = vec![0.0f32; out_h * out_w];
    let width = 180.0 / grid.bins as f32;
    let half = (cell / 2) as isize;
    let dirs: Vec<(f32, f32)> = (0..grid.bins)
        .map(|b| {
            let theta = (b as f32 * width).to_radians();
            // Edge direction: gradient rotated by 90 degrees, in (x, y).
            let (dx, dy) = (-theta.sin(), theta.cos());
            let major = dx.abs().max(dy.abs());
            (dx / major, dy / major)
        })
        .collect();
    for cy in 0..grid.cells_y {
        for cx in 0..grid.cells_x {
            let centre_y = (cy * cell) as isize + half;
            let centre_x = (cx * cell) as isize + half;
            for (b, &v) in grid.cell(cy, cx).iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (dx, dy) = dirs[b];
                for k in 0..cell as isize {
                    let t = (k - half) as f32;
                    let x = centre_x + (t * dx).round() as isize;
                    let y = centre_y + (t * dy).round() as isize;
                    if x >= 0 && y >= 0 && (x as usize) < out_w && (y as usize) < out_h {
                        img[y as usize * out_w + x as usize] += v;
                    }
                }
            }
        }
    }
    let max = img.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        img.iter_mut().for_each(|v| *v /= max);
    }
    Tensor::new([1, 1, out_h, out_w], img).expect("render shape")
}

/// HOG rendering at the image's own resolution.
pub fn render_hog_image(image: &Tensor, cfg: &HogConfig) -> Result<Tensor> {
    let grid = hog_compute(image, cfg)?;
    Ok(hog_render(&grid, cfg.cell, image.height(), image.width()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Tensor {
        Tensor::from_fn([1, 1, h, w], |_, _, y, x| f(y, x))
    }

    #[test]
    fn constant_image_has_zero_histograms() {
        let g = hog_compute(&image(32, 32, |_, _| 0.4), &HogConfig::default()).unwrap();
        assert!(g.histograms.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_votes_only_bin_zero() {
        let img = image(16, 16, |_, x| if x < 8 { 0.0 } else { 1.0 });
        let cfg = HogConfig { bins: 9, cell: 4 };
        let g = hog_compute(&img, &cfg).unwrap();
        // Cells straddling the edge at column 8 are cx = 1 (cols 4..8) and cx = 2.
        for cy in 0..g.cells_y {
            for cx in [1, 2] {
                let c = g.cell(cy, cx);
                assert!(c[0] > 0.99, "{c:?}");
                assert!(c[1..].iter().all(|&v| v == 0.0), "{c:?}");
            }
            assert!(g.cell(cy, 0).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn diagonal_ramp_splits_between_bins_two_and_three() {
        // 45 degrees at width 20: pos 2.25, so 0.75 of the vote to bin 2 and
        // 0.25 to bin 3. After L2 normalization: (3, 1) / sqrt(10).
        let img = image(32, 32, |y, x| (x + y) as f32 / 64.0);
        let g = hog_compute(&img, &HogConfig { bins: 9, cell: 8 }).unwrap();
        let c = g.cell(1, 1);
        let (e2, e3) = (3.0 / 10f32.sqrt(), 1.0 / 10f32.sqrt());
        assert!((c[2] - e2).abs() < 1e-5 && (c[3] - e3).abs() < 1e-5, "{c:?}");
        let rest: f32 = c.iter().enumerate().filter(|(i, _)| *i != 2 && *i != 3).map(|(_, v)| v).sum();
        assert_eq!(rest, 0.0);
    }

    #[test]
    fn norms_bounded_and_nonnegative() {
        let mut rng = SplitMix64::new(8);
        let img = Tensor::from_fn([1, 1, 24, 40], |_, _, _, _| rng.next_f32());
        let g = hog_compute(&img, &HogConfig { bins: 18, cell: 4 }).unwrap();
        for cy in 0..g.cells_y {
            for cx in 0..g.cells_x {
                let c = g.cell(cy, cx);
                let n: f32 = c.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!(n <= 1.0 + 1e-6);
                assert!(c.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn partial_cells_dropped() {
        let g = hog_compute(&image(20, 13, |y, x| (x * y) as f32 / 260.0), &HogConfig::default()).unwrap();
        assert_eq!((g.cells_y, g.cells_x), (2, 1));
    }

    #[test]
    fn too_small_image_errors() {
        assert!(hog_compute(&image(7, 30, |_, _| 0.0), &HogConfig::default()).is_err());
    }

    #[test]
    fn render_zero_grid_is_black() {
        let g = HogGrid {
            cells_y: 2,
            cells_x: 2,
            bins: 9,
            histograms: vec![0.0; 36],
        };
        let r = hog_render(&g, 8, 16, 16);
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn render_single_horizontal_gradient_bin_is_vertical_stroke() {
        let mut hist = vec![0.0; 9];
        hist[0] = 0.6;
        let g = HogGrid {
            cells_y: 1,
            cells_x: 1,
            bins: 9,
            histograms: hist,
        };
        let r = hog_render(&g, 8, 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let v = r.at(0, 0, y, x);
                assert_eq!(v, if x == 4 { 1.0 } else { 0.0 }, "({y},{x})");
            }
        }
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let img = image(32, 32, |y, x| ((x as f32 * 0.7).sin() + (y as f32 * 0.3).cos()) * 0.25 + 0.5);
        let a = render_hog_image(&img, &HogConfig::default()).unwrap();
        let b = render_hog_image(&img, &HogConfig::default()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.max_value(), 1.0);
    }
}
