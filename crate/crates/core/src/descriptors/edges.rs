use std::collections::VecDeque;

use super::require_gray;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const ROBERTS_X: [[f32; 2]; 2] = [[-1.0, 0.0], [0.0, 1.0]];
pub const ROBERTS_Y: [[f32; 2]; 2] = [[0.0, -1.0], [1.0, 0.0]];

const CANNY_SIGMA: f32 = 1.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeOperator {
    Sobel,
    Roberts,
    Canny,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    /// `(1, 1, H, W)`, values in [0, 1]; binary for Canny.
    pub values: Tensor,
    pub operator: EdgeOperator,
}

/// Correlate with a small kernel anchored at its top-left tap offset by
/// `anchor`, replicating border pixels. Accumulates in f64 so that integer
/// kernels cancel exactly on flat regions.
fn correlate<const K: usize>(px: &[f32], h: usize, w: usize, k: &[[f32; K]; K], anchor: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, row) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - anchor as isize).clamp(0, h as isize - 1) as usize;
                for (j, &kv) in row.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let sx = (x as isize + j as isize - anchor as isize).clamp(0, w as isize - 1) as usize;
                    acc += kv as f64 * px[sy * w + sx] as f64;
                }
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

fn magnitude(gx: &[f32], gy: &[f32], scale: f32) -> Vec<f32> {
    gx.iter()
        .zip(gy)
        .map(|(a, b)| ((a * a + b * b).sqrt() / scale).min(1.0))
        .collect()
}

/// 3x3 Sobel gradient magnitude, divided by the bound `sqrt(32)` for
/// inputs in [0, 1].
pub fn sobel(image: &Tensor) -> Result<EdgeMap> {
    let (h, w) = require_gray(image, "sobel")?;
    let gx = correlate(image.data(), h, w, &SOBEL_X, 1);
    let gy = correlate(image.data(), h, w, &SOBEL_Y, 1);
    Ok(EdgeMap {
        values: Tensor::new([1, 1, h, w], magnitude(&gx, &gy, 32f32.sqrt()))?,
        operator: EdgeOperator::Sobel,
    })
}

/// Roberts cross magnitude. The 2x2 templates are anchored at their
/// top-left tap, so pixel `(y, x)` sees `(y..=y+1, x..=x+1)`. Divided by
/// the bound `sqrt(2)`.
pub fn roberts(image: &Tensor) -> Result<EdgeMap> {
    let (h, w) = require_gray(image, "roberts")?;
    let gx = correlate(image.data(), h, w, &ROBERTS_X, 0);
    let gy = correlate(image.data(), h, w, &ROBERTS_Y, 0);
    Ok(EdgeMap {
        values: Tensor::new([1, 1, h, w], magnitude(&gx, &gy, 2f32.sqrt()))?,
        operator: EdgeOperator::Roberts,
    })
}

fn gaussian_5x5(sigma: f32) -> [[f32; 5]; 5] {
    let mut k = [[0.0f32; 5]; 5];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f32 - 2.0, j as f32 - 2.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    k.iter_mut().flatten().for_each(|v| *v /= sum);
    k
}

/// Canny edges. `th1`/`th2` are on the 0-255 intensity scale and compared
/// against the Sobel L2 magnitude of the blurred [0, 1] image after
/// rescaling by 1/255.
///
/// Non-maximum suppression quantizes gradient angles to 0/45/90/135 degrees
/// and keeps a pixel when it is strictly above its "behind" neighbour and at
/// least its "ahead" neighbour, so symmetric ridges thin to one pixel.
pub fn canny(image: &Tensor, th1: f32, th2: f32) -> Result<EdgeMap> {
    if th1 > th2 {
        return Err(Error::invalid(format!("canny needs th1 <= th2, got {th1} > {th2}")));
    }
    let (h, w) = require_gray(image, "canny")?;
    let (low, high) = (th1 / 255.0, th2 / 255.0);
    let blurred = correlate(image.data(), h, w, &gaussian_5x5(CANNY_SIGMA), 2);
    let gx = correlate(&blurred, h, w, &SOBEL_X, 1);
    let gy = correlate(&blurred, h, w, &SOBEL_Y, 1);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();

    let at = |y: isize, x: isize| mag[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut thin = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[y * w + x].atan2(gx[y * w + x]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // (dy, dx) pointing along the quantized gradient direction.
            let (dy, dx): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let behind = at(yi - dy, xi - dx);
            let ahead = at(yi + dy, xi + dx);
            if m > behind && m >= ahead {
                thin[y * w + x] = m;
            }
        }
    }

    let mut out = vec![0.0f32; h * w];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high && m > 0.0 {
            out[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= low && thin[j] > 0.0 {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeMap {
        values: Tensor::new([1, 1, h, w], out)?,
        operator: EdgeOperator::Canny,
    })
}
