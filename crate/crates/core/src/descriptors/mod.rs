//! Self-generated feature maps: HOG (the default recovery input) and the
//! Sobel / Roberts / Canny edge maps used for comparison.

mod edges;
mod hog;

pub use edges::{canny, roberts, sobel, EdgeMap, EdgeOperator, ROBERTS_X, ROBERTS_Y, SOBEL_X, SOBEL_Y};
pub use hog::{hog_compute, hog_render, render_hog_image, HogConfig, HogGrid};

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Single-channel copy of an image: identity for gray, fixed luma weights
/// for RGB.
pub fn to_gray(image: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = image.shape();
    match c {
        1 => Ok(image.clone()),
        3 => {
            let hw = h * w;
            let mut out = Vec::with_capacity(n * hw);
            for i in 0..n {
                let base = i * 3 * hw;
                let d = image.data();
                for p in 0..hw {
                    out.push(LUMA[0] * d[base + p] + LUMA[1] * d[base + hw + p] + LUMA[2] * d[base + 2 * hw + p]);
                }
            }
            Tensor::new([n, 1, h, w], out)
        }
        _ => Err(Error::invalid(format!("expected 1 or 3 channels, got {c}"))),
    }
}

pub(crate) fn require_gray(image: &Tensor, op: &str) -> Result<(usize, usize)> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 1 {
        return Err(Error::invalid(format!(
            "{op} needs a single grayscale image, got shape {:?}",
            image.shape()
        )));
    }
    Ok((h, w))
}
