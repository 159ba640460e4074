use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Random rectangles removed from the input of the inpainting variants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub count: usize,
    /// Rectangle side bounds as fractions of the image side.
    pub min_side: f32,
    pub max_side: f32,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            count: 2,
            min_side: 0.1,
            max_side: 0.4,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_side > 0.0 && self.min_side <= self.max_side && self.max_side <= 1.0) {
            return Err(Error::invalid(format!(
                "mask sides must satisfy 0 < min_side <= max_side <= 1, got {} and {}",
                self.min_side, self.max_side
            )));
        }
        Ok(())
    }

    /// `(1, 1, h, w)` mask: 0 inside the removed rectangles, 1 elsewhere.
    pub fn generate(&self, rng: &mut SplitMix64, h: usize, w: usize) -> Tensor {
        let mut m = Tensor::full([1, 1, h, w], 1.0);
        for _ in 0..self.count {
            let rh = ((rng.uniform(self.min_side, self.max_side) * h as f32).round() as usize).clamp(1, h);
            let rw = ((rng.uniform(self.min_side, self.max_side) * w as f32).round() as usize).clamp(1, w);
            let y0 = rng.below(h - rh + 1);
            let x0 = rng.below(w - rw + 1);
            let data = m.data_mut();
            for y in y0..y0 + rh {
                data[y * w + x0..y * w + x0 + rw].fill(0.0);
            }
        }
        m
    }
}

fn check_mask(op: &'static str, x: &Tensor, m: &Tensor) -> Result<()> {
    if x.shape() != m.shape() {
        return Err(Error::Shape {
            op,
            lhs: x.shape().to_vec(),
            rhs: m.shape().to_vec(),
        });
    }
    if let Some(v) = m.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{op}: mask must be binary, found {v}")));
    }
    Ok(())
}

/// `X * M`.
pub fn imi_input(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    check_mask("imi_input", x, m)?;
    let data = x.data().iter().zip(m.data()).map(|(a, b)| a * b).collect();
    Tensor::new(x.shape(), data)
}

/// `X * M + H * (1 - M)`.
pub fn iihp_input(x: &Tensor, hog: &Tensor, m: &Tensor) -> Result<Tensor> {
    check_mask("iihp_input", x, m)?;
    if hog.shape() != x.shape() {
        return Err(Error::Shape {
            op: "iihp_input",
            lhs: x.shape().to_vec(),
            rhs: hog.shape().to_vec(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(hog.data())
        .zip(m.data())
        .map(|((a, h), k)| a * k + h * (1.0 - k))
        .collect();
    Tensor::new(x.shape(), data)
}
