//! Seeded parameter initialization.

use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// He-uniform: entries drawn from `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform(rng: &mut SplitMix64, shape: [usize; 4], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Conv kernel `(out, in, kh, kw)`.
pub fn conv_kernel(rng: &mut SplitMix64, out_ch: usize, in_ch: usize, k: usize) -> Tensor {
    he_uniform(rng, [out_ch, in_ch, k, k], in_ch * k * k)
}

/// Transposed-conv kernel `(in, out, kh, kw)`. Fan-in counts the taps that
/// land on one output pixel: `in * k^2 / stride^2`.
pub fn conv_transpose_kernel(rng: &mut SplitMix64, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Tensor {
    let fan_in = (in_ch * k * k / (stride * stride)).max(1);
    he_uniform(rng, [in_ch, out_ch, k, k], fan_in)
}

pub fn zero_bias(channels: usize) -> Tensor {
    Tensor::zeros([1, channels, 1, 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_respected() {
        let mut rng = SplitMix64::new(5);
        let t = conv_kernel(&mut rng, 8, 4, 3);
        let b = (6.0f32 / 36.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= b));
        assert!(t.data().iter().any(|v| v.abs() > 0.5 * b));
    }
}
