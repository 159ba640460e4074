use serde::{Deserialize, Serialize};

use crate::autodiff::kernels;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// How per-level distances become one map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// One weight per pyramid level; empty means all ones.
    pub layer_weights: Vec<f32>,
    /// Gaussian smoothing sigma in pixels; 0 disables smoothing.
    pub sigma: f32,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            layer_weights: Vec::new(),
            sigma: 0.0,
        }
    }
}

impl MapConfig {
    pub fn weights(&self, levels: usize) -> Result<Vec<f32>> {
        let w = if self.layer_weights.is_empty() {
            vec![1.0; levels]
        } else {
            self.layer_weights.clone()
        };
        if w.len() != levels {
            return Err(Error::invalid(format!(
                "{} layer weights given for {levels} levels",
                w.len()
            )));
        }
        if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::invalid(format!("layer weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().sum::<f32>() <= 0.0 {
            return Err(Error::invalid("layer weights are all zero"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(w)
    }
}

/// Per-pixel anomaly scores at input resolution and their maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMap {
    /// `(1, 1, H, W)`, all entries >= 0.
    pub scores: Tensor,
    pub image_score: f32,
    pub layer_weights: Vec<f32>,
    pub sigma: f32,
}

impl AnomalyMap {
    pub fn from_scores(scores: Tensor, layer_weights: Vec<f32>, sigma: f32) -> AnomalyMap {
        let image_score = scores.data().iter().copied().fold(0.0f32, f32::max);
        AnomalyMap {
            scores,
            image_score,
            layer_weights,
            sigma,
        }
    }
}

/// Truncated (4 sigma) normalized Gaussian taps.
pub fn gaussian_taps(sigma: f32) -> Vec<f32> {
    let r = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable Gaussian blur of one plane with replicated borders.
pub fn gaussian_blur(plane: &[f32], h: usize, w: usize, sigma: f32) -> Vec<f32> {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Weighted sum of per-level `1 - cos` maps, each bilinearly resized to
/// `h x w`, optionally smoothed, clipped at 0. Pyramids are single-image.
pub fn anomaly_map(fx: &[Tensor], fy: &[Tensor], cfg: &MapConfig, h: usize, w: usize) -> Result<AnomalyMap> {
    if fx.len() != fy.len() || fx.is_empty() {
        return Err(Error::invalid(format!(
            "pyramids have {} and {} levels",
            fx.len(),
            fy.len()
        )));
    }
    let weights = cfg.weights(fx.len())?;
    let mut acc = vec![0.0f32; h * w];
    for ((a, b), &wt) in fx.iter().zip(fy).zip(&weights) {
        if a.shape() != b.shape() || a.batch() != 1 {
            return Err(Error::Shape {
                op: "anomaly_map",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let [_, c, lh, lw] = a.shape();
        let (dist, _) = kernels::cosine_distance(a.data(), b.data(), 1, c, lh * lw);
        let up = if (lh, lw) == (h, w) {
            dist
        } else {
            kernels::resize_planes(&dist, 1, lh, lw, h, w)
        };
        for (o, v) in acc.iter_mut().zip(up) {
            *o += wt * v;
        }
    }
    if cfg.sigma > 0.0 {
        acc = gaussian_blur(&acc, h, w, cfg.sigma);
    }
    for v in &mut acc {
        *v = v.max(0.0);
    }
    Ok(AnomalyMap::from_scores(Tensor::new([1, 1, h, w], acc)?, weights, cfg.sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn pyramid(rng: &mut SplitMix64) -> Vec<Tensor> {
        [[1, 4, 8, 8], [1, 6, 4, 4]]
            .iter()
            .map(|&s| Tensor::from_fn(s, |_, _, _, _| rng.uniform(-1.0, 1.0)))
            .collect()
    }

    #[test]
    fn identical_pyramids_give_zero_map() {
        let mut rng = SplitMix64::new(1);
        let p = pyramid(&mut rng);
        let m = anomaly_map(&p, &p, &MapConfig::default(), 16, 16).unwrap();
        assert!(m.scores.data().iter().all(|&v| v.abs() < 1e-6));
        assert!(m.image_score < 1e-6);
    }

    #[test]
    fn positive_scaling_per_location_is_invisible() {
        let mut rng = SplitMix64::new(2);
        let (fx, fy) = (pyramid(&mut rng), pyramid(&mut rng));
        let scaled: Vec<Tensor> = fy
            .iter()
            .map(|t| {
                let [_, _, h, w] = t.shape();
                let s: Vec<f32> = (0..h * w).map(|_| rng.uniform(0.1, 10.0)).collect();
                Tensor::from_fn(t.shape(), |_, ch, y, x| t.at(0, ch, y, x) * s[y * w + x])
            })
            .collect();
        let a = anomaly_map(&fx, &fy, &MapConfig::default(), 16, 16).unwrap();
        let b = anomaly_map(&fx, &scaled, &MapConfig::default(), 16, 16).unwrap();
        for (u, v) in a.scores.data().iter().zip(b.scores.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_location_footprint() {
        // Level 0 identical at 4x4; level 1 at 2x2 orthogonal at (0, 0) only.
        let l0 = Tensor::from_fn([1, 2, 4, 4], |_, c, _, _| c as f32 + 1.0);
        let a1 = Tensor::from_fn([1, 2, 2, 2], |_, c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let b1 = Tensor::from_fn([1, 2, 2, 2], |_, c, y, x| match (y, x, c) {
            (0, 0, 1) => 1.0,
            (0, 0, _) => 0.0,
            (_, _, 0) => 1.0,
            _ => 0.0,
        });
        let cfg = MapConfig {
            layer_weights: vec![1.0, 0.5],
            sigma: 0.0,
        };
        let m = anomaly_map(&[l0.clone(), a1], &[l0, b1], &cfg, 4, 4).unwrap();
        // Level-1 map [[1, 0], [0, 0]] upsampled x2: weights 1, 0.75, 0.25, 0.
        let col = [1.0, 0.75, 0.25, 0.0];
        for y in 0..4 {
            for x in 0..4 {
                let expect = 0.5 * col[y] * col[x];
                assert!((m.scores.at(0, 0, y, x) - expect).abs() < 1e-6, "({y},{x})");
            }
        }
        assert_eq!(m.image_score, 0.5);
    }

    #[test]
    fn zero_weights_rejected() {
        let mut rng = SplitMix64::new(3);
        let p = pyramid(&mut rng);
        let cfg = MapConfig {
            layer_weights: vec![0.0, 0.0],
            sigma: 0.0,
        };
        assert!(anomaly_map(&p, &p, &cfg, 8, 8).is_err());
    }

    #[test]
    fn image_score_is_max_after_smoothing() {
        let mut rng = SplitMix64::new(4);
        let (fx, fy) = (pyramid(&mut rng), pyramid(&mut rng));
        let cfg = MapConfig {
            layer_weights: Vec::new(),
            sigma: 1.5,
        };
        let m = anomaly_map(&fx, &fy, &cfg, 16, 16).unwrap();
        assert_eq!(m.image_score, m.scores.max_value());
        assert!(m.scores.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let t = gaussian_taps(2.0);
        assert_eq!(t.len(), 17);
        assert!((t.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
