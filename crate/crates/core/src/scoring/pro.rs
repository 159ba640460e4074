use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_THRESHOLDS: usize = 100;

/// 8-connected components of `mask > 0`, as lists of flat pixel indices in
/// scan order of their first pixel.
pub fn components(mask: &[f32], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if mask[start] <= 0.0 || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let p = comp[head];
            head += 1;
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask[q] > 0.0 && !seen[q] {
                        seen[q] = true;
                        comp.push(q);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// One point of the overlap curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub pro: f64,
}

/// Thresholds strictly between the global min and max score:
/// `min + (k + 1) (max - min) / (count + 1)`.
pub fn threshold_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| min + (k as f64 + 1.0) * (max - min) / (count as f64 + 1.0))
        .collect()
}

/// Mean per-region overlap and false-positive rate at each grid threshold.
/// A pixel is flagged when its score is `>= threshold`.
pub fn pro_curve(maps: &[Tensor], masks: &[Tensor], thresholds: usize) -> Result<Vec<ProPoint>> {
    if maps.len() != masks.len() || maps.is_empty() {
        return Err(Error::invalid(format!(
            "{} maps for {} masks",
            maps.len(),
            masks.len()
        )));
    }
    let mut regions: Vec<Vec<f32>> = Vec::new();
    let mut normal: Vec<f32> = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (m, k) in maps.iter().zip(masks) {
        if m.shape() != k.shape() {
            return Err(Error::Shape {
                op: "pro",
                lhs: m.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
        let (h, w) = (m.height(), m.width());
        let (s, mk) = (m.data(), k.data());
        for comp in components(mk, h, w) {
            regions.push(comp.iter().map(|&p| s[p]).collect());
        }
        normal.extend(s.iter().zip(mk).filter(|(_, &b)| b <= 0.0).map(|(&v, _)| v));
        for &v in s {
            lo = lo.min(v as f64);
            hi = hi.max(v as f64);
        }
    }
    if regions.is_empty() {
        return Err(Error::invalid("pro needs at least one anomalous pixel"));
    }
    if normal.is_empty() {
        return Err(Error::invalid("pro needs at least one normal pixel"));
    }
    Ok(threshold_grid(lo, hi, thresholds)
        .into_iter()
        .map(|t| {
            let overlap: f64 = regions
                .iter()
                .map(|r| r.iter().filter(|&&v| v as f64 >= t).count() as f64 / r.len() as f64)
                .sum();
            let fp = normal.iter().filter(|&&v| v as f64 >= t).count();
            ProPoint {
                threshold: t,
                fpr: fp as f64 / normal.len() as f64,
                pro: overlap / regions.len() as f64,
            }
        })
        .collect())
}

/// Normalized area under the overlap-vs-FPR curve up to `fpr_limit`.
///
/// The curve is anchored at (0, 0), sorted by (fpr, pro), and held flat
/// beyond its last point when that lies below the limit.
pub fn integrate_pro(points: &[ProPoint], fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::invalid(format!("fpr_limit must be in (0, 1], got {fpr_limit}")));
    }
    let mut pts: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
        .chain(points.iter().map(|p| (p.fpr, p.pro)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    for pair in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= fpr_limit {
            break;
        }
        if x1 <= fpr_limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
            area += (fpr_limit - x0) * (y0 + y) / 2.0;
        }
    }
    let (xl, yl) = *pts.last().expect("anchor point");
    if xl < fpr_limit {
        area += (fpr_limit - xl) * yl;
    }
    Ok(area / fpr_limit)
}

/// Per-region overlap score of maps against binary masks.
pub fn pro(maps: &[Tensor], masks: &[Tensor], fpr_limit: f64, thresholds: usize) -> Result<f64> {
    if thresholds == 0 {
        return Err(Error::invalid("pro needs at least one threshold"));
    }
    integrate_pro(&pro_curve(maps, masks, thresholds)?, fpr_limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> Tensor {
        Tensor::from_fn([1, 1, 8, 8], |_, _, y, x| {
            if (1..3).contains(&y) && (1..3).contains(&x) || (5..7).contains(&y) && (5..8).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn components_use_eight_connectivity() {
        let m = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]);
        assert_eq!(components(m.data(), 3, 3).len(), 1);
        assert_eq!(components(two_blobs().data(), 8, 8).len(), 2);
    }

    #[test]
    fn mask_as_map_scores_one() {
        let m = two_blobs();
        assert_eq!(pro(&[m.clone()], &[m], 0.3, 100).unwrap(), 1.0);
    }

    #[test]
    fn half_detected_regions_score_half() {
        let mask = two_blobs();
        let map = Tensor::from_fn([1, 1, 8, 8], |_, _, y, _| if y < 4 { mask.at(0, 0, y, 1) } else { 0.0 });
        let map = Tensor::new(
            [1, 1, 8, 8],
            map.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect(),
        )
        .unwrap();
        let v = pro(&[map], &[mask], 0.3, 100).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn constant_map_integrates_the_diagonal() {
        // Every threshold flags everything: one point (1, 1) after the
        // (0, 0) anchor, so the area up to 0.3 is 0.3^2 / 2.
        let mask = two_blobs();
        let map = Tensor::full([1, 1, 8, 8], 0.4);
        let v = pro(&[map], &[mask], 0.3, 100).unwrap();
        assert!((v - 0.15).abs() < 1e-12, "{v}");
    }

    #[test]
    fn empty_mask_is_an_error() {
        let z = Tensor::zeros([1, 1, 4, 4]);
        assert!(pro(&[z.clone()], &[z], 0.3, 100).is_err());
    }
}
