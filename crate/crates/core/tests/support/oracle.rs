//! Brute-force reference implementations used by the metric tests.
//!
//! Everything here is written for clarity over speed and shares no code with
//! the library.

#![allow(dead_code)]

/// Pairwise AUROC: correctly ordered (positive, negative) pairs, ties half.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// AP where each positive takes the precision of everything scored at least
/// as high as itself (so tied groups share the precision at their end).
pub fn ap_threshold(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut acc = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let hits = above.iter().filter(|&&j| labels[j]).count();
        acc += hits as f64 / above.len() as f64;
    }
    Some(acc / n_pos as f64)
}

/// Component label per pixel (8-neighbourhood) by union-find; `None` for
/// background.
pub fn label_components(mask: &[bool], h: usize, w: usize) -> Vec<Option<usize>> {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for (dy, dx) in [(0isize, 1isize), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= h as isize || nx < 0 || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask[q] {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, q));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut roots: Vec<usize> = Vec::new();
    (0..h * w)
        .map(|p| {
            if !mask[p] {
                return None;
            }
            let r = find(&mut parent, p);
            Some(match roots.iter().position(|&x| x == r) {
                Some(i) => i,
                None => {
                    roots.push(r);
                    roots.len() - 1
                }
            })
        })
        .collect()
}

/// One map/mask pair at a single resolution.
pub struct Sample<'a> {
    pub scores: &'a [f32],
    pub mask: &'a [f32],
    pub h: usize,
    pub w: usize,
}

/// Threshold sweep of per-region overlap against FPR, integrated up to
/// `limit`. Thresholds sit strictly inside the score range at equal spacing;
/// a pixel counts as flagged at `score >= t`.
pub fn pro_sweep(samples: &[Sample], limit: f64, steps: usize) -> f64 {
    let all: Vec<f64> = samples.iter().flat_map(|s| s.scores.iter().map(|&v| v as f64)).collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let labelled: Vec<Vec<Option<usize>>> = samples
        .iter()
        .map(|s| label_components(&s.mask.iter().map(|&m| m > 0.0).collect::<Vec<_>>(), s.h, s.w))
        .collect();
    let mut curve = vec![(0.0f64, 0.0f64)];
    for k in 1..=steps {
        let t = lo + k as f64 * (hi - lo) / (steps + 1) as f64;
        let (mut fp, mut neg) = (0usize, 0usize);
        let mut overlaps = Vec::new();
        for (s, labels) in samples.iter().zip(&labelled) {
            let regions = labels.iter().flatten().max().map_or(0, |m| m + 1);
            let mut hit = vec![0usize; regions];
            let mut size = vec![0usize; regions];
            for (p, l) in labels.iter().enumerate() {
                let flagged = s.scores[p] as f64 >= t;
                match l {
                    Some(r) => {
                        size[*r] += 1;
                        hit[*r] += flagged as usize;
                    }
                    None => {
                        neg += 1;
                        fp += flagged as usize;
                    }
                }
            }
            overlaps.extend(hit.iter().zip(&size).map(|(&a, &b)| a as f64 / b as f64));
        }
        let pro = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
        curve.push((fp as f64 / neg as f64, pro));
    }
    curve.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Integrate the piecewise-linear curve over [0, limit], holding the last
    // value flat past the final point.
    let value_at = |x: f64| -> f64 {
        let last = curve[curve.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        let i = curve.iter().rposition(|p| p.0 <= x).unwrap();
        let (a, b) = (curve[i], curve[i + 1]);
        a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
    };
    let mut xs: Vec<f64> = curve.iter().map(|p| p.0).filter(|&x| x < limit).collect();
    xs.push(limit);
    let mut area = 0.0;
    for i in 0..xs.len() - 1 {
        let (x0, x1) = (xs[i], xs[i + 1]);
        if x1 == x0 {
            // Vertical jump: the curve leaves x0 from its highest value.
            continue;
        }
        let left = curve.iter().filter(|p| p.0 == x0).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let right = if curve.iter().any(|p| p.0 == x1) {
            curve.iter().filter(|p| p.0 == x1).map(|p| p.1).fold(f64::INFINITY, f64::min)
        } else {
            value_at(x1)
        };
        area += (x1 - x0) * (left + right) / 2.0;
    }
    area / limit
}

/// Smallest eigenvalue of a symmetric matrix given row-major.
pub fn min_eigenvalue(n: usize, rows: &[f64]) -> f64 {
    nalgebra::DMatrix::from_row_slice(n, n, rows).symmetric_eigenvalues().min()
}
