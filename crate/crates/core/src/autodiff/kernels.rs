//! Raw forward/backward kernels shared by the graph ops and by the
//! non-differentiable inference paths.
//!
//! Convolutions lower to im2col plus a single-precision GEMM per image.
//! Batches fan out over [`crate::par`]; kernel gradients are reduced in
//! batch order.

use crate::par;

/// Geometry of a 2-D correlation window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Output extent of a strided correlation; `None` when the window does not fit.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

pub fn conv_transpose_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((len - 1) * stride + k).checked_sub(2 * pad).filter(|&v| v > 0)
}

pub fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = vec![0.0f32; g.col_rows() * oh * ow];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..ow {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[oy * ow + ox] = src[x as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add columns back onto the image grid (adjoint of [`im2col`]).
pub fn col2im(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..ow {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[x as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C = op(A) * op(B)` (or `C += ...` when `accumulate`), row-major.
/// `op(A)` is `m x k`, `op(B)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe in-bounds
    // row-major layouts of the stated dimensions.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched correlation. `x` is `(n, ic, h, w)`, `k` is `(oc, ic, kh, kw)`.
pub fn conv2d_forward(x: &[f32], n: usize, g: &ConvGeom, k: &[f32], oc: usize) -> Vec<f32> {
    let in_len = g.channels * g.height * g.width;
    let out_len = oc * g.col_cols();
    let mut out = vec![0.0f32; n * out_len];
    par::for_each_chunk_mut(&mut out, out_len, |i, o| {
        let cols = im2col(&x[i * in_len..(i + 1) * in_len], g);
        gemm(oc, g.col_rows(), g.col_cols(), k, false, &cols, false, o, false);
    });
    out
}

/// Gradients of [`conv2d_forward`] w.r.t. input and kernel.
pub fn conv2d_backward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    k: &[f32],
    oc: usize,
    dout: &[f32],
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let in_len = g.channels * g.height * g.width;
    let out_len = oc * g.col_cols();
    let krows = g.col_rows();
    let per_image: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)> = par::map_indexed(n, |i| {
        let d = &dout[i * out_len..(i + 1) * out_len];
        let dk = want_dk.then(|| {
            let cols = im2col(&x[i * in_len..(i + 1) * in_len], g);
            let mut dk = vec![0.0f32; oc * krows];
            gemm(oc, g.col_cols(), krows, d, false, &cols, true, &mut dk, false);
            dk
        });
        let dx = want_dx.then(|| {
            let mut dcols = vec![0.0f32; krows * g.col_cols()];
            gemm(krows, oc, g.col_cols(), k, true, d, false, &mut dcols, false);
            let mut dx = vec![0.0f32; in_len];
            col2im(&dcols, g, &mut dx);
            dx
        });
        (dx, dk)
    });
    let dx = want_dx.then(|| {
        let mut dx = Vec::with_capacity(n * in_len);
        for (d, _) in &per_image {
            dx.extend_from_slice(d.as_ref().expect("dx"));
        }
        dx
    });
    let dk = want_dk.then(|| reduce_ordered(per_image.iter().map(|(_, d)| d.as_deref().expect("dk")), oc * krows));
    (dx, dk)
}

/// Batched transposed correlation. `x` is `(n, ic, h, w)`, `k` is
/// `(ic, oc, kh, kw)`; `g` describes the *output* image (channels `oc`)
/// swept back onto the input grid.
pub fn conv_transpose_forward(x: &[f32], n: usize, ic: usize, g: &ConvGeom, k: &[f32]) -> Vec<f32> {
    let in_hw = g.col_cols();
    let out_len = g.channels * g.height * g.width;
    let mut out = vec![0.0f32; n * out_len];
    par::for_each_chunk_mut(&mut out, out_len, |i, o| {
        let mut cols = vec![0.0f32; g.col_rows() * in_hw];
        gemm(g.col_rows(), ic, in_hw, k, true, &x[i * ic * in_hw..(i + 1) * ic * in_hw], false, &mut cols, false);
        col2im(&cols, g, o);
    });
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward(
    x: &[f32],
    n: usize,
    ic: usize,
    g: &ConvGeom,
    k: &[f32],
    dout: &[f32],
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let in_hw = g.col_cols();
    let out_len = g.channels * g.height * g.width;
    let krows = g.col_rows();
    let per_image: Vec<(Option<Vec<f32>>, Option<Vec<f32>>)> = par::map_indexed(n, |i| {
        let dcols = im2col(&dout[i * out_len..(i + 1) * out_len], g);
        let dx = want_dx.then(|| {
            let mut dx = vec![0.0f32; ic * in_hw];
            gemm(ic, krows, in_hw, k, false, &dcols, false, &mut dx, false);
            dx
        });
        let dk = want_dk.then(|| {
            let mut dk = vec![0.0f32; ic * krows];
            gemm(ic, in_hw, krows, &x[i * ic * in_hw..(i + 1) * ic * in_hw], false, &dcols, true, &mut dk, false);
            dk
        });
        (dx, dk)
    });
    let dx = want_dx.then(|| {
        let mut dx = Vec::with_capacity(n * ic * in_hw);
        for (d, _) in &per_image {
            dx.extend_from_slice(d.as_ref().expect("dx"));
        }
        dx
    });
    let dk = want_dk.then(|| reduce_ordered(per_image.iter().map(|(_, d)| d.as_deref().expect("dk")), ic * krows));
    (dx, dk)
}

fn reduce_ordered<'a>(parts: impl Iterator<Item = &'a [f32]>, len: usize) -> Vec<f32> {
    let mut acc = vec![0.0f32; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Source taps for one axis of an align-corners-false bilinear resize:
/// `(lower index, upper index, upper weight)` per output index.
pub fn resize_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f32 / dst_len as f32;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f32);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}

/// Bilinear resize of every `h x w` plane in `src` (align corners false,
/// clamped source coordinates).
pub fn resize_planes(src: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut out = vec![0.0f32; planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = s[y0 * w + x0] * (1.0 - fx) + s[y0 * w + x1] * fx;
                let bot = s[y1 * w + x0] * (1.0 - fx) + s[y1 * w + x1] * fx;
                o[y * ow + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn resize_planes_backward(dout: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut dsrc = vec![0.0f32; planes * h * w];
    for p in 0..planes {
        let d = &dout[p * oh * ow..(p + 1) * oh * ow];
        let s = &mut dsrc[p * h * w..(p + 1) * h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = d[y * ow + x];
                s[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                s[y0 * w + x1] += g * (1.0 - fy) * fx;
                s[y1 * w + x0] += g * fy * (1.0 - fx);
                s[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    dsrc
}

/// Softmax along the channel axis at every location of each image.
pub fn softmax_channels(x: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for i in 0..n {
        let base = i * c * hw;
        for p in 0..hw {
            let m = (0..c).map(|ch| x[base + ch * hw + p]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for ch in 0..c {
                let e = (x[base + ch * hw + p] - m).exp();
                out[base + ch * hw + p] = e;
                sum += e;
            }
            for ch in 0..c {
                out[base + ch * hw + p] /= sum;
            }
        }
    }
    out
}

/// Softmax over spatial locations, independently per channel plane.
pub fn softmax_spatial(x: &[f32], planes: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for p in 0..planes {
        let s = &x[p * hw..(p + 1) * hw];
        let o = &mut out[p * hw..(p + 1) * hw];
        let m = s.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (ov, &v) in o.iter_mut().zip(s) {
            *ov = (v - m).exp();
            sum += *ov;
        }
        o.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Per-image Gram matrix over locations: `x` viewed as `(c, hw)`, result
/// `(hw, hw)` equals `x^T x`.
pub fn gram(x: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * hw * hw];
    par::for_each_chunk_mut(&mut out, hw * hw, |i, o| {
        gemm(hw, c, hw, &x[i * c * hw..(i + 1) * c * hw], true, &x[i * c * hw..(i + 1) * c * hw], false, o, false);
    });
    out
}

/// Per-location cosine distance `1 - cos(a, b)` over channels. Locations
/// where either vector has zero norm score 1; their count is returned.
pub fn cosine_distance(a: &[f32], b: &[f32], n: usize, c: usize, hw: usize) -> (Vec<f32>, usize) {
    let mut out = vec![0.0f32; n * hw];
    let mut degenerate = 0;
    for i in 0..n {
        let base = i * c * hw;
        for p in 0..hw {
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for ch in 0..c {
                let (va, vb) = (a[base + ch * hw + p] as f64, b[base + ch * hw + p] as f64);
                dot += va * vb;
                na += va * va;
                nb += vb * vb;
            }
            out[i * hw + p] = if na > 0.0 && nb > 0.0 {
                (1.0 - dot / (na * nb).sqrt()) as f32
            } else {
                degenerate += 1;
                1.0
            };
        }
    }
    (out, degenerate)
}

/// Sum with an f64 accumulator, rounded once. Used for scalar reductions,
/// whose rounding would otherwise swamp finite-difference probes.
pub fn wide_sum(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { channels: 2, height: 5, width: 6, kh: 3, kw: 3, stride: 2, pad: 1 };
        let mut rng = SplitMix64::new(1);
        let x: Vec<f32> = (0..2 * 5 * 6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y: Vec<f32> = (0..g.col_rows() * g.col_cols()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let cols = im2col(&x, &g);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-5);
    }

    #[test]
    fn resize_taps_half_pixel() {
        let t = resize_taps(2, 4);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[3], (1, 1, 0.0));
    }

    #[test]
    fn cosine_zero_vector_is_degenerate() {
        let a = [0.0, 0.0];
        let b = [1.0, 1.0];
        let (d, deg) = cosine_distance(&a, &b, 1, 2, 1);
        assert_eq!(d, vec![1.0]);
        assert_eq!(deg, 1);
    }
}
