use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Stabilizing constant of the gradient magnitude similarity, for images
/// in [0, 1].
pub const GMS_C: f32 = 0.0026;
pub const DEFAULT_SCALES: usize = 4;

const PREWITT_X: [f32; 9] = [-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0];
const PREWITT_Y: [f32; 9] = [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];

/// Mean squared error over all elements.
pub fn l2_loss(g: &mut Graph, y: NodeId, x: NodeId) -> Result<NodeId> {
    let d = g.sub(y, x)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

fn prewitt(g: &mut Graph) -> (NodeId, NodeId) {
    let k = |taps: [f32; 9]| Tensor::new([1, 1, 3, 3], taps.iter().map(|v| v / 3.0).collect()).expect("3x3");
    (g.constant(k(PREWITT_X)), g.constant(k(PREWITT_Y)))
}

/// Prewitt gradient magnitude with replicated borders.
fn gradient_magnitude(g: &mut Graph, x: NodeId, kx: NodeId, ky: NodeId) -> Result<NodeId> {
    let padded = g.replicate_pad(x, 1);
    let gx = g.conv2d(padded, kx, 1, 0)?;
    let gy = g.conv2d(padded, ky, 1, 0)?;
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let s = g.add(gx2, gy2)?;
    Ok(g.sqrt(s))
}

/// `mean(1 - GMS)` at one scale, with
/// `GMS = (2 g_x g_y + c) / (g_x^2 + g_y^2 + c)`.
fn gms_distance(g: &mut Graph, y: NodeId, x: NodeId, kx: NodeId, ky: NodeId) -> Result<NodeId> {
    let gy = gradient_magnitude(g, y, kx, ky)?;
    let gx = gradient_magnitude(g, x, kx, ky)?;
    let prod = g.mul(gx, gy)?;
    let num = g.scale(prod, 2.0);
    let num = g.add_scalar(num, GMS_C);
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let den = g.add(gx2, gy2)?;
    let den = g.add_scalar(den, GMS_C);
    let gms = g.div(num, den)?;
    let m = g.mean(gms);
    let neg = g.scale(m, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Multi-scale gradient magnitude similarity loss over single-channel
/// images: the original plus `scales - 1` successive 2x2 mean-pooled copies,
/// averaged.
pub fn msgms_loss(g: &mut Graph, y: NodeId, x: NodeId, scales: usize) -> Result<NodeId> {
    let [_, c, h, w] = g.value(x).shape();
    if g.value(y).shape() != g.value(x).shape() {
        return Err(Error::Shape {
            op: "msgms_loss",
            lhs: g.value(y).shape().to_vec(),
            rhs: g.value(x).shape().to_vec(),
        });
    }
    if c != 1 {
        return Err(Error::invalid(format!("msgms_loss expects 1 channel, got {c}")));
    }
    if scales == 0 {
        return Err(Error::invalid("msgms_loss needs at least one scale"));
    }
    let m = 1 << (scales - 1);
    if h % m != 0 || w % m != 0 {
        return Err(Error::invalid(format!(
            "msgms_loss with {scales} scales needs sides divisible by {m}, got {h}x{w}"
        )));
    }
    let (kx, ky) = prewitt(g);
    let (mut ys, mut xs) = (y, x);
    let mut total = gms_distance(g, ys, xs, kx, ky)?;
    for _ in 1..scales {
        ys = g.avg_pool2(ys)?;
        xs = g.avg_pool2(xs)?;
        let d = gms_distance(g, ys, xs, kx, ky)?;
        total = g.add(total, d)?;
    }
    Ok(g.scale(total, 1.0 / scales as f32))
}

#[derive(Clone, Copy, Debug)]
pub struct RecoverLoss {
    pub total: NodeId,
    pub l2: NodeId,
    pub msgms: NodeId,
}

/// `L2 + lambda_m * L_M`.
pub fn recover_loss(g: &mut Graph, y: NodeId, x: NodeId, lambda_m: f32, scales: usize) -> Result<RecoverLoss> {
    let l2 = l2_loss(g, y, x)?;
    let msgms = msgms_loss(g, y, x, scales)?;
    let weighted = g.scale(msgms, lambda_m);
    let total = g.add(l2, weighted)?;
    Ok(RecoverLoss { total, l2, msgms })
}

/// `(L2, L_M, L2 + lambda_m * L_M)` for two tensors.
pub fn recover_loss_values(y: &Tensor, x: &Tensor, lambda_m: f32, scales: usize) -> Result<(f32, f32, f32)> {
    let mut g = Graph::new();
    let (yn, xn) = (g.constant(y.clone()), g.constant(x.clone()));
    let l = recover_loss(&mut g, yn, xn, lambda_m, scales)?;
    Ok((g.value(l.l2).item(), g.value(l.msgms).item(), g.value(l.total).item()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn rand_image(rng: &mut SplitMix64, s: usize) -> Tensor {
        Tensor::from_fn([1, 1, s, s], |_, _, _, _| rng.next_f32())
    }

    #[test]
    fn identical_images_give_zero() {
        let mut rng = SplitMix64::new(1);
        let x = rand_image(&mut rng, 16);
        let (l2, lm, total) = recover_loss_values(&x, &x, 1.0, 4).unwrap();
        assert_eq!((l2, lm, total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn offset_by_one_gives_unit_l2() {
        let mut rng = SplitMix64::new(2);
        let x = rand_image(&mut rng, 8);
        let y = x.map(|v| v + 1.0);
        let (l2, _, _) = recover_loss_values(&y, &x, 0.0, 1).unwrap();
        assert!((l2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_pair_has_zero_msgms() {
        let x = Tensor::full([1, 1, 8, 8], 0.2);
        let y = Tensor::full([1, 1, 8, 8], 0.9);
        let (_, lm, _) = recover_loss_values(&y, &x, 1.0, 4).unwrap();
        assert_eq!(lm, 0.0);
    }

    fn l2_oracle(y: &Tensor, x: &Tensor) -> f64 {
        let s: f64 = y.data().iter().zip(x.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        s / x.len() as f64
    }

    /// Single-scale GMS distance evaluated directly from the formula.
    fn gms_oracle(y: &Tensor, x: &Tensor) -> f64 {
        let (h, w) = (x.height(), x.width());
        let mag = |t: &Tensor, r: usize, c: usize| {
            let at = |dy: isize, dx: isize| {
                let yy = (r as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (c as isize + dx).clamp(0, w as isize - 1) as usize;
                t.at(0, 0, yy, xx) as f64
            };
            let mut gx = 0.0;
            let mut gy = 0.0;
            for d in -1..=1 {
                gx += at(d, 1) - at(d, -1);
                gy += at(1, d) - at(-1, d);
            }
            ((gx / 3.0).powi(2) + (gy / 3.0).powi(2)).sqrt()
        };
        let c = GMS_C as f64;
        let mut acc = 0.0;
        for r in 0..h {
            for col in 0..w {
                let (a, b) = (mag(x, r, col), mag(y, r, col));
                acc += 1.0 - (2.0 * a * b + c) / (a * a + b * b + c);
            }
        }
        acc / (h * w) as f64
    }

    #[test]
    fn matches_oracles_on_4x4() {
        let x = Tensor::from_rows(&[
            &[0.0, 0.1, 0.2, 0.3],
            &[0.1, 0.5, 0.5, 0.2],
            &[0.9, 0.5, 0.1, 0.0],
            &[1.0, 0.8, 0.3, 0.1],
        ]);
        let y = Tensor::from_rows(&[
            &[0.2, 0.2, 0.2, 0.2],
            &[0.1, 0.9, 0.4, 0.0],
            &[0.0, 0.3, 0.6, 0.7],
            &[0.5, 0.5, 0.5, 0.5],
        ]);
        let (l2, lm, _) = recover_loss_values(&y, &x, 1.0, 1).unwrap();
        assert!((l2 as f64 - l2_oracle(&y, &x)).abs() < 1e-7);
        assert!((lm as f64 - gms_oracle(&y, &x)).abs() < 1e-6, "{lm} vs {}", gms_oracle(&y, &x));
    }

    #[test]
    fn symmetric_and_additive() {
        let mut rng = SplitMix64::new(4);
        let (x, y) = (rand_image(&mut rng, 16), rand_image(&mut rng, 16));
        let (l2, a, total) = recover_loss_values(&y, &x, 1.0, 4).unwrap();
        let (_, b, _) = recover_loss_values(&x, &y, 1.0, 4).unwrap();
        assert!((a - b).abs() < 1e-7);
        assert!((total - (l2 + a)).abs() < 1e-7);
        let (l2_only, _, t0) = recover_loss_values(&y, &x, 0.0, 4).unwrap();
        assert_eq!(t0, l2_only);
    }

    #[test]
    fn indivisible_scales_rejected() {
        let x = Tensor::zeros([1, 1, 12, 12]);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(x);
        assert!(msgms_loss(&mut g, a, b, 4).is_err());
    }
}
