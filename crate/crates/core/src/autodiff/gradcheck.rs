//! Central finite-difference verification of analytic gradients.
//!
//! Each registered case builds a small randomized fragment (a single op, a
//! loss, or a whole model at 16x16) and compares every checked coordinate's
//! backward gradient `g` with `(L(p + e) - L(p - e)) / 2e` using the error
//! `|g - fd| / max(1, |g|, |fd|)`.
//!
//! A coordinate whose +-e probes put a rectifier input on the other side of
//! its kink, and whose one-sided slopes disagree, has no meaningful finite
//! difference; such coordinates are counted as skipped and replaced by the
//! next sampled one.

use super::{Graph, NodeId, Param, SoftmaxAxis};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::Result;

pub const FD_STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: u64 = 20;
/// One-sided slopes closer than this mean a crossed kink is immaterial.
const KINK_SLOPE_TOLERANCE: f64 = 2.5e-4;

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub params: Vec<ParamError>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    /// Every checked coordinate is within tolerance. A parameter whose
    /// coordinates were all skipped counts as unchecked, not failed; suites
    /// require coverage across seeds instead.
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err < TOLERANCE)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compare backward gradients of `forward` against central differences.
///
/// `forward` receives the parameters bound (in order) on a fresh tape and
/// returns a scalar loss node. With `max_coords`, at most that many
/// coordinates per parameter are sampled (seeded by `seed`).
pub fn check<F>(params: &[Param], forward: F, max_coords: Option<usize>, seed: u64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.value.clone())).collect();
    let loss = forward(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f32>> = ids.iter().map(|&id| g.grad(id).expect("param grad").to_vec()).collect();

    let base_pattern = g.activation_pattern();
    let base_loss = g.value(loss).item() as f64;

    let eval = |values: &[Tensor]| -> Result<(f64, bool)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.constant(v.clone())).collect();
        let loss = forward(&mut g, &ids)?;
        Ok((g.value(loss).item() as f64, g.activation_pattern() == base_pattern))
    };

    let mut rng = SplitMix64::derive(seed, 0x6772_6164);
    let mut values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let mut report = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let n = p.value.len();
        let mut order: Vec<usize> = (0..n).collect();
        if max_coords.is_some_and(|k| k < n) {
            rng.shuffle(&mut order);
        }
        let want = max_coords.unwrap_or(n).min(n);
        let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
        for &c in &order {
            if checked == want {
                break;
            }
            let orig = values[pi].data()[c];
            let (hi, lo) = (orig + FD_STEP, orig - FD_STEP);
            values[pi].data_mut()[c] = hi;
            let (l_hi, same_hi) = eval(&values)?;
            values[pi].data_mut()[c] = lo;
            let (l_lo, same_lo) = eval(&values)?;
            values[pi].data_mut()[c] = orig;
            if !(same_hi && same_lo) {
                let fwd = (l_hi - base_loss) / (hi - orig) as f64;
                let bwd = (base_loss - l_lo) / (orig - lo) as f64;
                if relative_error(fwd, bwd) > KINK_SLOPE_TOLERANCE {
                    skipped += 1;
                    continue;
                }
            }
            let numeric = (l_hi - l_lo) / (hi as f64 - lo as f64);
            worst = worst.max(relative_error(analytic[pi][c] as f64, numeric));
            checked += 1;
        }
        report.push(ParamError {
            name: p.name.clone(),
            max_rel_err: worst,
            coords: checked,
            skipped,
        });
    }
    Ok(GradReport { params: report })
}

/// A named, seedable gradient-check fragment.
#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradReport>,
}

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub name: &'static str,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub coords: usize,
    pub skipped: usize,
    /// Parameters never checked in any seed.
    pub unchecked: Vec<String>,
    pub passed: bool,
}

pub fn run_case(case: &Case, seeds: u64) -> Result<SuiteRow> {
    let mut worst = 0.0f64;
    let mut passed = true;
    let (mut coords, mut skipped) = (0, 0);
    let mut covered: Vec<(String, bool)> = Vec::new();
    for s in 0..seeds {
        let r = (case.run)(s)?;
        worst = worst.max(r.max_rel_err());
        passed &= r.passed();
        for p in &r.params {
            coords += p.coords;
            skipped += p.skipped;
            match covered.iter_mut().find(|(n, _)| *n == p.name) {
                Some(entry) => entry.1 |= p.coords > 0,
                None => covered.push((p.name.clone(), p.coords > 0)),
            }
        }
    }
    let unchecked: Vec<String> = covered.into_iter().filter(|(_, c)| !c).map(|(n, _)| n).collect();
    Ok(SuiteRow {
        name: case.name,
        seeds,
        max_rel_err: worst,
        coords,
        skipped,
        passed: passed && unchecked.is_empty(),
        unchecked,
    })
}

pub(crate) fn rand_tensor(rng: &mut SplitMix64, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).expect("shape")
}

/// Values with magnitude in [0.1, 1] and random sign, away from kinks at 0.
fn rand_away_from_zero(rng: &mut SplitMix64, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.uniform(0.1, 1.0);
            if rng.next_u64() & 1 == 0 {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Replace every `*.b` parameter with small random values. Zero biases put
/// many rectifier inputs exactly on the kink (e.g. wherever a transposed
/// conv sees an all-zero patch), where no finite difference is meaningful.
pub(crate) fn jitter_biases(store: &mut super::ParamStore, seed: u64) {
    let mut rng = SplitMix64::derive(seed, 0x6269_6173);
    for p in store.params_mut() {
        if p.name.ends_with(".b") {
            p.value = rand_tensor(&mut rng, p.value.shape(), -0.2, 0.2);
        }
    }
}

/// `sum(out * w)` for fixed random weights `w`, so every output element
/// carries a distinct upstream gradient.
pub(crate) fn weighted_sum(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = SplitMix64::derive(seed, 0x7765_6967);
    let w = rand_tensor(&mut rng, g.value(out).shape(), -1.0, 1.0);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// [`weighted_sum`] divided by `sqrt(numel)`, keeping the loss O(1) for
/// large outputs so that f32 rounding of the forward pass stays well below
/// the finite-difference tolerance.
pub(crate) fn normalized_sum(g: &mut Graph, out: NodeId, seed: u64) -> Result<NodeId> {
    let n = g.value(out).len() as f32;
    let s = weighted_sum(g, out, seed)?;
    Ok(g.scale(s, 1.0 / n.sqrt()))
}

fn params_of(tensors: Vec<(&str, Tensor)>) -> Vec<Param> {
    tensors.into_iter().map(|(n, t)| Param::new(n, t)).collect()
}

fn unary_case(seed: u64, shape: [usize; 4], away: bool, op: impl Fn(&mut Graph, NodeId) -> Result<NodeId>) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let x = if away {
        rand_away_from_zero(&mut rng, shape)
    } else {
        rand_tensor(&mut rng, shape, -1.0, 1.0)
    };
    check(
        &params_of(vec![("x", x)]),
        |g, ids| {
            let y = op(g, ids[0])?;
            weighted_sum(g, y, seed)
        },
        None,
        seed,
    )
}

fn binary_case(
    seed: u64,
    a: Tensor,
    b: Tensor,
    op: impl Fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>,
) -> Result<GradReport> {
    check(
        &params_of(vec![("a", a), ("b", b)]),
        |g, ids| {
            let y = op(g, ids[0], ids[1])?;
            weighted_sum(g, y, seed)
        },
        None,
        seed,
    )
}

fn case_conv2d(seed: u64) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let x = rand_tensor(&mut rng, [2, 2, 5, 5], -1.0, 1.0);
    let k = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
    binary_case(seed, x, k, |g, a, b| g.conv2d(a, b, 2, 1))
}

fn case_conv_transpose(seed: u64) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let x = rand_tensor(&mut rng, [2, 3, 3, 3], -1.0, 1.0);
    let k = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
    binary_case(seed, x, k, |g, a, b| g.conv_transpose(a, b, 2, 1))
}

fn case_add_bias(seed: u64) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let x = rand_tensor(&mut rng, [2, 3, 4, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [1, 3, 1, 1], -1.0, 1.0);
    binary_case(seed, x, b, |g, a, b| g.add_bias(a, b))
}

fn case_relu(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 4, 4], true, |g, x| Ok(g.relu(x)))
}

fn case_leaky_relu(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 4, 4], true, |g, x| Ok(g.leaky_relu(x, 0.1)))
}

fn case_sigmoid(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 4, 4], false, |g, x| Ok(g.sigmoid(x)))
}

fn case_upsample(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 3, 3], false, |g, x| g.bilinear_upsample(x, 2))
}

fn case_concat(seed: u64) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let a = rand_tensor(&mut rng, [2, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [2, 3, 3, 3], -1.0, 1.0);
    binary_case(seed, a, b, |g, a, b| g.concat_channels(a, b))
}

fn case_avg_pool(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 4, 6], false, |g, x| g.avg_pool2(x))
}

fn case_replicate_pad(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 3, 4], false, |g, x| Ok(g.replicate_pad(x, 1)))
}

fn elementwise_pair(seed: u64, lo: f32, hi: f32) -> (Tensor, Tensor) {
    let mut rng = SplitMix64::new(seed);
    (
        rand_tensor(&mut rng, [1, 2, 3, 3], -1.0, 1.0),
        rand_tensor(&mut rng, [1, 2, 3, 3], lo, hi),
    )
}

fn case_add(seed: u64) -> Result<GradReport> {
    let (a, b) = elementwise_pair(seed, -1.0, 1.0);
    binary_case(seed, a, b, |g, a, b| g.add(a, b))
}

fn case_sub(seed: u64) -> Result<GradReport> {
    let (a, b) = elementwise_pair(seed, -1.0, 1.0);
    binary_case(seed, a, b, |g, a, b| g.sub(a, b))
}

fn case_mul(seed: u64) -> Result<GradReport> {
    let (a, b) = elementwise_pair(seed, -1.0, 1.0);
    binary_case(seed, a, b, |g, a, b| g.mul(a, b))
}

fn case_div(seed: u64) -> Result<GradReport> {
    let (a, b) = elementwise_pair(seed, 0.5, 2.0);
    binary_case(seed, a, b, |g, a, b| g.div(a, b))
}

fn case_square(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 3, 3], false, |g, x| Ok(g.square(x)))
}

fn case_sqrt(seed: u64) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let x = rand_tensor(&mut rng, [1, 2, 3, 3], 0.5, 2.0);
    check(
        &params_of(vec![("x", x)]),
        |g, ids| {
            let y = g.sqrt(ids[0]);
            weighted_sum(g, y, seed)
        },
        None,
        seed,
    )
}

fn case_scale(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 3, 3], false, |g, x| Ok(g.scale(x, -1.7)))
}

fn case_add_scalar(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 3, 3], false, |g, x| Ok(g.add_scalar(x, 0.3)))
}

fn case_mean(seed: u64) -> Result<GradReport> {
    unary_case(seed, [2, 2, 3, 3], false, |g, x| {
        let sq = g.square(x);
        Ok(g.mean(sq))
    })
}

fn case_sum(seed: u64) -> Result<GradReport> {
    unary_case(seed, [2, 2, 3, 3], false, |g, x| {
        let sq = g.square(x);
        Ok(g.sum(sq))
    })
}

fn case_softmax_channel(seed: u64) -> Result<GradReport> {
    unary_case(seed, [2, 4, 3, 3], false, |g, x| Ok(g.softmax(x, SoftmaxAxis::Channel)))
}

fn case_softmax_spatial(seed: u64) -> Result<GradReport> {
    unary_case(seed, [2, 3, 3, 3], false, |g, x| Ok(g.softmax(x, SoftmaxAxis::Spatial)))
}

fn case_gram(seed: u64) -> Result<GradReport> {
    unary_case(seed, [2, 3, 2, 3], false, |g, x| Ok(g.gram(x)))
}

fn case_frobenius(seed: u64) -> Result<GradReport> {
    unary_case(seed, [2, 3, 3, 3], false, |g, x| Ok(g.frobenius(x)))
}

fn case_cosine(seed: u64) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let a = rand_tensor(&mut rng, [2, 4, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, [2, 4, 3, 3], -1.0, 1.0);
    binary_case(seed, a, b, |g, a, b| g.cosine_distance(a, b))
}

fn case_skewed(seed: u64) -> Result<GradReport> {
    unary_case(seed, [1, 2, 3, 3], false, |g, x| Ok(g.skewed(x, 1.5)))
}

/// Every differentiable op, each loss, and both full models.
pub fn registry() -> Vec<Case> {
    let mut cases = vec![
        Case { name: "conv2d", run: case_conv2d },
        Case { name: "conv_transpose", run: case_conv_transpose },
        Case { name: "add_bias", run: case_add_bias },
        Case { name: "relu", run: case_relu },
        Case { name: "leaky_relu", run: case_leaky_relu },
        Case { name: "sigmoid", run: case_sigmoid },
        Case { name: "bilinear_upsample", run: case_upsample },
        Case { name: "concat_channels", run: case_concat },
        Case { name: "avg_pool2", run: case_avg_pool },
        Case { name: "replicate_pad", run: case_replicate_pad },
        Case { name: "add", run: case_add },
        Case { name: "sub", run: case_sub },
        Case { name: "mul", run: case_mul },
        Case { name: "div", run: case_div },
        Case { name: "square", run: case_square },
        Case { name: "sqrt", run: case_sqrt },
        Case { name: "scale", run: case_scale },
        Case { name: "add_scalar", run: case_add_scalar },
        Case { name: "mean", run: case_mean },
        Case { name: "sum", run: case_sum },
        Case { name: "softmax_channel", run: case_softmax_channel },
        Case { name: "softmax_spatial", run: case_softmax_spatial },
        Case { name: "gram", run: case_gram },
        Case { name: "frobenius", run: case_frobenius },
        Case { name: "cosine_distance", run: case_cosine },
    ];
    cases.extend(crate::recover::gradcheck_cases());
    cases.extend(crate::discriminate::gradcheck_cases());
    cases
}

/// An identity op whose backward is off by 50%; must fail.
pub fn fault_case() -> Case {
    Case {
        name: "skewed_fault",
        run: case_skewed,
    }
}
