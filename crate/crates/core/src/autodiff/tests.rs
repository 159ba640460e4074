use super::gradcheck::rand_tensor;
use super::*;
use crate::rng::SplitMix64;

/// Direct nested-loop correlation, f64 accumulation.
fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let [n, ic, h, w] = x.shape();
    let [oc, _, kh, kw] = k.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f64; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for c in 0..ic {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += x.at(b, c, y as usize, xx as usize) as f64 * k.at(o, c, i, j) as f64;
                                }
                            }
                        }
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Transposed conv as the adjoint of the brute-force conv: scatter every
/// input value through the kernel taps.
fn conv_transpose_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, ic, h, w] = x.shape();
    let [_, oc, kh, kw] = k.shape();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (w - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0f64; n * oc * oh * ow];
    for b in 0..n {
        for c in 0..ic {
            for y in 0..h {
                for xx in 0..w {
                    for o in 0..oc {
                        for i in 0..kh {
                            for j in 0..kw {
                                let ty = (y * stride + i) as isize - pad as isize;
                                let tx = (xx * stride + j) as isize - pad as isize;
                                if ty >= 0 && tx >= 0 && (ty as usize) < oh && (tx as usize) < ow {
                                    out[((b * oc + o) * oh + ty as usize) * ow + tx as usize] +=
                                        x.at(b, c, y, xx) as f64 * k.at(c, o, i, j) as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, [n, oc, oh, ow])
}

fn forward1(f: impl FnOnce(&mut Graph, NodeId) -> NodeId, x: Tensor) -> Tensor {
    let mut g = Graph::new();
    let xi = g.constant(x);
    let y = f(&mut g, xi);
    g.value(y).clone()
}

#[test]
fn conv2d_sum_of_ones() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let k = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), [1, 1, 1, 1]);
    assert_eq!(g.value(y).item(), 9.0);
}

#[test]
fn conv2d_identity_kernel() {
    let mut g = Graph::new();
    let input = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let x = g.constant(input.clone());
    let k = g.constant(Tensor::full([1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y), &input);
}

#[test]
fn conv2d_matches_brute_force() {
    for seed in 0..5 {
        let mut rng = SplitMix64::new(seed);
        let x = rand_tensor(&mut rng, [1, 2, 5, 5], -1.0, 1.0);
        let k = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
        let mut g = Graph::new();
        let (xi, ki) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xi, ki, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), [1, 3, 3, 3]);
        let oracle = conv_oracle(&x, &k, 2, 1);
        for (a, b) in g.value(y).data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn conv2d_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([1, 2, 4, 4]));
    let k = g.constant(Tensor::zeros([1, 3, 3, 3]));
    let err = g.conv2d(x, k, 1, 0).unwrap_err().to_string();
    assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
}

#[test]
fn conv_transpose_single_tap_spread() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([1, 1, 1, 1], 2.0));
    let k = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let y = g.conv_transpose(x, k, 2, 0).unwrap();
    assert_eq!(g.value(y), &Tensor::full([1, 1, 2, 2], 2.0));
}

#[test]
fn conv_then_transpose_round_trips_shape() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([1, 1, 4, 4], 1.0));
    let k = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let down = g.conv2d(x, k, 2, 0).unwrap();
    let up = g.conv_transpose(down, k, 2, 0).unwrap();
    assert_eq!(g.value(up).shape(), [1, 1, 4, 4]);
}

#[test]
fn conv_transpose_matches_adjoint_oracle() {
    for seed in 0..5 {
        let mut rng = SplitMix64::new(100 + seed);
        let x = rand_tensor(&mut rng, [2, 3, 3, 4], -1.0, 1.0);
        let k = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
        let mut g = Graph::new();
        let (xi, ki) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv_transpose(xi, ki, 2, 1).unwrap();
        let (oracle, shape) = conv_transpose_oracle(&x, &k, 2, 1);
        assert_eq!(g.value(y).shape(), shape);
        for (a, b) in g.value(y).data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }
}

#[test]
fn conv_inner_product_test() {
    // <conv(x), y> == <x, conv_transpose(y)> with the same kernel.
    for seed in 0..10 {
        let mut rng = SplitMix64::new(seed);
        let x = rand_tensor(&mut rng, [1, 2, 7, 7], -1.0, 1.0);
        let k = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
        let mut g = Graph::new();
        let (xi, ki) = (g.constant(x.clone()), g.constant(k.clone()));
        let cx = g.conv2d(xi, ki, 2, 1).unwrap();
        let y = rand_tensor(&mut rng, g.value(cx).shape(), -1.0, 1.0);
        let yi = g.constant(y.clone());
        // conv_transpose expects (in=3, out=2): the conv kernel read as (oc, ic).
        let adj = g.conv_transpose(yi, ki, 2, 1).unwrap();
        assert_eq!(g.value(adj).shape(), x.shape());
        let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rhs: f64 = x.data().iter().zip(g.value(adj).data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
    }
}

#[test]
fn relu_examples() {
    let y = forward1(|g, x| g.relu(x), Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    let y = forward1(|g, x| g.leaky_relu(x, 0.1), Tensor::scalar(-2.0));
    assert!((y.item() + 0.2).abs() < 1e-7);

    let mut g = Graph::new();
    let x = g.param(Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = g.relu(x);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn upsample_examples() {
    let c = Tensor::full([1, 2, 3, 3], 0.7);
    for factor in [1, 2, 3] {
        let y = forward1(|g, x| g.bilinear_upsample(x, factor).unwrap(), c.clone());
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }
    let mut rng = SplitMix64::new(1);
    let r = rand_tensor(&mut rng, [1, 1, 4, 5], 0.0, 1.0);
    assert_eq!(forward1(|g, x| g.bilinear_upsample(x, 1).unwrap(), r.clone()), r);

    let y = forward1(
        |g, x| g.bilinear_upsample(x, 2).unwrap(),
        Tensor::from_rows(&[&[0.0, 1.0], &[0.0, 1.0]]),
    );
    for row in y.data().chunks(4) {
        assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
    }
}

#[test]
fn concat_examples() {
    let mut g = Graph::new();
    let a = g.param(Tensor::full([1, 2, 4, 4], 1.0));
    let b = g.param(Tensor::full([1, 3, 4, 4], 2.0));
    let c = g.concat_channels(a, b).unwrap();
    assert_eq!(g.value(c).shape(), [1, 5, 4, 4]);
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert!(g.grad(a).unwrap().iter().all(|&v| v == 1.0));
    assert!(g.grad(b).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = Tensor::from_fn([1, 2, 2, 2], |_, c, y, x| (c * 4 + y * 2 + x) as f32);
    let xi = g.constant(x.clone());
    let e = g.constant(Tensor::zeros([1, 0, 2, 2]));
    let c = g.concat_channels(xi, e).unwrap();
    assert_eq!(g.value(c), &x);

    let bad = g.constant(Tensor::zeros([1, 1, 3, 2]));
    assert!(g.concat_channels(xi, bad).is_err());
}

#[test]
fn avg_pool_examples() {
    let y = forward1(|g, x| g.avg_pool2(x).unwrap(), Tensor::full([1, 1, 2, 2], 1.0));
    assert_eq!(y.data(), &[1.0]);
    let y = forward1(|g, x| g.avg_pool2(x).unwrap(), Tensor::from_rows(&[&[0.0, 2.0], &[4.0, 6.0]]));
    assert_eq!(y.data(), &[3.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(&[&[0.0, 2.0], &[4.0, 6.0]]));
    let p = g.avg_pool2(x).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);

    let mut g = Graph::new();
    let odd = g.constant(Tensor::zeros([1, 1, 3, 2]));
    let err = g.avg_pool2(odd).unwrap_err().to_string();
    assert!(err.contains("pad"), "{err}");
}

#[test]
fn backward_examples() {
    let mut rng = SplitMix64::new(9);
    let v = rand_tensor(&mut rng, [1, 2, 3, 3], -1.0, 1.0);

    let mut g = Graph::new();
    let x = g.param(v.clone());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.param(v.clone());
    let sq = g.square(x);
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    g.backward(half).unwrap();
    assert_eq!(g.grad(x).unwrap(), v.data());
}

#[test]
fn backward_rejects_non_scalar_and_zeroes_unreachable() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros([1, 1, 2, 2]));
    let unused = g.param(Tensor::full([1, 1, 1, 3], 5.0));
    assert!(g.backward(x).is_err());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(unused).unwrap(), &[0.0; 3]);
}

#[test]
fn constants_get_no_grad() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
    let p = g.param(Tensor::full([1, 1, 2, 2], 2.0));
    let m = g.mul(c, p).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap(), &[1.0; 4]);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = SplitMix64::new(4);
    let x = rand_tensor(&mut rng, [4, 3, 9, 9], -1.0, 1.0);
    let k = rand_tensor(&mut rng, [5, 3, 3, 3], -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let (xi, ki) = (g.constant(x.clone()), g.param(k.clone()));
        let y = g.conv2d(xi, ki, 2, 1).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        (g.value(y).checksum(), g.grad(ki).unwrap().to_vec())
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn all_finite_after_ops_on_finite_inputs() {
    let mut rng = SplitMix64::new(2);
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(&mut rng, [1, 3, 4, 4], -5.0, 5.0));
    let s = g.softmax(x, SoftmaxAxis::Channel);
    let gr = g.gram(s);
    let f = g.frobenius(gr);
    let sg = g.sigmoid(x);
    let z = g.constant(Tensor::zeros([1, 3, 4, 4]));
    let cd = g.cosine_distance(x, z).unwrap();
    let sq = g.sqrt(z);
    for id in [s, gr, f, sg, cd, sq] {
        assert!(g.value(id).all_finite());
    }
    assert_eq!(g.degenerate_cosines(), 16);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conv_forward_matches_oracle(seed in 0u64..1_000_000, stride in 1usize..3, pad in 0usize..2) {
            let mut rng = SplitMix64::new(seed);
            let x = rand_tensor(&mut rng, [2, 2, 6, 5], -1.0, 1.0);
            let k = rand_tensor(&mut rng, [3, 2, 3, 3], -1.0, 1.0);
            let mut g = Graph::new();
            let (xi, ki) = (g.constant(x.clone()), g.constant(k.clone()));
            let y = g.conv2d(xi, ki, stride, pad).unwrap();
            let oracle = conv_oracle(&x, &k, stride, pad);
            prop_assert_eq!(g.value(y).len(), oracle.len());
            for (a, b) in g.value(y).data().iter().zip(&oracle) {
                prop_assert!((*a as f64 - b).abs() < 1e-5);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..1_000_000) {
            let mut rng = SplitMix64::new(seed);
            let x = rand_tensor(&mut rng, [1, 5, 2, 3], -4.0, 4.0);
            let y = forward1(|g, x| g.softmax(x, SoftmaxAxis::Channel), x);
            for p in 0..6 {
                let s: f32 = (0..5).map(|c| y.data()[c * 6 + p]).sum();
                prop_assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }
}
