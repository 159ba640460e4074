//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value,
//! so insertion order is a topological order. [`Graph::backward`] walks the
//! tape once in reverse from a scalar loss. Nodes that do not depend on any
//! parameter leaf are skipped during the backward sweep.

pub mod gradcheck;
pub mod init;
pub mod kernels;
mod optim;
mod params;

pub use optim::{AdamW, AdamWConfig, Param};
pub use params::{Bound, ParamStore};

use kernels::ConvGeom;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    /// Each location's channel vector becomes a distribution.
    Channel,
    /// Each channel plane becomes a distribution over locations.
    Spatial,
}

impl std::str::FromStr for SoftmaxAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(SoftmaxAxis::Channel),
            "spatial" => Ok(SoftmaxAxis::Spatial),
            _ => Err(Error::invalid(format!("unknown softmax axis '{s}' (channel|spatial)"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, k: NodeId, stride: usize, pad: usize },
    ConvTranspose { x: NodeId, k: NodeId, stride: usize, pad: usize },
    AddBias { x: NodeId, b: NodeId },
    LeakyRelu { x: NodeId, slope: f32 },
    Sigmoid { x: NodeId },
    Upsample { x: NodeId, factor: usize },
    Concat { a: NodeId, b: NodeId },
    AvgPool2 { x: NodeId },
    ReplicatePad { x: NodeId, pad: usize },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    Square { x: NodeId },
    Sqrt { x: NodeId },
    Scale { x: NodeId, k: f32 },
    AddScalar { x: NodeId },
    Mean { x: NodeId },
    Sum { x: NodeId },
    Softmax { x: NodeId, axis: SoftmaxAxis },
    Gram { x: NodeId },
    Frobenius { x: NodeId },
    CosineDistance { a: NodeId, b: NodeId },
    Skewed { x: NodeId, factor: f32 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    degenerate_cosines: usize,
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf; receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last [`Graph::backward`] loss w.r.t. `id`; `None` for
    /// constants or before backward has run.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Number of zero-norm locations met by cosine-distance ops so far.
    pub fn degenerate_cosines(&self) -> usize {
        self.degenerate_cosines
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (xv, kv) = (self.value(x), self.value(k));
        let [n, ic, h, w] = xv.shape();
        let [oc, kic, kh, kw] = kv.shape();
        if kic != ic || stride == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: xv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv_out_len(h, kh, stride, pad),
            kernels::conv_out_len(w, kw, stride, pad),
        ) else {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: xv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        };
        let g = ConvGeom { channels: ic, height: h, width: w, kh, kw, stride, pad };
        let out = kernels::conv2d_forward(xv.data(), n, &g, kv.data(), oc);
        let value = Tensor::new([n, oc, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, k, stride, pad }, &[x, k]))
    }

    pub fn conv_transpose(&mut self, x: NodeId, k: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (xv, kv) = (self.value(x), self.value(k));
        let [n, ic, h, w] = xv.shape();
        let [kic, oc, kh, kw] = kv.shape();
        let dims = (
            kernels::conv_transpose_out_len(h, kh, stride, pad),
            kernels::conv_transpose_out_len(w, kw, stride, pad),
        );
        let (true, Some(oh), Some(ow)) = (kic == ic && stride > 0 && h > 0 && w > 0, dims.0, dims.1) else {
            return Err(Error::Shape {
                op: "conv_transpose",
                lhs: xv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        };
        let g = ConvGeom { channels: oc, height: oh, width: ow, kh, kw, stride, pad };
        debug_assert_eq!((g.out_h(), g.out_w()), (h, w));
        let out = kernels::conv_transpose_forward(xv.data(), n, ic, &g, kv.data());
        let value = Tensor::new([n, oc, oh, ow], out)?;
        Ok(self.push(value, Op::ConvTranspose { x, k, stride, pad }, &[x, k]))
    }

    /// Adds a `(1, C, 1, 1)` bias to every location.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(b));
        let [n, c, h, w] = xv.shape();
        if bv.shape() != [1, c, 1, 1] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.data().to_vec();
        for (i, plane) in out.chunks_mut(h * w).enumerate() {
            let bias = bv.data()[i % c];
            plane.iter_mut().for_each(|v| *v += bias);
        }
        let value = Tensor::new([n, c, h, w], out)?;
        Ok(self.push(value, Op::AddBias { x, b }, &[x, b]))
    }

    /// Which side of the kink every rectifier input lies on, in tape order.
    /// Two evaluations with equal patterns are on the same linear piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, slope } = node.op {
                if slope != 1.0 {
                    out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
                }
            }
        }
        out
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    /// `x` where positive, `slope * x` elsewhere.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    pub fn bilinear_upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be >= 1"));
        }
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let out = kernels::resize_planes(xv.data(), n * c, h, w, h * factor, w * factor);
        let value = Tensor::new([n, c, h * factor, w * factor], out)?;
        Ok(self.push(value, Op::Upsample { x, factor }, &[x]))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let [n, ca, h, w] = av.shape();
        let [nb, cb, hb, wb] = bv.shape();
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Shape {
                op: "concat_channels",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv.data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let value = Tensor::new([n, ca + cb, h, w], out)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!(
                "avg_pool2 needs even spatial dims, got {h}x{w}; pad the input first"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let s = &xv.data()[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let sum = s[2 * y * w + 2 * x]
                        + s[2 * y * w + 2 * x + 1]
                        + s[(2 * y + 1) * w + 2 * x]
                        + s[(2 * y + 1) * w + 2 * x + 1];
                    out[p * oh * ow + y * ow + x] = 0.25 * sum;
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push(value, Op::AvgPool2 { x }, &[x]))
    }

    /// Pads each plane by repeating its border pixels.
    pub fn replicate_pad(&mut self, x: NodeId, pad: usize) -> NodeId {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let s = &xv.data()[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                let sy = y.saturating_sub(pad).min(h - 1);
                for xo in 0..ow {
                    let sx = xo.saturating_sub(pad).min(w - 1);
                    out[p * oh * ow + y * ow + xo] = s[sy * w + sx];
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out).expect("pad shape");
        self.push(value, Op::ReplicatePad { x, pad }, &[x])
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }, &[a, b]))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div { a, b }, &[a, b]))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| v * v);
        self.push(v, Op::Square { x }, &[x])
    }

    /// Square root with subgradient 0 at 0.
    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| v.max(0.0).sqrt());
        self.push(v, Op::Sqrt { x }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, k: f32) -> NodeId {
        let v = self.value(x).map(|v| v * k);
        self.push(v, Op::Scale { x, k }, &[x])
    }

    pub fn add_scalar(&mut self, x: NodeId, k: f32) -> NodeId {
        let v = self.value(x).map(|v| v + k);
        self.push(v, Op::AddScalar { x }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let s = kernels::wide_sum(xv.data());
        let v = Tensor::scalar((s / xv.len() as f64) as f32);
        self.push(v, Op::Mean { x }, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = kernels::wide_sum(self.value(x).data()) as f32;
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn softmax(&mut self, x: NodeId, axis: SoftmaxAxis) -> NodeId {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let out = match axis {
            SoftmaxAxis::Channel => kernels::softmax_channels(xv.data(), n, c, h * w),
            SoftmaxAxis::Spatial => kernels::softmax_spatial(xv.data(), n * c, h * w),
        };
        let v = Tensor::new(xv.shape(), out).expect("softmax shape");
        self.push(v, Op::Softmax { x, axis }, &[x])
    }

    /// Per image, `x` viewed as `(c, hw)`; output `(n, 1, hw, hw)` holding
    /// inner products between every pair of locations.
    pub fn gram(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let hw = h * w;
        let v = Tensor::new([n, 1, hw, hw], kernels::gram(xv.data(), n, c, hw)).expect("gram shape");
        self.push(v, Op::Gram { x }, &[x])
    }

    /// Per-image Frobenius norm, `(n, 1, 1, 1)`. Subgradient 0 at 0.
    pub fn frobenius(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.batch();
        let per = xv.len() / n.max(1);
        let out = (0..n)
            .map(|i| xv.data()[i * per..(i + 1) * per].iter().map(|v| v * v).sum::<f32>().sqrt())
            .collect();
        let v = Tensor::new([n, 1, 1, 1], out).expect("frobenius shape");
        self.push(v, Op::Frobenius { x }, &[x])
    }

    /// Per-location `1 - cos` between channel vectors, `(n, 1, h, w)`.
    /// Zero-norm locations score 1, pass no gradient, and bump
    /// [`Graph::degenerate_cosines`].
    pub fn cosine_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("cosine_distance", av, bv)?;
        let [n, c, h, w] = av.shape();
        let (out, degenerate) = kernels::cosine_distance(av.data(), bv.data(), n, c, h * w);
        self.degenerate_cosines += degenerate;
        let v = Tensor::new([n, 1, h, w], out)?;
        Ok(self.push(v, Op::CosineDistance { a, b }, &[a, b]))
    }

    /// Identity whose backward multiplies by `factor`. Only useful as a
    /// negative control for the gradient checker.
    pub fn skewed(&mut self, x: NodeId, factor: f32) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, Op::Skewed { x, factor }, &[x])
    }

    /// Reverse sweep from a one-element `loss`. Afterwards every
    /// parameter leaf holds a gradient (zeros when unreachable).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, gi) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, v)| *a += v),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn input_grads(&self, idx: usize, g: &[f32]) -> Vec<(NodeId, Vec<f32>)> {
        let out = &self.nodes[idx].value;
        match self.nodes[idx].op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, k, stride, pad } => {
                let (xv, kv) = (self.value(x), self.value(k));
                let [n, ic, h, w] = xv.shape();
                let [oc, _, kh, kw] = kv.shape();
                let geom = ConvGeom { channels: ic, height: h, width: w, kh, kw, stride, pad };
                let (dx, dk) =
                    kernels::conv2d_backward(xv.data(), n, &geom, kv.data(), oc, g, self.wants(x), self.wants(k));
                let mut v = Vec::new();
                if let Some(dx) = dx {
                    v.push((x, dx));
                }
                if let Some(dk) = dk {
                    v.push((k, dk));
                }
                v
            }
            Op::ConvTranspose { x, k, stride, pad } => {
                let (xv, kv) = (self.value(x), self.value(k));
                let [n, ic, _, _] = xv.shape();
                let [_, oc, kh, kw] = kv.shape();
                let [_, _, oh, ow] = out.shape();
                let geom = ConvGeom { channels: oc, height: oh, width: ow, kh, kw, stride, pad };
                let (dx, dk) = kernels::conv_transpose_backward(
                    xv.data(),
                    n,
                    ic,
                    &geom,
                    kv.data(),
                    g,
                    self.wants(x),
                    self.wants(k),
                );
                let mut v = Vec::new();
                if let Some(dx) = dx {
                    v.push((x, dx));
                }
                if let Some(dk) = dk {
                    v.push((k, dk));
                }
                v
            }
            Op::AddBias { x, b } => {
                let [_, c, h, w] = out.shape();
                let mut db = vec![0.0f32; c];
                for (i, plane) in g.chunks(h * w).enumerate() {
                    db[i % c] += plane.iter().sum::<f32>();
                }
                vec![(x, g.to_vec()), (b, db)]
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { slope * gi })
                    .collect();
                vec![(x, d)]
            }
            Op::Sigmoid { x } => {
                let d = out.data().iter().zip(g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                vec![(x, d)]
            }
            Op::Upsample { x, factor } => {
                let [n, c, h, w] = self.value(x).shape();
                vec![(x, kernels::resize_planes_backward(g, n * c, h, w, h * factor, w * factor))]
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.value(a).shape();
                let cb = self.value(b).channels();
                let hw = h * w;
                let (mut da, mut db) = (Vec::with_capacity(n * ca * hw), Vec::with_capacity(n * cb * hw));
                for i in 0..n {
                    let base = i * (ca + cb) * hw;
                    da.extend_from_slice(&g[base..base + ca * hw]);
                    db.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![(a, da), (b, db)]
            }
            Op::AvgPool2 { x } => {
                let [n, c, h, w] = self.value(x).shape();
                let (oh, ow) = (h / 2, w / 2);
                let mut d = vec![0.0f32; n * c * h * w];
                for p in 0..n * c {
                    for y in 0..h {
                        for xx in 0..w {
                            d[p * h * w + y * w + xx] = 0.25 * g[p * oh * ow + (y / 2) * ow + xx / 2];
                        }
                    }
                }
                vec![(x, d)]
            }
            Op::ReplicatePad { x, pad } => {
                let [n, c, h, w] = self.value(x).shape();
                let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                let mut d = vec![0.0f32; n * c * h * w];
                for p in 0..n * c {
                    for y in 0..oh {
                        let sy = y.saturating_sub(pad).min(h - 1);
                        for xo in 0..ow {
                            let sx = xo.saturating_sub(pad).min(w - 1);
                            d[p * h * w + sy * w + sx] += g[p * oh * ow + y * ow + xo];
                        }
                    }
                }
                vec![(x, d)]
            }
            Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Sub { a, b } => vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())],
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                vec![
                    (a, g.iter().zip(bv).map(|(gi, y)| gi * y).collect()),
                    (b, g.iter().zip(av).map(|(gi, x)| gi * x).collect()),
                ]
            }
            Op::Div { a, b } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let da = g.iter().zip(bv).map(|(gi, y)| gi / y).collect();
                let db = g
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(gi, (x, y))| -gi * x / (y * y))
                    .collect();
                vec![(a, da), (b, db)]
            }
            Op::Square { x } => {
                let xv = self.value(x).data();
                vec![(x, g.iter().zip(xv).map(|(gi, v)| 2.0 * gi * v).collect())]
            }
            Op::Sqrt { x } => {
                let d = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| if s > 0.0 { 0.5 * gi / s } else { 0.0 })
                    .collect();
                vec![(x, d)]
            }
            Op::Scale { x, k } => vec![(x, g.iter().map(|v| v * k).collect())],
            Op::AddScalar { x } => vec![(x, g.to_vec())],
            Op::Mean { x } => {
                let n = self.value(x).len();
                vec![(x, vec![g[0] / n as f32; n])]
            }
            Op::Sum { x } => vec![(x, vec![g[0]; self.value(x).len()])],
            Op::Softmax { x, axis } => {
                let [n, c, h, w] = out.shape();
                let hw = h * w;
                let y = out.data();
                let mut d = vec![0.0f32; y.len()];
                match axis {
                    SoftmaxAxis::Channel => {
                        for i in 0..n {
                            let base = i * c * hw;
                            for p in 0..hw {
                                let dot: f32 = (0..c).map(|ch| g[base + ch * hw + p] * y[base + ch * hw + p]).sum();
                                for ch in 0..c {
                                    let o = base + ch * hw + p;
                                    d[o] = y[o] * (g[o] - dot);
                                }
                            }
                        }
                    }
                    SoftmaxAxis::Spatial => {
                        for p in 0..n * c {
                            let r = p * hw..(p + 1) * hw;
                            let dot: f32 = g[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                            for o in r {
                                d[o] = y[o] * (g[o] - dot);
                            }
                        }
                    }
                }
                vec![(x, d)]
            }
            Op::Gram { x } => {
                let xv = self.value(x);
                let [n, c, h, w] = xv.shape();
                let hw = h * w;
                let mut d = vec![0.0f32; xv.len()];
                let mut sym = vec![0.0f32; hw * hw];
                for i in 0..n {
                    let gi = &g[i * hw * hw..(i + 1) * hw * hw];
                    for r in 0..hw {
                        for col in 0..hw {
                            sym[r * hw + col] = gi[r * hw + col] + gi[col * hw + r];
                        }
                    }
                    kernels::gemm(
                        c,
                        hw,
                        hw,
                        &xv.data()[i * c * hw..(i + 1) * c * hw],
                        false,
                        &sym,
                        false,
                        &mut d[i * c * hw..(i + 1) * c * hw],
                        false,
                    );
                }
                vec![(x, d)]
            }
            Op::Frobenius { x } => {
                let xv = self.value(x);
                let n = xv.batch();
                let per = xv.len() / n.max(1);
                let mut d = vec![0.0f32; xv.len()];
                for i in 0..n {
                    let norm = out.data()[i];
                    if norm > 0.0 {
                        for j in i * per..(i + 1) * per {
                            d[j] = g[i] * xv.data()[j] / norm;
                        }
                    }
                }
                vec![(x, d)]
            }
            Op::CosineDistance { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let [n, c, h, w] = av.shape();
                let hw = h * w;
                let (ad, bd) = (av.data(), bv.data());
                let mut da = vec![0.0f32; ad.len()];
                let mut db = vec![0.0f32; bd.len()];
                for i in 0..n {
                    let base = i * c * hw;
                    for p in 0..hw {
                        let (mut dot, mut na, mut nb) = (0.0f32, 0.0f32, 0.0f32);
                        for ch in 0..c {
                            let (x, y) = (ad[base + ch * hw + p], bd[base + ch * hw + p]);
                            dot += x * y;
                            na += x * x;
                            nb += y * y;
                        }
                        if na <= 0.0 || nb <= 0.0 {
                            continue;
                        }
                        let r = (na * nb).sqrt();
                        let cos = dot / r;
                        let go = g[i * hw + p];
                        for ch in 0..c {
                            let o = base + ch * hw + p;
                            da[o] = -go * (bd[o] / r - cos * ad[o] / na);
                            db[o] = -go * (ad[o] / r - cos * bd[o] / nb);
                        }
                    }
                }
                vec![(a, da), (b, db)]
            }
            Op::Skewed { x, factor } => vec![(x, g.iter().map(|v| v * factor).collect())],
        }
    }
}

#[cfg(test)]
mod tests;
