use serde::{Deserialize, Serialize};

use crate::autodiff::{init, Bound, Graph, NodeId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const RECOVER_PREFIX: &str = "recover.";
const INIT_STREAM: u64 = 0x5245_4300;

/// Which input the recovery network sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// HOG rendering plus a prompt image; never the query itself.
    Hip,
    /// Masked image with the HOG rendering filling the holes.
    Iihp,
    /// Masked image.
    Imi,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Hip => "hip",
            Variant::Iihp => "iihp",
            Variant::Imi => "imi",
        }
    }

    fn streams(self) -> &'static [&'static str] {
        match self {
            Variant::Hip => &["enc_hog", "enc_prompt"],
            Variant::Iihp | Variant::Imi => &["enc"],
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hip" => Ok(Variant::Hip),
            "iihp" => Ok(Variant::Iihp),
            "imi" => Ok(Variant::Imi),
            _ => Err(Error::invalid(format!("unknown variant '{s}' (hip|iihp|imi)"))),
        }
    }
}

/// UNet-style layout: one encoder per input stream, each with stride-2
/// 3x3 stages of the given widths; the decoder upsamples with 2x2
/// transposed convs and fuses the skips of every stream at every level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoverArch {
    pub variant: Variant,
    pub widths: Vec<usize>,
}

impl RecoverArch {
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    fn head_width(&self) -> usize {
        (self.widths[0] / 2).max(1)
    }

    fn encode(&self, g: &mut Graph, p: &Bound, stream: &str, x: NodeId) -> Result<Vec<NodeId>> {
        let mut skips = Vec::with_capacity(self.depth());
        let mut h = x;
        for i in 0..self.depth() {
            let y = p.conv(g, &format!("{stream}.{i}"), h, 2, 1)?;
            h = g.relu(y);
            skips.push(h);
        }
        Ok(skips)
    }

    /// Output `(n, 1, H, W)` in (0, 1). `second` is the prompt for HIP and
    /// must be `None` otherwise.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, first: NodeId, second: Option<NodeId>) -> Result<NodeId> {
        let streams = self.variant.streams();
        let inputs: Vec<NodeId> = match (streams.len(), second) {
            (2, Some(b)) => {
                let (sa, sb) = (g.value(first).shape(), g.value(b).shape());
                if sa != sb {
                    return Err(Error::Shape {
                        op: "recover inputs",
                        lhs: sa.to_vec(),
                        rhs: sb.to_vec(),
                    });
                }
                vec![first, b]
            }
            (1, None) => vec![first],
            _ => {
                return Err(Error::invalid(format!(
                    "variant {} takes {} input(s)",
                    self.variant,
                    streams.len()
                )))
            }
        };
        let [_, _, h, w] = g.value(first).shape();
        let m = 1 << self.depth();
        if h % m != 0 || w % m != 0 {
            return Err(Error::invalid(format!(
                "recover input sides must be divisible by {m}, got {h}x{w}"
            )));
        }
        let mut skips = Vec::with_capacity(streams.len());
        for (s, &x) in streams.iter().zip(&inputs) {
            skips.push(self.encode(g, p, s, x)?);
        }
        let last = self.depth() - 1;
        let mut state = skips[0][last];
        for s in &skips[1..] {
            state = g.concat_channels(state, s[last])?;
        }
        for l in (1..self.depth()).rev() {
            let u = p.conv_transpose(g, &format!("up.{l}"), state, 2, 0)?;
            let mut cat = g.relu(u);
            for s in &skips {
                cat = g.concat_channels(cat, s[l - 1])?;
            }
            let f = p.conv(g, &format!("fuse.{l}"), cat, 1, 1)?;
            state = g.relu(f);
        }
        let u = p.conv_transpose(g, "up.0", state, 2, 0)?;
        let u = g.relu(u);
        let y = p.conv(g, "head", u, 1, 1)?;
        Ok(g.sigmoid(y))
    }
}

#[derive(Clone, Debug)]
pub struct RecoverModel {
    pub arch: RecoverArch,
    pub params: ParamStore,
}

impl RecoverModel {
    pub fn new(variant: Variant, widths: &[usize], seed: u64) -> RecoverModel {
        assert!(!widths.is_empty(), "recover network needs at least one stage");
        let arch = RecoverArch {
            variant,
            widths: widths.to_vec(),
        };
        let streams = variant.streams();
        let ns = streams.len();
        let mut rng = SplitMix64::derive(seed, INIT_STREAM);
        let mut params = ParamStore::new();
        let mut conv = |params: &mut ParamStore, name: String, oc: usize, ic: usize| {
            params.insert(format!("{name}.w"), init::conv_kernel(&mut rng, oc, ic, 3));
            params.insert(format!("{name}.b"), init::zero_bias(oc));
        };
        for s in streams {
            for (i, &w) in widths.iter().enumerate() {
                let ic = if i == 0 { 1 } else { widths[i - 1] };
                conv(&mut params, format!("{s}.{i}"), w, ic);
            }
        }
        let last = widths.len() - 1;
        let mut rng_t = SplitMix64::derive(seed, INIT_STREAM + 1);
        let mut state = ns * widths[last];
        for l in (1..widths.len()).rev() {
            params.insert(
                format!("up.{l}.w"),
                init::conv_transpose_kernel(&mut rng_t, state, widths[l - 1], 2, 2),
            );
            params.insert(format!("up.{l}.b"), init::zero_bias(widths[l - 1]));
            conv(&mut params, format!("fuse.{l}"), widths[l - 1], widths[l - 1] * (1 + ns));
            state = widths[l - 1];
        }
        let hw = arch.head_width();
        params.insert("up.0.w", init::conv_transpose_kernel(&mut rng_t, state, hw, 2, 2));
        params.insert("up.0.b", init::zero_bias(hw));
        conv(&mut params, "head".into(), 1, hw);
        RecoverModel { arch, params }
    }

    fn run(&self, first: &Tensor, second: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let a = g.constant(first.clone());
        let b = second.map(|t| g.constant(t.clone()));
        let y = self.arch.forward_graph(&mut g, &p, a, b)?;
        Ok(g.value(y).clone())
    }

    /// Recovery from a HOG rendering and a prompt image, both
    /// `(n, 1, H, W)`. The query image is not an input.
    pub fn hip_forward(&self, hog: &Tensor, prompt: &Tensor) -> Result<Tensor> {
        if self.arch.variant != Variant::Hip {
            return Err(Error::invalid(format!("hip_forward on a {} model", self.arch.variant)));
        }
        self.run(hog, Some(prompt))
    }

    /// Recovery for the single-input variants.
    pub fn forward_single(&self, input: &Tensor) -> Result<Tensor> {
        if self.arch.variant == Variant::Hip {
            return Err(Error::invalid("the hip variant needs a HOG rendering and a prompt"));
        }
        self.run(input, None)
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.named_tensors(RECOVER_PREFIX)
    }
}
