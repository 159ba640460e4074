use std::path::PathBuf;

use crate::autodiff::{init, Graph, ParamStore};
use crate::checkpoint::Checkpoint;
use crate::config::BackboneSpec;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Checkpoint prefix of backbone tensors.
pub const BACKBONE_PREFIX: &str = "backbone.";
const LEVELS: usize = 3;
const INIT_STREAM: u64 = 0x4242_4f4e;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackboneSource {
    Seeded(u64),
    Imported(PathBuf),
}

/// Frozen convolutional feature extractor.
///
/// A stride-2 stem followed by three stride-2 stages gives pyramid levels at
/// strides 4, 8 and 16 with widths `w`, `2w`, `4w`. Every conv is 3x3 with
/// padding 1 and a ReLU.
#[derive(Clone, Debug)]
pub struct Backbone {
    params: ParamStore,
    width: usize,
    source: BackboneSource,
}

/// Multi-scale features of a batch, finest level first; each `(n, c, h, w)`.
pub type FeaturePyramid = Vec<Tensor>;

fn stage_names() -> [&'static str; 4] {
    ["stem", "level1", "level2", "level3"]
}

fn stage_channels(width: usize) -> [(usize, usize); 4] {
    let stem = (width / 2).max(1);
    [(1, stem), (stem, width), (width, 2 * width), (2 * width, 4 * width)]
}

impl Backbone {
    pub fn seeded(seed: u64, width: usize) -> Backbone {
        let mut rng = SplitMix64::derive(seed, INIT_STREAM);
        let mut params = ParamStore::new();
        for (name, (ic, oc)) in stage_names().into_iter().zip(stage_channels(width)) {
            params.insert(format!("{name}.w"), init::conv_kernel(&mut rng, oc, ic, 3));
            params.insert(format!("{name}.b"), init::zero_bias(oc));
        }
        Backbone {
            params,
            width,
            source: BackboneSource::Seeded(seed),
        }
    }

    /// Load `backbone.*` tensors; the width is read from `backbone.level1.w`.
    pub fn from_checkpoint(ckpt: &Checkpoint, source: BackboneSource) -> Result<Backbone> {
        let key = format!("{BACKBONE_PREFIX}level1.w");
        let width = ckpt
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{key}'")))?
            .shape()[0];
        let mut b = Backbone::seeded(0, width);
        b.params.load(&ckpt.tensors, BACKBONE_PREFIX)?;
        b.source = source;
        Ok(b)
    }

    pub fn from_spec(spec: &BackboneSpec, width: usize) -> Result<Backbone> {
        match spec {
            BackboneSpec::Seeded(seed) => Ok(Backbone::seeded(*seed, width)),
            BackboneSpec::Import(path) => {
                let ckpt = Checkpoint::load(path)?;
                Backbone::from_checkpoint(&ckpt, BackboneSource::Imported(path.clone()))
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source(&self) -> &BackboneSource {
        &self.source
    }

    pub fn levels(&self) -> usize {
        LEVELS
    }

    /// Channel widths of the pyramid levels.
    pub fn widths(&self) -> Vec<usize> {
        (0..LEVELS).map(|i| self.width << i).collect()
    }

    /// `(c, h, w)` of each level for an `h x w` input.
    pub fn geometry(&self, h: usize, w: usize) -> Vec<[usize; 3]> {
        (0..LEVELS).map(|i| [self.width << i, h >> (i + 2), w >> (i + 2)]).collect()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.named_tensors(BACKBONE_PREFIX)
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    /// Pyramid of a `(n, 1, h, w)` batch; `h` and `w` must be multiples of 16.
    pub fn extract(&self, images: &Tensor) -> Result<FeaturePyramid> {
        let [_, c, h, w] = images.shape();
        if c != 1 {
            return Err(Error::invalid(format!("backbone expects 1 channel, got {c}")));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "backbone input must have sides divisible by 16, got {h}x{w}"
            )));
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let mut x = g.constant(images.clone());
        let mut out = Vec::with_capacity(LEVELS);
        for (i, name) in stage_names().into_iter().enumerate() {
            let y = bound.conv(&mut g, name, x, 2, 1)?;
            x = g.relu(y);
            if i > 0 {
                out.push(g.value(x).clone());
            }
        }
        Ok(out)
    }

    /// Global descriptor per image: spatial mean of the deepest level.
    pub fn descriptors(&self, images: &Tensor) -> Result<Vec<Vec<f32>>> {
        let pyramid = self.extract(images)?;
        let deep = pyramid.last().expect("pyramid levels");
        let [n, c, h, w] = deep.shape();
        let hw = h * w;
        Ok((0..n)
            .map(|i| {
                (0..c)
                    .map(|ch| {
                        let start = (i * c + ch) * hw;
                        deep.data()[start..start + hw].iter().sum::<f32>() / hw as f32
                    })
                    .collect()
            })
            .collect())
    }
}
