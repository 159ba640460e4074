//! Training configuration shared by the recovery and discrimination stages.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::SoftmaxAxis;
use crate::descriptors::HogConfig;
use crate::recover::{MaskSpec, Variant};
use crate::{Error, Result};

/// Where the frozen feature extractor comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackboneSpec {
    /// He-uniform weights drawn from this seed.
    Seeded(u64),
    /// `backbone.*` tensors of an existing checkpoint.
    Import(PathBuf),
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::Seeded(0)
    }
}

impl FromStr for BackboneSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("seeded:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::invalid(format!("bad backbone seed in '{s}'")))?;
            Ok(BackboneSpec::Seeded(seed))
        } else if let Some(path) = s.strip_prefix("import:") {
            if path.is_empty() {
                return Err(Error::invalid("backbone import path is empty"));
            }
            Ok(BackboneSpec::Import(PathBuf::from(path)))
        } else {
            Err(Error::invalid(format!(
                "backbone must be seeded:<seed> or import:<path>, got '{s}'"
            )))
        }
    }
}

impl std::fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackboneSpec::Seeded(s) => write!(f, "seeded:{s}"),
            BackboneSpec::Import(p) => write!(f, "import:{}", p.display()),
        }
    }
}

impl Serialize for BackboneSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackboneSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub recover_epochs: usize,
    pub disc_epochs: usize,
    pub batch_size: usize,
    pub recover_lr: f32,
    pub disc_lr: f32,
    pub weight_decay: f32,
    /// Fractions of the epoch budget at which the learning rate halves.
    pub decay_marks: Vec<f32>,
    pub lambda_m: f32,
    pub lambda_s: f32,
    /// Pyramid levels used by the gradient similarity loss.
    pub msgms_scales: usize,
    pub image_size: usize,
    pub hog: HogConfig,
    pub variant: Variant,
    pub backbone: BackboneSpec,
    pub backbone_width: usize,
    /// Width of the seeded backbone that ranks prompts during recovery training.
    pub prompt_backbone_width: usize,
    pub sc_axis: SoftmaxAxis,
    pub recover_widths: Vec<usize>,
    pub mask: MaskSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            recover_epochs: 30,
            disc_epochs: 20,
            batch_size: 32,
            recover_lr: 2e-3,
            disc_lr: 5e-3,
            weight_decay: 0.01,
            decay_marks: vec![0.4, 0.8],
            lambda_m: 1.0,
            lambda_s: 1.0,
            msgms_scales: 4,
            image_size: 64,
            hog: HogConfig::default(),
            variant: Variant::Hip,
            backbone: BackboneSpec::default(),
            backbone_width: 48,
            prompt_backbone_width: 16,
            sc_axis: SoftmaxAxis::Channel,
            recover_widths: vec![16, 32, 64],
            mask: MaskSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recover_epochs == 0 || self.disc_epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let mut prev = 0.0;
        for &m in &self.decay_marks {
            if !(m > prev && m < 1.0) {
                return Err(Error::invalid(format!(
                    "decay_marks must be strictly increasing within (0, 1), got {:?}",
                    self.decay_marks
                )));
            }
            prev = m;
        }
        for (name, v) in [
            ("recover_lr", self.recover_lr),
            ("disc_lr", self.disc_lr),
            ("weight_decay", self.weight_decay),
            ("lambda_m", self.lambda_m),
            ("lambda_s", self.lambda_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.msgms_scales == 0 {
            return Err(Error::invalid("msgms_scales must be >= 1"));
        }
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::invalid(format!(
                "image_size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        if self.image_size % (1 << (self.msgms_scales - 1)) != 0 {
            return Err(Error::invalid("image_size must be divisible by 2^(msgms_scales - 1)"));
        }
        if self.recover_widths.is_empty() || self.recover_widths.contains(&0) || self.backbone_width < 2 || self.prompt_backbone_width < 2 {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.image_size % (1 << self.recover_widths.len()) != 0 {
            return Err(Error::invalid("image_size must be divisible by 2^depth of the recover network"));
        }
        self.hog.validate()?;
        self.mask.validate()
    }

    /// Learning rate for `epoch` (0-based): halved once per passed mark,
    /// marks placed at `round(mark * epochs)`.
    pub fn lr_at(&self, base: f32, epoch: usize, epochs: usize) -> f32 {
        let passed = self
            .decay_marks
            .iter()
            .filter(|&&m| epoch >= (m * epochs as f32).round() as usize)
            .count();
        base * 0.5f32.powi(passed as i32)
    }
}
