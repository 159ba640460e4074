//! Configuration layering: built-in defaults < JSON file < command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use redi_core::autodiff::SoftmaxAxis;
use redi_core::config::{BackboneSpec, TrainConfig};
use redi_core::recover::Variant;
use serde::de::DeserializeOwned;

/// Parse a JSON file; errors name the offending key path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| redi_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .with_context(|| format!("reading config {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        anyhow::anyhow!("config {}: key '{key}': {}", path.display(), e.into_inner())
    })
}

/// Training flags shared by both stages. `epochs` and `lr` apply to the
/// stage being trained.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    /// Comma-separated fractions of the epoch budget where the lr halves.
    #[arg(long, value_delimiter = ',')]
    pub decay_marks: Option<Vec<f32>>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// `seeded:<seed>` or `import:<checkpoint>`.
    #[arg(long)]
    pub backbone: Option<BackboneSpec>,
    #[arg(long)]
    pub backbone_width: Option<usize>,
    #[arg(long)]
    pub prompt_backbone_width: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Recover,
    Disc,
}

pub fn load_train_config(o: &TrainOverrides, stage: Stage) -> anyhow::Result<TrainConfig> {
    let mut cfg: TrainConfig = match &o.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.epochs {
        match stage {
            Stage::Recover => cfg.recover_epochs = v,
            Stage::Disc => cfg.disc_epochs = v,
        }
    }
    if let Some(v) = o.lr {
        match stage {
            Stage::Recover => cfg.recover_lr = v,
            Stage::Disc => cfg.disc_lr = v,
        }
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = &o.decay_marks {
        cfg.decay_marks = v.clone();
    }
    if let Some(v) = o.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = &o.backbone {
        cfg.backbone = v.clone();
    }
    if let Some(v) = o.backbone_width {
        cfg.backbone_width = v;
    }
    if let Some(v) = o.prompt_backbone_width {
        cfg.prompt_backbone_width = v;
    }
    Ok(cfg)
}

/// Flags only meaningful for the recovery stage.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct RecoverOverrides {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub lambda_m: Option<f32>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub cell: Option<usize>,
    #[arg(long)]
    pub msgms_scales: Option<usize>,
}

impl RecoverOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.lambda_m {
            cfg.lambda_m = v;
        }
        if let Some(v) = self.bins {
            cfg.hog.bins = v;
        }
        if let Some(v) = self.cell {
            cfg.hog.cell = v;
        }
        if let Some(v) = self.msgms_scales {
            cfg.msgms_scales = v;
        }
    }
}

/// Flags only meaningful for the discrimination stage.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct DiscOverrides {
    #[arg(long)]
    pub lambda_s: Option<f32>,
    /// Softmax axis of the self-correlation: channel or spatial.
    #[arg(long)]
    pub sc_axis: Option<SoftmaxAxis>,
}

impl DiscOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.lambda_s {
            cfg.lambda_s = v;
        }
        if let Some(v) = self.sc_axis {
            cfg.sc_axis = v;
        }
    }
}
