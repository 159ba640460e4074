use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use redi_core::checkpoint::Checkpoint;
use redi_core::dataset::load_png;
use redi_core::par;
use redi_core::scoring::{Pipeline, Scorer};

use crate::output::write_map;

/// Anomaly-map options shared by `infer` and `eval`.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct MapArgs {
    /// Gaussian smoothing sigma in pixels (default 0: none).
    #[arg(long)]
    pub sigma: Option<f32>,
    /// Disable smoothing; same as `--sigma 0`.
    #[arg(long, conflicts_with = "sigma")]
    pub no_smooth: bool,
    /// Comma-separated per-level weights, finest level first.
    #[arg(long, value_delimiter = ',')]
    pub layer_weights: Option<Vec<f32>>,
}

impl MapArgs {
    pub fn apply(&self, p: &mut Pipeline) -> anyhow::Result<()> {
        if let Some(s) = self.sigma {
            p.map.sigma = s;
        }
        if self.no_smooth {
            p.map.sigma = 0.0;
        }
        if let Some(w) = &self.layer_weights {
            p.map.layer_weights = w.clone();
        }
        p.map.weights(p.backbone.levels())?;
        Ok(())
    }
}

pub fn load_pipeline(path: &Path, map: &MapArgs) -> anyhow::Result<Pipeline> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let mut p = Pipeline::from_checkpoint(&ckpt)?;
    map.apply(&mut p)?;
    Ok(p)
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Checkpoint written by `train-disc`.
    #[arg(long)]
    pub model: PathBuf,
    /// Image(s) to score; several are scored in parallel.
    #[arg(long, required = true, num_args = 1..)]
    pub image: Vec<PathBuf>,
    /// Directory for `<stem>_map.png` and `<stem>_map.f32`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub map: MapArgs,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let pipeline = load_pipeline(&a.model, &a.map)?;
    let mut stems = std::collections::HashSet::new();
    for p in &a.image {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if !stems.insert(stem.clone()) {
            bail!("two input images share the file stem '{stem}'");
        }
    }
    let maps = par::try_map_indexed(a.image.len(), |i| {
        let image = load_png(&a.image[i])?;
        pipeline.score(&image)
    })?;
    for (path, map) in a.image.iter().zip(&maps) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        write_map(&map.scores, &a.out_dir.join(format!("{stem}_map")))?;
        if a.image.len() == 1 {
            println!("score={:.6}", map.image_score);
        } else {
            println!("score={:.6} {}", map.image_score, path.display());
        }
    }
    Ok(())
}
