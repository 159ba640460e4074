use std::path::PathBuf;

use anyhow::bail;
use redi_core::recover::Variant;
use redi_core::scoring::{evaluate, EvalOptions};

use super::infer::{load_pipeline, MapArgs};
use super::train::CorpusArgs;
use crate::output::{write_json, write_map};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-image heatmaps and raw maps into this directory.
    #[arg(long)]
    pub dump_maps: Option<PathBuf>,
    /// Average pixel metrics per image instead of pooling all pixels.
    #[arg(long)]
    pub per_image_seg: bool,
    /// Fail unless the model's recovery stage is this variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = redi_core::scoring::DEFAULT_FPR_LIMIT)]
    pub fpr_limit: f64,
    #[arg(long, default_value_t = redi_core::scoring::DEFAULT_THRESHOLDS)]
    pub pro_thresholds: usize,
    #[command(flatten)]
    pub map: MapArgs,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let pipeline = load_pipeline(&a.model, &a.map)?;
    if let Some(v) = a.variant {
        match &pipeline.recover {
            Some(r) if r.model.arch.variant == v => {}
            Some(r) => bail!("model was trained with variant {}, not {v}", r.model.arch.variant),
            None => bail!("model has no recovery stage, so it is not variant {v}"),
        }
    }
    let index = a.corpus.load()?;
    let opts = EvalOptions {
        per_image_seg: a.per_image_seg,
        fpr_limit: a.fpr_limit,
        pro_thresholds: a.pro_thresholds,
    };
    let (report, scored) = evaluate(&pipeline, &index, pipeline.image_size, &opts)?;
    if let Some(dir) = &a.dump_maps {
        for s in &scored {
            write_map(&s.map.scores, &dir.join(s.id.replace('/', "_")))?;
        }
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
