use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use redi_core::checkpoint::Checkpoint;
use redi_core::dataset::{load_mvtec_layout, CorpusIndex};
use redi_core::descriptors::to_gray;
use redi_core::par;
use redi_core::recover::{train_recover, TrainedRecover};
use redi_core::scoring::Pipeline;
use redi_core::train::History;
use redi_core::Tensor;

use crate::config::{load_train_config, DiscOverrides, RecoverOverrides, Stage, TrainOverrides};
use crate::output::{stamp, write_json};

#[derive(clap::Args, Debug)]
pub struct CorpusArgs {
    /// Corpus root in MVTec layout.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "synth")]
    pub category: String,
}

impl CorpusArgs {
    pub fn load(&self) -> anyhow::Result<CorpusIndex> {
        let dir = self.data.join(&self.category);
        if !dir.is_dir() {
            bail!("corpus not found: {}", dir.display());
        }
        Ok(load_mvtec_layout(&self.data, &self.category)?)
    }
}

#[derive(clap::Args, Debug)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Checkpoint to write; the loss history goes to `<out>.history.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub recover: RecoverOverrides,
    /// Zero the creation timestamp so reruns are byte-identical.
    #[arg(long)]
    pub reproducible: bool,
}

#[derive(clap::Args, Debug)]
pub struct DiscArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Recovery checkpoint, or `none` to feed the query itself to the FRB.
    #[arg(long)]
    pub recover: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub disc: DiscOverrides,
    #[arg(long)]
    pub reproducible: bool,
}

/// Train images as grayscale `(1, 1, S, S)` tensors with their ids.
fn train_split(index: &CorpusIndex, size: usize) -> anyhow::Result<(Vec<String>, Vec<Tensor>)> {
    let images = par::try_map_indexed(index.train.len(), |i| {
        let s = index.train[i].load(Some(size))?;
        to_gray(&s.image)
    })?;
    let ids = index.train.iter().map(|r| r.id.clone()).collect();
    Ok((ids, images))
}

fn history_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".history.json");
    s.into()
}

fn finish(mut ckpt: Checkpoint, cfg: &impl serde::Serialize, history: &History, out: &Path, repro: bool) -> anyhow::Result<()> {
    stamp(&mut ckpt, cfg, repro)?;
    ckpt.save(out)?;
    write_json(&history_path(out), history)?;
    println!(
        "loss {:.6} -> {:.6} over {} epochs; wrote {}",
        history.initial.loss,
        history.final_pass.loss,
        history.epochs.len(),
        out.display()
    );
    Ok(())
}

pub fn run_recover(a: RecoverArgs) -> anyhow::Result<()> {
    let mut cfg = load_train_config(&a.train, Stage::Recover)?;
    a.recover.apply(&mut cfg);
    cfg.validate()?;
    let index = a.corpus.load()?;
    let (ids, images) = train_split(&index, cfg.image_size)?;
    let (model, history) = train_recover(&ids, &images, &cfg)?;
    finish(model.to_checkpoint()?, &cfg, &history, &a.out, a.reproducible)
}

pub fn run_disc(a: DiscArgs) -> anyhow::Result<()> {
    let mut cfg = load_train_config(&a.train, Stage::Disc)?;
    a.disc.apply(&mut cfg);
    let recover = match a.recover.as_str() {
        "none" => None,
        path => {
            let ckpt = Checkpoint::load(Path::new(path)).with_context(|| format!("loading recover checkpoint {path}"))?;
            Some(TrainedRecover::from_checkpoint(&ckpt)?)
        }
    };
    if let Some(r) = &recover {
        if r.image_size != cfg.image_size {
            if a.train.image_size.is_some() {
                bail!(
                    "--image-size {} conflicts with the recover checkpoint's {}",
                    cfg.image_size,
                    r.image_size
                );
            }
            cfg.image_size = r.image_size;
        }
    }
    cfg.validate()?;
    let index = a.corpus.load()?;
    let (ids, images) = train_split(&index, cfg.image_size)?;
    let (pipeline, history) = Pipeline::train(&ids, &images, recover, &cfg)?;
    let mut ckpt = pipeline.to_checkpoint()?;
    if let Some(obj) = ckpt.metadata.as_object_mut() {
        obj.insert("recover_source".into(), a.recover.clone().into());
    }
    finish(ckpt, &cfg, &history, &a.out, a.reproducible)
}
