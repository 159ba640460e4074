use std::path::PathBuf;

use anyhow::Context;
use redi_core::dataset::{generate_synthetic, DefectKind, SynthSpec, TextureKind};

use crate::config::read_json;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Output root; the corpus goes to `<out>/<category>`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test_normal: Option<usize>,
    #[arg(long)]
    pub n_test_anomalous: Option<usize>,
    #[arg(long)]
    pub texture: Option<TextureKind>,
    /// Comma-separated subset of patch, scratch, hole.
    #[arg(long, value_delimiter = ',')]
    pub defects: Option<Vec<DefectKind>>,
    /// Smallest defect area as a fraction of the image.
    #[arg(long)]
    pub min_area: Option<f32>,
    /// Largest defect area as a fraction of the image.
    #[arg(long)]
    pub max_area: Option<f32>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$( if let Some(v) = a.$f.clone() { spec.$f = v; } )*};
    }
    set!(seed, category, image_size, n_train, n_test_normal, n_test_anomalous, texture, defects, min_area, max_area);
    spec.validate()?;
    let index = generate_synthetic(&spec, &a.out)
        .with_context(|| format!("generating corpus under {}", a.out.display()))?;
    println!(
        "wrote {} train and {} test images to {}",
        index.train.len(),
        index.test.len(),
        index.root.join(&index.category).display()
    );
    Ok(())
}
