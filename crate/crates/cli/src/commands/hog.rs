use std::path::PathBuf;

use redi_core::dataset::{load_png, save_png};
use redi_core::descriptors::{render_hog_image, to_gray, HogConfig};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub bins: usize,
    #[arg(long, default_value_t = 8)]
    pub cell: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let cfg = HogConfig {
        bins: a.bins,
        cell: a.cell,
    };
    cfg.validate()?;
    let image = to_gray(&load_png(&a.input)?)?;
    save_png(&render_hog_image(&image, &cfg)?, &a.out)?;
    Ok(())
}
