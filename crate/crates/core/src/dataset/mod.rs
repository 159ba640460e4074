//! Image I/O, MVTec-style corpus ingestion and the seeded synthetic
//! defect generator.

mod io;
mod mvtec;
mod synth;

pub use io::{load_png, save_png, save_png_gray_bytes};
pub use mvtec::{load_mvtec_layout, CorpusIndex, Label, Sample, SampleRef};
pub use synth::{generate_synthetic, synthesize_sample, DefectKind, SynthSample, SynthSpec, TextureKind};

use crate::autodiff::kernels;
use crate::tensor::Tensor;

/// Bilinear resize, align-corners false (same convention as the
/// differentiable upsample).
pub fn resize(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = image.shape();
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    let data = kernels::resize_planes(image.data(), n * c, h, w, out_h, out_w);
    Tensor::new([n, c, out_h, out_w], data).expect("resize shape")
}
