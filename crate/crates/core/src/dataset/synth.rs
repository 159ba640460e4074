use std::f32::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_mvtec_layout, save_png, save_png_gray_bytes, CorpusIndex, Label};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Bounds every generated defect area must respect, as fractions of the
/// image area.
pub const AREA_BOUNDS: (f32, f32) = (0.01, 0.15);

const TEXTURE_LO: f32 = 0.25;
const TEXTURE_HI: f32 = 0.75;
const MAX_ATTEMPTS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    Stripes,
    Checker,
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Patch,
    Scratch,
    Hole,
}

impl DefectKind {
    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Patch => "patch",
            DefectKind::Scratch => "scratch",
            DefectKind::Hole => "hole",
        }
    }
}

impl std::str::FromStr for TextureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(TextureKind::Stripes),
            "checker" => Ok(TextureKind::Checker),
            "blobs" => Ok(TextureKind::Blobs),
            _ => Err(Error::invalid(format!("unknown texture '{s}' (stripes|checker|blobs)"))),
        }
    }
}

impl std::str::FromStr for DefectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch" => Ok(DefectKind::Patch),
            "scratch" => Ok(DefectKind::Scratch),
            "hole" => Ok(DefectKind::Hole),
            _ => Err(Error::invalid(format!("unknown defect '{s}' (patch|scratch|hole)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub category: String,
    pub image_size: usize,
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    pub texture: TextureKind,
    pub defects: Vec<DefectKind>,
    /// Defect area bounds as fractions of the image.
    pub min_area: f32,
    pub max_area: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            category: "synth".into(),
            image_size: 64,
            n_train: 200,
            n_test_normal: 30,
            n_test_anomalous: 30,
            texture: TextureKind::Stripes,
            defects: vec![DefectKind::Patch, DefectKind::Scratch, DefectKind::Hole],
            min_area: 0.02,
            max_area: 0.10,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || self.n_train == 0 || self.n_test_normal + self.n_test_anomalous == 0 {
            return Err(Error::invalid(
                "image_size must be >= 16 and n_train and the test split must be non-empty",
            ));
        }
        let (lo, hi) = AREA_BOUNDS;
        if !(self.min_area >= lo && self.max_area <= hi && self.min_area <= self.max_area) {
            return Err(Error::invalid(format!(
                "defect area range [{}, {}] must lie within [{lo}, {hi}]",
                self.min_area, self.max_area
            )));
        }
        if self.n_test_anomalous > 0 && self.defects.is_empty() {
            return Err(Error::invalid("at least one defect kind is required"));
        }
        if self.category.is_empty() || self.category.contains(['/', '\\']) {
            return Err(Error::invalid(format!("bad category name '{}'", self.category)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub id: String,
    pub label: Label,
    pub defect: Option<DefectKind>,
    /// `(1, 1, S, S)` in [0, 1].
    pub image: Tensor,
    /// Defect mask, present for anomalous samples.
    pub mask: Option<Tensor>,
}

#[derive(Clone, Copy)]
enum Split {
    Train = 0,
    TestNormal = 1,
    TestAnomalous = 2,
}

struct Texture {
    kind: TextureKind,
    period: f32,
    cos: f32,
    sin: f32,
    phase_x: f32,
    phase_y: f32,
    blobs: Vec<(f32, f32, f32, f32)>,
}

impl Texture {
    fn sample(kind: TextureKind, size: usize, rng: &mut SplitMix64) -> Texture {
        let angle = rng.uniform(-12.0, 12.0) * PI / 180.0;
        let period = match kind {
            TextureKind::Stripes => rng.uniform(6.0, 10.0),
            TextureKind::Checker => rng.uniform(10.0, 14.0),
            TextureKind::Blobs => 0.0,
        };
        let blobs = if kind == TextureKind::Blobs {
            let s = size as f32;
            (0..10)
                .map(|_| {
                    let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
                    (rng.uniform(0.0, s), rng.uniform(0.0, s), rng.uniform(0.08, 0.15) * s, sign)
                })
                .collect()
        } else {
            Vec::new()
        };
        Texture {
            kind,
            period,
            cos: angle.cos(),
            sin: angle.sin(),
            phase_x: rng.uniform(0.0, 2.0 * PI),
            phase_y: rng.uniform(0.0, 2.0 * PI),
            blobs,
        }
    }

    fn value(&self, y: f32, x: f32) -> f32 {
        let u = x * self.cos + y * self.sin;
        let v = -x * self.sin + y * self.cos;
        let w = 2.0 * PI / self.period.max(1.0);
        let t = match self.kind {
            TextureKind::Stripes => (u * w + self.phase_x).sin(),
            TextureKind::Checker => {
                let s = (u * w + self.phase_x).sin() * (v * w + self.phase_y).sin();
                (4.0 * s).tanh()
            }
            TextureKind::Blobs => {
                let s: f32 = self
                    .blobs
                    .iter()
                    .map(|&(by, bx, r, sign)| sign * (-((y - by).powi(2) + (x - bx).powi(2)) / (2.0 * r * r)).exp())
                    .sum();
                s.tanh()
            }
        };
        0.5 + 0.2 * t
    }
}

fn render_texture(kind: TextureKind, size: usize, rng: &mut SplitMix64) -> Tensor {
    let tex = Texture::sample(kind, size, rng);
    Tensor::from_fn([1, 1, size, size], |_, _, y, x| {
        let noise = rng.uniform(-0.03, 0.03);
        (tex.value(y as f32, x as f32) + noise).clamp(TEXTURE_LO, TEXTURE_HI)
    })
}

fn dist_to_segment(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn defect_region(kind: DefectKind, size: usize, rng: &mut SplitMix64) -> Vec<bool> {
    let s = size as f32;
    let mut region = vec![false; size * size];
    match kind {
        DefectKind::Patch => {
            let h = rng.uniform(0.12, 0.38) * s;
            let w = rng.uniform(0.12, 0.38) * s;
            let y0 = rng.uniform(0.0, s - h);
            let x0 = rng.uniform(0.0, s - w);
            for y in 0..size {
                for x in 0..size {
                    let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
                    region[y * size + x] = fy >= y0 && fy < y0 + h && fx >= x0 && fx < x0 + w;
                }
            }
        }
        DefectKind::Hole => {
            let r = rng.uniform(0.07, 0.2) * s;
            let cy = rng.uniform(r, s - r);
            let cx = rng.uniform(r, s - r);
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2)).sqrt();
                    region[y * size + x] = d <= r;
                }
            }
        }
        DefectKind::Scratch => {
            let segments = 2 + rng.below(3);
            let mut pts = vec![(rng.uniform(0.15, 0.85) * s, rng.uniform(0.15, 0.85) * s)];
            let mut heading = rng.uniform(0.0, 2.0 * PI);
            for _ in 0..segments {
                heading += rng.uniform(-0.8, 0.8);
                let len = rng.uniform(0.15, 0.35) * s;
                let last = *pts.last().expect("start point");
                let next = (
                    (last.0 + len * heading.sin()).clamp(1.0, s - 1.0),
                    (last.1 + len * heading.cos()).clamp(1.0, s - 1.0),
                );
                pts.push(next);
            }
            for y in 0..size {
                for x in 0..size {
                    let p = (y as f32 + 0.5, x as f32 + 0.5);
                    region[y * size + x] = pts.windows(2).any(|ab| dist_to_segment(p, ab[0], ab[1]) <= 1.0);
                }
            }
        }
    }
    region
}

fn apply_defect(image: &mut Tensor, region: &[bool], kind: DefectKind, rng: &mut SplitMix64) {
    let shift = rng.uniform(0.3, 0.4);
    let brighten = rng.next_u64() & 1 == 0;
    for (v, &inside) in image.data_mut().iter_mut().zip(region) {
        if !inside {
            continue;
        }
        *v = match kind {
            DefectKind::Patch => {
                let up = (*v + shift).min(1.0);
                let down = (*v - shift).max(0.0);
                if brighten {
                    up
                } else {
                    down
                }
            }
            DefectKind::Scratch => {
                if *v < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            DefectKind::Hole => 0.0,
        };
    }
}

fn stream(split: Split, index: usize) -> u64 {
    ((split as u64) << 32) | index as u64
}

/// Generate one sample. `split` is 0 (train), 1 (normal test) or
/// 2 (anomalous test); `index` counts within that split.
pub fn synthesize_sample(spec: &SynthSpec, split: u8, index: usize) -> Result<SynthSample> {
    spec.validate()?;
    let split = match split {
        0 => Split::Train,
        1 => Split::TestNormal,
        2 => Split::TestAnomalous,
        _ => return Err(Error::invalid(format!("unknown split {split}"))),
    };
    let size = spec.image_size;
    let mut rng = SplitMix64::derive(spec.seed, stream(split, index));
    let mut image = render_texture(spec.texture, size, &mut rng);
    let (id, label, defect, mask) = match split {
        Split::Train => (format!("train/good/{index:03}"), Label::Normal, None, None),
        Split::TestNormal => (format!("test/good/{index:03}"), Label::Normal, None, None),
        Split::TestAnomalous => {
            let kind = spec.defects[index % spec.defects.len()];
            let stem = index / spec.defects.len();
            let area_px = (size * size) as f32;
            let (lo, hi) = (spec.min_area * area_px, spec.max_area * area_px);
            let mut region = None;
            for _ in 0..MAX_ATTEMPTS {
                let r = defect_region(kind, size, &mut rng);
                let count = r.iter().filter(|&&b| b).count() as f32;
                if count >= lo && count <= hi {
                    region = Some(r);
                    break;
                }
            }
            let region = region.ok_or_else(|| {
                Error::invalid(format!(
                    "could not place a {} defect with area in [{}, {}]",
                    kind.name(),
                    spec.min_area,
                    spec.max_area
                ))
            })?;
            apply_defect(&mut image, &region, kind, &mut rng);
            let mask = Tensor::new(
                [1, 1, size, size],
                region.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            )?;
            (format!("test/{}/{stem:03}", kind.name()), Label::Anomalous, Some(kind), Some(mask))
        }
    };
    Ok(SynthSample {
        id,
        label,
        defect,
        image,
        mask,
    })
}

/// Materialize the corpus as `<out>/<category>/...` in the MVTec layout and
/// return its index.
pub fn generate_synthetic(spec: &SynthSpec, out: &Path) -> Result<CorpusIndex> {
    spec.validate()?;
    let base = out.join(&spec.category);
    let jobs: Vec<(u8, usize)> = (0..spec.n_train)
        .map(|i| (0, i))
        .chain((0..spec.n_test_normal).map(|i| (1, i)))
        .chain((0..spec.n_test_anomalous).map(|i| (2, i)))
        .collect();
    crate::par::try_map_indexed(jobs.len(), |j| {
        let (split, i) = jobs[j];
        let s = synthesize_sample(spec, split, i)?;
        save_png(&s.image, &base.join(format!("{}.png", s.id)))?;
        if let (Some(mask), Some(kind)) = (&s.mask, s.defect) {
            let stem = s.id.rsplit('/').next().expect("id stem");
            let bytes: Vec<u8> = mask.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
            let path = base.join("ground_truth").join(kind.name()).join(format!("{stem}_mask.png"));
            save_png_gray_bytes(&bytes, spec.image_size, spec.image_size, &path)?;
        }
        Ok::<_, Error>(())
    })?;
    load_mvtec_layout(out, &spec.category)
}
