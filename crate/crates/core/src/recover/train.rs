use serde::{Deserialize, Serialize};

use super::{iihp_input, imi_input, recover_loss, PromptPool, RecoverModel, Variant, RECOVER_PREFIX};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::descriptors::{render_hog_image, HogConfig};
use crate::discriminate::{Backbone, BackboneSource};
use crate::par;
use crate::tensor::Tensor;
use crate::train::{self, History, Schedule};
use crate::{Error, Result};

const POOL_PREFIX: &str = "pool.";

/// Everything needed to recover an image at inference time.
#[derive(Clone, Debug)]
pub struct TrainedRecover {
    pub model: RecoverModel,
    /// Extractor used for prompt selection.
    pub backbone: Backbone,
    /// Present for the hip variant.
    pub pool: Option<PromptPool>,
    pub hog: HogConfig,
    pub image_size: usize,
}

#[derive(Serialize, Deserialize)]
struct RecoverMeta {
    variant: Variant,
    widths: Vec<usize>,
    hog: HogConfig,
    image_size: usize,
    pool_ids: Vec<String>,
}

fn stack(items: &[Tensor], idx: impl Iterator<Item = usize>) -> Tensor {
    let refs: Vec<&Tensor> = idx.map(|i| &items[i]).collect();
    Tensor::stack(&refs).expect("same-shaped images")
}

impl TrainedRecover {
    /// Recover one `(1, 1, S, S)` grayscale image. `exclude` names a pool
    /// entry that may not serve as its own prompt.
    pub fn recover(&self, image: &Tensor, exclude: Option<&str>) -> Result<Tensor> {
        match self.model.arch.variant {
            Variant::Hip => {
                let pool = self
                    .pool
                    .as_ref()
                    .ok_or_else(|| Error::Checkpoint("hip model without a prompt pool".into()))?;
                let hog = render_hog_image(image, &self.hog)?;
                let desc = self.backbone.descriptors(image)?;
                let (i, _) = pool.select(&desc[0], exclude)?;
                self.model.hip_forward(&hog, &pool.images[i])
            }
            // Inference uses an all-ones mask, so the input is the image.
            Variant::Iihp | Variant::Imi => self.model.forward_single(image),
        }
    }

    /// Recover a list of images in parallel; output order follows input.
    pub fn recover_all(&self, images: &[Tensor], ids: Option<&[String]>) -> Result<Vec<Tensor>> {
        par::try_map_indexed(images.len(), |i| {
            self.recover(&images[i], ids.map(|v| v[i].as_str()))
        })
    }

    /// Model, prompt backbone and pool images. The returned metadata is a
    /// JSON object callers may extend.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = RecoverMeta {
            variant: self.model.arch.variant,
            widths: self.model.arch.widths.clone(),
            hog: self.hog,
            image_size: self.image_size,
            pool_ids: self.pool.as_ref().map(|p| p.ids.clone()).unwrap_or_default(),
        };
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "kind": "recover",
            "recover": serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?,
        }));
        ckpt.extend(self.model.named_tensors());
        ckpt.extend(self.backbone.named_tensors());
        if let Some(pool) = &self.pool {
            for (i, img) in pool.images.iter().enumerate() {
                ckpt.push(format!("{POOL_PREFIX}{i}"), img.clone());
            }
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<TrainedRecover> {
        if ckpt.metadata.get("kind").and_then(|k| k.as_str()) != Some("recover") {
            return Err(Error::Checkpoint("not a recover checkpoint".into()));
        }
        let meta: RecoverMeta = serde_json::from_value(ckpt.metadata["recover"].clone())
            .map_err(|e| Error::Checkpoint(format!("recover metadata: {e}")))?;
        let mut model = RecoverModel::new(meta.variant, &meta.widths, 0);
        model.params.load(&ckpt.tensors, RECOVER_PREFIX)?;
        let backbone = Backbone::from_checkpoint(ckpt, BackboneSource::Seeded(0))?;
        let pool = if meta.variant == Variant::Hip {
            let images = (0..meta.pool_ids.len())
                .map(|i| {
                    let key = format!("{POOL_PREFIX}{i}");
                    ckpt.get(&key)
                        .cloned()
                        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{key}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(PromptPool::build(&backbone, meta.pool_ids, images)?)
        } else {
            None
        };
        Ok(TrainedRecover {
            model,
            backbone,
            pool,
            hog: meta.hog,
            image_size: meta.image_size,
        })
    }
}

/// Train a recovery network on normal images, each `(1, 1, S, S)` with
/// `S = cfg.image_size`, paired with unique ids.
pub fn train_recover(ids: &[String], images: &[Tensor], cfg: &TrainConfig) -> Result<(TrainedRecover, History)> {
    cfg.validate()?;
    if ids.len() != images.len() {
        return Err(Error::invalid("ids and images differ in length"));
    }
    if images.is_empty() {
        return Err(Error::Corpus("training split is empty".into()));
    }
    let s = cfg.image_size;
    if let Some(bad) = images.iter().find(|t| t.shape() != [1, 1, s, s]) {
        return Err(Error::Shape {
            op: "train_recover",
            lhs: vec![1, 1, s, s],
            rhs: bad.shape().to_vec(),
        });
    }
    let backbone = Backbone::from_spec(&cfg.backbone, cfg.prompt_backbone_width)?;
    if let BackboneSource::Imported(_) = backbone.source() {
        log::info!("prompt backbone imported, width {}", backbone.width());
    }
    let hogs = par::try_map_indexed(images.len(), |i| render_hog_image(&images[i], &cfg.hog))?;
    let (pool, prompts) = if cfg.variant == Variant::Hip {
        if images.len() < 2 {
            return Err(Error::Corpus("hip training needs at least two images".into()));
        }
        let pool = PromptPool::build(&backbone, ids.to_vec(), images.to_vec())?;
        let prompts = (0..images.len())
            .map(|i| pool.select(&pool.descriptors[i], Some(&ids[i])).map(|(j, _)| j))
            .collect::<Result<Vec<_>>>()?;
        (Some(pool), prompts)
    } else {
        (None, Vec::new())
    };
    let mut model = RecoverModel::new(cfg.variant, &cfg.recover_widths, cfg.seed);
    let arch = model.arch.clone();
    let sched = Schedule {
        cfg,
        epochs: cfg.recover_epochs,
        lr: cfg.recover_lr,
        seed: cfg.seed,
        components: ["l2", "msgms"],
    };
    let history = train::run(&mut model.params, images.len(), &sched, |g, p, idx, rng| {
        let target = stack(images, idx.iter().copied());
        let y = match arch.variant {
            Variant::Hip => {
                let hog = g.constant(stack(&hogs, idx.iter().copied()));
                let prompt = g.constant(stack(images, idx.iter().map(|&i| prompts[i])));
                arch.forward_graph(g, p, hog, Some(prompt))?
            }
            Variant::Imi | Variant::Iihp => {
                let mut inputs = Vec::with_capacity(idx.len());
                for &i in idx {
                    let m = cfg.mask.generate(rng, s, s);
                    inputs.push(if arch.variant == Variant::Imi {
                        imi_input(&images[i], &m)?
                    } else {
                        iihp_input(&images[i], &hogs[i], &m)?
                    });
                }
                let x = g.constant(stack(&inputs, 0..inputs.len()));
                arch.forward_graph(g, p, x, None)?
            }
        };
        let x = g.constant(target);
        let l = recover_loss(g, y, x, cfg.lambda_m, cfg.msgms_scales)?;
        Ok((l.total, [l.l2, l.msgms]))
    })?;
    Ok((
        TrainedRecover {
            model,
            backbone,
            pool,
            hog: cfg.hog,
            image_size: s,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn corpus(n: usize) -> (Vec<String>, Vec<Tensor>) {
        let ids = (0..n).map(|i| format!("train/good/{i:03}")).collect();
        let images = (0..n)
            .map(|i| {
                let mut rng = SplitMix64::new(i as u64);
                let p = rng.uniform(4.0, 6.0);
                Tensor::from_fn([1, 1, 32, 32], |_, _, _, x| 0.5 + 0.2 * (x as f32 * 6.28 / p).sin())
            })
            .collect();
        (ids, images)
    }

    fn cfg(variant: Variant) -> TrainConfig {
        TrainConfig {
            image_size: 32,
            recover_epochs: 2,
            batch_size: 4,
            variant,
            recover_widths: vec![4, 8],
            backbone_width: 4,
            prompt_backbone_width: 4,
            hog: HogConfig { bins: 9, cell: 4 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_init() {
        let (ids, images) = corpus(5);
        let c = TrainConfig {
            recover_lr: 0.0,
            ..cfg(Variant::Hip)
        };
        let init = RecoverModel::new(Variant::Hip, &c.recover_widths, c.seed).params.checksum();
        let (t, _) = train_recover(&ids, &images, &c).unwrap();
        assert_eq!(t.model.params.checksum(), init);
    }

    #[test]
    fn deterministic_for_each_variant() {
        let (ids, images) = corpus(5);
        for v in [Variant::Hip, Variant::Iihp, Variant::Imi] {
            let (a, ha) = train_recover(&ids, &images, &cfg(v)).unwrap();
            let (b, hb) = train_recover(&ids, &images, &cfg(v)).unwrap();
            assert_eq!(a.model.params.checksum(), b.model.params.checksum());
            assert_eq!(ha, hb);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (ids, images) = corpus(4);
        let (t, _) = train_recover(&ids, &images, &cfg(Variant::Hip)).unwrap();
        let ckpt = Checkpoint::from_bytes(&t.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap();
        let back = TrainedRecover::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back.model.params.checksum(), t.model.params.checksum());
        assert_eq!(back.backbone.checksum(), t.backbone.checksum());
        assert_eq!(
            back.recover(&images[0], None).unwrap(),
            t.recover(&images[0], None).unwrap()
        );
        assert_eq!(ckpt.with_prefix(crate::discriminate::BACKBONE_PREFIX).len(), 8);
    }

    #[test]
    fn hip_never_prompts_with_itself() {
        let (ids, images) = corpus(6);
        let (t, _) = train_recover(&ids, &images, &cfg(Variant::Hip)).unwrap();
        let pool = t.pool.as_ref().unwrap();
        for i in 0..ids.len() {
            let (j, _) = pool.select(&pool.descriptors[i], Some(&ids[i])).unwrap();
            assert_ne!(j, i);
        }
    }
}
