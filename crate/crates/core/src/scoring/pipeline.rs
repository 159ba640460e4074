use serde::{Deserialize, Serialize};

use super::eval::Scorer;
use super::map::{anomaly_map, AnomalyMap, MapConfig};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::resize;
use crate::descriptors::to_gray;
use crate::discriminate::{train_discriminate, Backbone, BackboneSource, DiscData, Frb};
use crate::recover::TrainedRecover;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::train::History;
use crate::{Error, Result};

/// Tensors of the embedded recovery stage are stored under this prefix.
const STAGE_PREFIX: &str = "stage1.";
const FRB_INIT_STREAM: u64 = 0x4652_4200;

/// The full inference chain: optional recovery, frozen backbone, FRB and
/// the anomaly map. Without a recovery stage the FRB sees the query itself.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub recover: Option<TrainedRecover>,
    pub backbone: Backbone,
    pub frb: Frb,
    pub map: MapConfig,
    pub image_size: usize,
}

#[derive(Serialize, Deserialize)]
struct PipelineMeta {
    image_size: usize,
    frb_widths: Vec<usize>,
    uses_recover: bool,
    map: MapConfig,
}

impl Pipeline {
    /// Train the discrimination stage on normal images `(1, 1, S, S)`.
    /// Each training image is recovered with itself excluded from the prompt
    /// pool, as it would be at test time for an unseen image.
    pub fn train(
        ids: &[String],
        images: &[Tensor],
        recover: Option<TrainedRecover>,
        cfg: &TrainConfig,
    ) -> Result<(Pipeline, History)> {
        cfg.validate()?;
        if ids.len() != images.len() {
            return Err(Error::invalid("ids and images differ in length"));
        }
        if images.is_empty() {
            return Err(Error::Corpus("training split is empty".into()));
        }
        if let Some(r) = &recover {
            if r.image_size != cfg.image_size {
                return Err(Error::invalid(format!(
                    "recover checkpoint works at {}px, config asks for {}px",
                    r.image_size, cfg.image_size
                )));
            }
        }
        let backbone = Backbone::from_spec(&cfg.backbone, cfg.backbone_width)?;
        let refs: Vec<&Tensor> = images.iter().collect();
        let originals = Tensor::stack(&refs)?;
        let recovered = match &recover {
            Some(r) => {
                let out = r.recover_all(images, Some(ids))?;
                let refs: Vec<&Tensor> = out.iter().collect();
                Tensor::stack(&refs)?
            }
            None => originals.clone(),
        };
        let data = DiscData::new(&backbone, &originals, &recovered)?;
        let seed = SplitMix64::derive(cfg.seed, FRB_INIT_STREAM).next_u64();
        let frb = Frb::new(&backbone.widths(), seed);
        let (frb, history) = train_discriminate(&data, frb, cfg)?;
        Ok((
            Pipeline {
                recover,
                backbone,
                frb,
                map: MapConfig::default(),
                image_size: cfg.image_size,
            },
            history,
        ))
    }

    /// Grayscale and resize to the working resolution.
    pub fn prepare(&self, image: &Tensor) -> Result<Tensor> {
        let gray = to_gray(image)?;
        if gray.batch() != 1 {
            return Err(Error::invalid(format!("expected one image, got {}", gray.batch())));
        }
        let s = self.image_size;
        Ok(if gray.height() == s && gray.width() == s {
            gray
        } else {
            resize(&gray, s, s)
        })
    }

    /// The image the FRB is fed for a prepared query.
    pub fn recovered(&self, prepared: &Tensor) -> Result<Tensor> {
        match &self.recover {
            Some(r) => r.recover(prepared, None),
            None => Ok(prepared.clone()),
        }
    }

    /// Metadata and tensors. A recovery stage is embedded whole so one file
    /// is enough for inference.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = PipelineMeta {
            image_size: self.image_size,
            frb_widths: self.frb.arch.widths.clone(),
            uses_recover: self.recover.is_some(),
            map: self.map.clone(),
        };
        let mut md = serde_json::Map::new();
        md.insert("kind".into(), "pipeline".into());
        md.insert(
            "pipeline".into(),
            serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        let mut ckpt = Checkpoint::new(serde_json::Value::Null);
        if let Some(r) = &self.recover {
            let inner = r.to_checkpoint()?;
            md.insert("recover".into(), inner.metadata["recover"].clone());
            ckpt.extend(inner.tensors.into_iter().map(|(n, t)| (format!("{STAGE_PREFIX}{n}"), t)));
        }
        ckpt.metadata = serde_json::Value::Object(md);
        ckpt.extend(self.backbone.named_tensors());
        ckpt.extend(self.frb.named_tensors());
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Pipeline> {
        if ckpt.metadata.get("kind").and_then(|k| k.as_str()) != Some("pipeline") {
            return Err(Error::Checkpoint("not a discriminator checkpoint".into()));
        }
        let meta: PipelineMeta = serde_json::from_value(ckpt.metadata["pipeline"].clone())
            .map_err(|e| Error::Checkpoint(format!("pipeline metadata: {e}")))?;
        let recover = if meta.uses_recover {
            let mut inner = Checkpoint::new(serde_json::json!({
                "kind": "recover",
                "recover": ckpt.metadata.get("recover").cloned().unwrap_or_default(),
            }));
            inner.extend(
                ckpt.with_prefix(STAGE_PREFIX)
                    .into_iter()
                    .map(|(n, t)| (n[STAGE_PREFIX.len()..].to_string(), t)),
            );
            Some(TrainedRecover::from_checkpoint(&inner)?)
        } else {
            None
        };
        let backbone = Backbone::from_checkpoint(ckpt, BackboneSource::Seeded(0))?;
        if backbone.widths() != meta.frb_widths {
            return Err(Error::Checkpoint(format!(
                "backbone widths {:?} do not match FRB widths {:?}",
                backbone.widths(),
                meta.frb_widths
            )));
        }
        let mut frb = Frb::new(&meta.frb_widths, 0);
        frb.load(&ckpt.tensors)?;
        Ok(Pipeline {
            recover,
            backbone,
            frb,
            map: meta.map,
            image_size: meta.image_size,
        })
    }
}

impl Scorer for Pipeline {
    fn score(&self, image: &Tensor) -> Result<AnomalyMap> {
        let x = self.prepare(image)?;
        let y = self.recovered(&x)?;
        let fx = self.backbone.extract(&x)?;
        let ry = self.backbone.extract(&y)?;
        let fy = self.frb.forward(&ry)?;
        anomaly_map(&fx, &fy, &self.map, self.image_size, self.image_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recover::{train_recover, Variant};

    fn corpus(n: usize) -> (Vec<String>, Vec<Tensor>) {
        let ids = (0..n).map(|i| format!("train/good/{i:03}")).collect();
        let images = (0..n)
            .map(|i| {
                let p = 5.0 + i as f32 * 0.3;
                Tensor::from_fn([1, 1, 32, 32], |_, _, y, x| 0.5 + 0.2 * ((x + y) as f32 * 6.28 / p).sin())
            })
            .collect();
        (ids, images)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            recover_epochs: 1,
            disc_epochs: 2,
            batch_size: 4,
            image_size: 32,
            backbone_width: 4,
            prompt_backbone_width: 4,
            recover_widths: vec![4, 8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let (ids, images) = corpus(5);
        let (rec, _) = train_recover(&ids, &images, &TrainConfig { variant: Variant::Hip, ..cfg() }).unwrap();
        let (pipe, hist) = Pipeline::train(&ids, &images, Some(rec), &cfg()).unwrap();
        assert_eq!(hist.epochs.len(), 2);
        let back = Pipeline::from_checkpoint(&pipe.to_checkpoint().unwrap()).unwrap();
        let q = images[2].map(|v| 1.0 - v);
        let a = pipe.score(&q).unwrap();
        let b = back.score(&q).unwrap();
        assert_eq!(a, b);
        assert!(a.scores.data().iter().all(|&v| v >= 0.0));
        assert_eq!(a.scores.shape(), [1, 1, 32, 32]);
    }

    #[test]
    fn without_recovery_the_query_is_its_own_reference() {
        let (ids, images) = corpus(4);
        let (pipe, _) = Pipeline::train(&ids, &images, None, &cfg()).unwrap();
        assert!(pipe.recover.is_none());
        let back = Pipeline::from_checkpoint(&pipe.to_checkpoint().unwrap()).unwrap();
        assert!(back.recover.is_none());
        assert_eq!(back.score(&images[0]).unwrap(), pipe.score(&images[0]).unwrap());
    }

    #[test]
    fn recover_checkpoint_is_rejected() {
        let (ids, images) = corpus(3);
        let (rec, _) = train_recover(&ids, &images, &cfg()).unwrap();
        assert!(Pipeline::from_checkpoint(&rec.to_checkpoint().unwrap()).is_err());
    }
}
