use super::{disc_loss, Backbone, FeaturePyramid, Frb};
use crate::autodiff::NodeId;
use crate::config::TrainConfig;
use crate::tensor::Tensor;
use crate::train::{self, History, Schedule};
use crate::{Error, Result};

/// Precomputed reference features `F_X` and recovery-image features `R_Y`
/// of every training image. Both come from the frozen backbone, so they are
/// fixed for the whole run.
#[derive(Clone, Debug)]
pub struct DiscData {
    pub fx: FeaturePyramid,
    pub ry: FeaturePyramid,
}

impl DiscData {
    /// `originals` and `recovered` are `(n, 1, h, w)` batches in the same order.
    pub fn new(backbone: &Backbone, originals: &Tensor, recovered: &Tensor) -> Result<DiscData> {
        if originals.shape() != recovered.shape() {
            return Err(Error::Shape {
                op: "discriminator data",
                lhs: originals.shape().to_vec(),
                rhs: recovered.shape().to_vec(),
            });
        }
        Ok(DiscData {
            fx: backbone.extract(originals)?,
            ry: backbone.extract(recovered)?,
        })
    }

    pub fn len(&self) -> usize {
        self.fx.first().map_or(0, Tensor::batch)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let parts: Vec<Tensor> = idx.iter().map(|&i| t.batch_slice(i, 1)).collect();
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::stack(&refs).expect("same-shaped slices")
}

/// Train the FRB on fixed features; the backbone never changes.
pub fn train_discriminate(data: &DiscData, mut frb: Frb, cfg: &TrainConfig) -> Result<(Frb, History)> {
    cfg.validate()?;
    let arch = frb.arch.clone();
    let sched = Schedule {
        cfg,
        epochs: cfg.disc_epochs,
        lr: cfg.disc_lr,
        seed: cfg.seed,
        components: ["cosine", "self_correlation"],
    };
    let history = train::run(&mut frb.params, data.len(), &sched, |g, p, idx, _rng| {
        let fx: Vec<NodeId> = data.fx.iter().map(|t| g.constant(gather(t, idx))).collect();
        let ry: Vec<NodeId> = data.ry.iter().map(|t| g.constant(gather(t, idx))).collect();
        let fy = arch.forward_graph(g, p, &ry)?;
        let l = disc_loss(g, &fx, &fy, cfg.lambda_s, cfg.sc_axis)?;
        Ok((l.total, [l.cosine, l.self_corr]))
    })?;
    Ok((frb, history))
}
