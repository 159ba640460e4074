//! Minibatch loop shared by both trainable stages.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, AdamWConfig, Bound, Graph, NodeId, ParamStore};
use crate::config::TrainConfig;
use crate::rng::SplitMix64;
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5348_0000;
const BATCH_STREAM: u64 = 0x4241_0000;
const EVAL_STREAM: u64 = 0x4556_0000;

/// Mean loss over one pass, plus its two named components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub loss: f64,
    pub parts: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    #[serde(flatten)]
    pub record: LossRecord,
}

/// Per-epoch training means, bracketed by full passes with the initial and
/// final parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub components: [String; 2],
    pub initial: LossRecord,
    pub epochs: Vec<EpochRecord>,
    #[serde(rename = "final")]
    pub final_pass: LossRecord,
}

impl History {
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_pass.loss / self.initial.loss
    }
}

pub(crate) struct Schedule<'a> {
    pub cfg: &'a TrainConfig,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
    pub components: [&'static str; 2],
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Forward-only pass over all samples in index order.
pub(crate) fn evaluate<F>(store: &ParamStore, n: usize, sched: &Schedule, f: &F) -> Result<LossRecord>
where
    F: Fn(&mut Graph, &Bound<'_>, &[usize], &mut SplitMix64) -> Result<(NodeId, [NodeId; 2])>,
{
    let order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::derive(sched.seed, EVAL_STREAM);
    let mut acc = [0.0f64; 3];
    for idx in batches(&order, sched.cfg.batch_size) {
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let (loss, parts) = f(&mut g, &bound, idx, &mut rng)?;
        let w = idx.len() as f64;
        acc[0] += g.value(loss).item() as f64 * w;
        acc[1] += g.value(parts[0]).item() as f64 * w;
        acc[2] += g.value(parts[1]).item() as f64 * w;
    }
    let n = n as f64;
    Ok(LossRecord {
        loss: acc[0] / n,
        parts: [acc[1] / n, acc[2] / n],
    })
}

/// Shuffled minibatch AdamW training. `f` builds the loss for the samples
/// `idx`; its rng is per batch and may drive stochastic inputs such as masks.
pub(crate) fn run<F>(store: &mut ParamStore, n: usize, sched: &Schedule, f: F) -> Result<History>
where
    F: Fn(&mut Graph, &Bound<'_>, &[usize], &mut SplitMix64) -> Result<(NodeId, [NodeId; 2])>,
{
    if n == 0 {
        return Err(Error::Corpus("training split is empty".into()));
    }
    let initial = evaluate(store, n, sched, &f)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: sched.lr,
            weight_decay: sched.cfg.weight_decay,
            ..AdamWConfig::default()
        },
        store.params(),
    );
    let mut epochs = Vec::with_capacity(sched.epochs);
    for epoch in 0..sched.epochs {
        let lr = sched.cfg.lr_at(sched.lr, epoch, sched.epochs);
        opt.set_lr(lr);
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::derive(sched.seed, SHUFFLE_STREAM + epoch as u64).shuffle(&mut order);
        let mut acc = [0.0f64; 3];
        for (b, idx) in batches(&order, sched.cfg.batch_size).enumerate() {
            let mut rng = SplitMix64::derive(sched.seed, BATCH_STREAM + ((epoch as u64) << 16) + b as u64);
            let mut g = Graph::new();
            let ids = {
                let bound = store.bind(&mut g, true);
                let (loss, parts) = f(&mut g, &bound, idx, &mut rng)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        epoch: epoch + 1,
                        batch: b + 1,
                        value,
                    });
                }
                g.backward(loss)?;
                let w = idx.len() as f64;
                acc[0] += value as f64 * w;
                acc[1] += g.value(parts[0]).item() as f64 * w;
                acc[2] += g.value(parts[1]).item() as f64 * w;
                bound.ids().to_vec()
            };
            store.collect_grads(&g, &ids);
            opt.step(store.params_mut())?;
        }
        let nf = n as f64;
        let record = LossRecord {
            loss: acc[0] / nf,
            parts: [acc[1] / nf, acc[2] / nf],
        };
        log::info!(
            "epoch {}/{} lr {lr:.2e} loss {:.6} ({} {:.6}, {} {:.6})",
            epoch + 1,
            sched.epochs,
            record.loss,
            sched.components[0],
            record.parts[0],
            sched.components[1],
            record.parts[1]
        );
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            record,
        });
    }
    for p in store.params_mut() {
        p.zero_grad();
    }
    let final_pass = evaluate(store, n, sched, &f)?;
    Ok(History {
        components: sched.components.map(String::from),
        initial,
        epochs,
        final_pass,
    })
}
