//! Feature-space discrimination: a frozen backbone, the trainable Feature
//! Recovery Block, and the cosine and self-correlation losses.

mod backbone;
mod frb;
mod losses;
mod train;

pub use backbone::{Backbone, BackboneSource, FeaturePyramid, BACKBONE_PREFIX};
pub use frb::{Frb, FrbArch, FRB_PREFIX};
pub use losses::{
    cosine_loss, disc_loss, disc_loss_values, self_correlation, self_correlation_loss, self_correlation_matrix,
    DiscLoss,
};
pub use train::{train_discriminate, DiscData};

use crate::autodiff::gradcheck::{self, rand_tensor, weighted_sum, Case, GradReport};
use crate::autodiff::{Graph, NodeId, Param, SoftmaxAxis};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::Result;

const SAMPLED_COORDS: usize = 6;

fn small_pyramid(seed: u64, batch: usize) -> Vec<Tensor> {
    let b = Backbone::seeded(seed, 4);
    let mut rng = SplitMix64::derive(seed, 0x5059);
    let x = Tensor::from_fn([batch, 1, 16, 16], |_, _, _, _| rng.next_f32());
    b.extract(&x).expect("16x16 input")
}

fn rand_levels(rng: &mut SplitMix64) -> Vec<Tensor> {
    [[2, 3, 4, 4], [2, 5, 2, 2]]
        .iter()
        .map(|&s| rand_tensor(rng, s, -1.0, 1.0))
        .collect()
}

fn loss_case(seed: u64, build: fn(&mut Graph, &[NodeId], &[NodeId]) -> Result<NodeId>) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let fx = rand_levels(&mut rng);
    let fy = rand_levels(&mut rng);
    let params: Vec<Param> = fy
        .into_iter()
        .enumerate()
        .map(|(i, t)| Param::new(format!("fy.{i}"), t))
        .collect();
    gradcheck::check(
        &params,
        |g, ids| {
            let a: Vec<NodeId> = fx.iter().map(|t| g.constant(t.clone())).collect();
            build(g, &a, ids)
        },
        None,
        seed,
    )
}

fn case_cosine_loss(seed: u64) -> Result<GradReport> {
    loss_case(seed, cosine_loss)
}

fn case_sc_channel(seed: u64) -> Result<GradReport> {
    loss_case(seed, |g, a, b| self_correlation_loss(g, a, b, SoftmaxAxis::Channel))
}

fn case_sc_spatial(seed: u64) -> Result<GradReport> {
    loss_case(seed, |g, a, b| self_correlation_loss(g, a, b, SoftmaxAxis::Spatial))
}

fn case_aggregate(seed: u64) -> Result<GradReport> {
    let mut frb = Frb::new(&[4, 8, 16], seed);
    gradcheck::jitter_biases(&mut frb.params, seed);
    let ry = small_pyramid(seed, 1);
    let arch = frb.arch.clone();
    gradcheck::check(
        frb.params.params(),
        |g, ids| {
            let p = frb.params.bound_from(ids);
            let r: Vec<NodeId> = ry.iter().map(|t| g.constant(t.clone())).collect();
            let b = arch.aggregate(g, &p, &r)?;
            weighted_sum(g, b, seed)
        },
        Some(SAMPLED_COORDS),
        seed,
    )
}

fn case_frb(seed: u64) -> Result<GradReport> {
    let mut frb = Frb::new(&[4, 8, 16], seed);
    gradcheck::jitter_biases(&mut frb.params, seed);
    let mut rng = SplitMix64::derive(seed, 0x424e);
    let bottleneck = rand_tensor(&mut rng, [1, 28, 1, 1], 0.0, 1.0);
    let arch = frb.arch.clone();
    gradcheck::check(
        frb.params.params(),
        |g, ids| {
            let p = frb.params.bound_from(ids);
            let b = g.constant(bottleneck.clone());
            let out = arch.decode(g, &p, b)?;
            let mut total = weighted_sum(g, out[0], seed)?;
            for (i, &o) in out.iter().enumerate().skip(1) {
                let s = weighted_sum(g, o, seed + i as u64)?;
                total = g.add(total, s)?;
            }
            Ok(total)
        },
        Some(SAMPLED_COORDS),
        seed,
    )
}

/// Whole discriminator at 16x16: FRB on the recovery pyramid, scored by
/// `L_D + L_S` against the reference pyramid.
fn case_disc_model(seed: u64) -> Result<GradReport> {
    let mut frb = Frb::new(&[4, 8, 16], seed);
    gradcheck::jitter_biases(&mut frb.params, seed);
    let fx = small_pyramid(seed, 2);
    let ry = small_pyramid(seed + 1000, 2);
    let arch = frb.arch.clone();
    gradcheck::check(
        frb.params.params(),
        |g, ids| {
            let p = frb.params.bound_from(ids);
            let a: Vec<NodeId> = fx.iter().map(|t| g.constant(t.clone())).collect();
            let r: Vec<NodeId> = ry.iter().map(|t| g.constant(t.clone())).collect();
            let fy = arch.forward_graph(g, &p, &r)?;
            Ok(disc_loss(g, &a, &fy, 1.0, SoftmaxAxis::Channel)?.total)
        },
        Some(SAMPLED_COORDS),
        seed,
    )
}

pub(crate) fn gradcheck_cases() -> Vec<Case> {
    vec![
        Case { name: "cosine_loss", run: case_cosine_loss },
        Case { name: "self_correlation_loss_channel", run: case_sc_channel },
        Case { name: "self_correlation_loss_spatial", run: case_sc_spatial },
        Case { name: "frb_aggregate", run: case_aggregate },
        Case { name: "frb_decode", run: case_frb },
        Case { name: "discriminate_model", run: case_disc_model },
    ]
}
