//! Image recovery: the HOG-with-image-prompt network, its inpainting
//! ablations, the recovery loss and prompt selection.

mod losses;
mod masking;
mod model;
mod prompt;
mod train;

pub use losses::{l2_loss, msgms_loss, recover_loss, recover_loss_values, RecoverLoss, DEFAULT_SCALES, GMS_C};
pub use masking::{iihp_input, imi_input, MaskSpec};
pub use model::{RecoverArch, RecoverModel, Variant, RECOVER_PREFIX};
pub use prompt::{cosine_similarity, select_prompt, PromptPool};
pub use train::{train_recover, TrainedRecover};

use crate::autodiff::gradcheck::{self, normalized_sum, rand_tensor, Case, GradReport};
use crate::autodiff::{Graph, NodeId, Param};
use crate::rng::SplitMix64;
use crate::Result;

const SAMPLED_COORDS: usize = 6;

fn loss_case(seed: u64, build: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>) -> Result<GradReport> {
    let mut rng = SplitMix64::new(seed);
    let x = rand_tensor(&mut rng, [2, 1, 8, 8], 0.0, 1.0);
    let y = rand_tensor(&mut rng, [2, 1, 8, 8], 0.0, 1.0);
    gradcheck::check(
        &[Param::new("y", y)],
        |g, ids| {
            let t = g.constant(x.clone());
            build(g, ids[0], t)
        },
        None,
        seed,
    )
}

fn case_l2(seed: u64) -> Result<GradReport> {
    loss_case(seed, l2_loss)
}

fn case_msgms(seed: u64) -> Result<GradReport> {
    loss_case(seed, |g, y, x| msgms_loss(g, y, x, 3))
}

fn case_recover_loss(seed: u64) -> Result<GradReport> {
    loss_case(seed, |g, y, x| Ok(recover_loss(g, y, x, 1.0, 3)?.total))
}

fn model_case(seed: u64, variant: Variant) -> Result<GradReport> {
    let mut model = RecoverModel::new(variant, &[4, 8, 16], seed);
    gradcheck::jitter_biases(&mut model.params, seed);
    let mut rng = SplitMix64::derive(seed, 0x494e);
    let a = rand_tensor(&mut rng, [1, 1, 16, 16], 0.0, 1.0);
    let b = rand_tensor(&mut rng, [1, 1, 16, 16], 0.0, 1.0);
    let arch = model.arch.clone();
    gradcheck::check(
        model.params.params(),
        |g, ids| {
            let p = model.params.bound_from(ids);
            let first = g.constant(a.clone());
            let second = (variant == Variant::Hip).then(|| g.constant(b.clone()));
            let y = arch.forward_graph(g, &p, first, second)?;
            normalized_sum(g, y, seed)
        },
        Some(SAMPLED_COORDS),
        seed,
    )
}

fn case_hip_model(seed: u64) -> Result<GradReport> {
    model_case(seed, Variant::Hip)
}

fn case_single_model(seed: u64) -> Result<GradReport> {
    model_case(seed, Variant::Imi)
}

pub(crate) fn gradcheck_cases() -> Vec<Case> {
    vec![
        Case { name: "l2_loss", run: case_l2 },
        Case { name: "msgms_loss", run: case_msgms },
        Case { name: "recover_loss", run: case_recover_loss },
        Case { name: "recover_model_hip", run: case_hip_model },
        Case { name: "recover_model_single", run: case_single_model },
    ]
}



