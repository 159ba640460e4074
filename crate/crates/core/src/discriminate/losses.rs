use crate::autodiff::{Graph, NodeId, SoftmaxAxis};
use crate::tensor::Tensor;
use crate::{Error, Result};

fn check_levels(fx: &[NodeId], fy: &[NodeId]) -> Result<()> {
    if fx.len() != fy.len() || fx.is_empty() {
        return Err(Error::invalid(format!(
            "pyramids have {} and {} levels",
            fx.len(),
            fy.len()
        )));
    }
    Ok(())
}

fn level_mean(g: &mut Graph, per_level: Vec<NodeId>) -> Result<NodeId> {
    let n = per_level.len();
    let mut acc = per_level[0];
    for &t in &per_level[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / n as f32))
}

/// Mean over levels of the mean per-location cosine distance.
pub fn cosine_loss(g: &mut Graph, fx: &[NodeId], fy: &[NodeId]) -> Result<NodeId> {
    check_levels(fx, fy)?;
    let mut per = Vec::with_capacity(fx.len());
    for (&a, &b) in fx.iter().zip(fy) {
        let d = g.cosine_distance(a, b)?;
        per.push(g.mean(d));
    }
    level_mean(g, per)
}

/// Softmax each location (or channel plane) and take the `(hw, hw)` Gram
/// matrix of location vectors, per image.
pub fn self_correlation(g: &mut Graph, f: NodeId, axis: SoftmaxAxis) -> NodeId {
    let s = g.softmax(f, axis);
    g.gram(s)
}

/// Mean over levels and batch of `||g_X - g_Y||_F`.
pub fn self_correlation_loss(g: &mut Graph, fx: &[NodeId], fy: &[NodeId], axis: SoftmaxAxis) -> Result<NodeId> {
    check_levels(fx, fy)?;
    let mut per = Vec::with_capacity(fx.len());
    for (&a, &b) in fx.iter().zip(fy) {
        let ga = self_correlation(g, a, axis);
        let gb = self_correlation(g, b, axis);
        let d = g.sub(gb, ga)?;
        let norms = g.frobenius(d);
        per.push(g.mean(norms));
    }
    level_mean(g, per)
}

/// Nodes of `L_D + lambda_s * L_S`.
#[derive(Clone, Copy, Debug)]
pub struct DiscLoss {
    pub total: NodeId,
    pub cosine: NodeId,
    pub self_corr: NodeId,
}

pub fn disc_loss(g: &mut Graph, fx: &[NodeId], fy: &[NodeId], lambda_s: f32, axis: SoftmaxAxis) -> Result<DiscLoss> {
    let cosine = cosine_loss(g, fx, fy)?;
    let self_corr = self_correlation_loss(g, fx, fy, axis)?;
    let weighted = g.scale(self_corr, lambda_s);
    let total = g.add(cosine, weighted)?;
    Ok(DiscLoss {
        total,
        cosine,
        self_corr,
    })
}

/// Values of `(L_D, L_S, L_D + lambda_s * L_S)` for two pyramids.
pub fn disc_loss_values(fx: &[Tensor], fy: &[Tensor], lambda_s: f32, axis: SoftmaxAxis) -> Result<(f32, f32, f32)> {
    let mut g = Graph::new();
    let a: Vec<NodeId> = fx.iter().map(|t| g.constant(t.clone())).collect();
    let b: Vec<NodeId> = fy.iter().map(|t| g.constant(t.clone())).collect();
    let l = disc_loss(&mut g, &a, &b, lambda_s, axis)?;
    Ok((g.value(l.cosine).item(), g.value(l.self_corr).item(), g.value(l.total).item()))
}

/// `(n, 1, hw, hw)` self-correlation of one level.
pub fn self_correlation_matrix(f: &Tensor, axis: SoftmaxAxis) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(f.clone());
    let out = self_correlation(&mut g, x, axis);
    g.value(out).clone()
}
