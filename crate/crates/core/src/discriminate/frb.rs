use crate::autodiff::{init, Bound, Graph, NodeId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const FRB_PREFIX: &str = "frb.";
const INIT_STREAM: u64 = 0x4652_4200;

/// Layer widths of a Feature Recovery Block; one entry per pyramid level,
/// finest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrbArch {
    pub widths: Vec<usize>,
}

impl FrbArch {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Stride taking level `i` down to the deepest level's grid.
    fn agg_stride(&self, i: usize) -> usize {
        1 << (self.levels() - 1 - i)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Concatenate each level after a strided 3x3 conv + ReLU that keeps its
    /// width and lands on the deepest level's grid.
    pub fn aggregate(&self, g: &mut Graph, p: &Bound, ry: &[NodeId]) -> Result<NodeId> {
        if ry.len() != self.levels() {
            return Err(Error::invalid(format!(
                "expected {} pyramid levels, got {}",
                self.levels(),
                ry.len()
            )));
        }
        let mut cat: Option<NodeId> = None;
        for (i, &level) in ry.iter().enumerate() {
            let y = p.conv(g, &format!("agg.{i}"), level, self.agg_stride(i), 1)?;
            let y = g.relu(y);
            cat = Some(match cat {
                None => y,
                Some(c) => g.concat_channels(c, y)?,
            });
        }
        Ok(cat.expect("at least one level"))
    }

    /// Bottleneck conv, then transposed-conv stages emitting the deepest
    /// level first; returned finest first.
    pub fn decode(&self, g: &mut Graph, p: &Bound, bottleneck: NodeId) -> Result<Vec<NodeId>> {
        let last = self.levels() - 1;
        let b = p.conv(g, "bottle", bottleneck, 1, 1)?;
        let mut state = g.relu(b);
        let mut out = vec![p.conv(g, &format!("head.{last}"), state, 1, 1)?];
        for i in (0..last).rev() {
            let u = p.conv_transpose(g, &format!("up.{i}"), state, 2, 0)?;
            state = g.relu(u);
            out.push(p.conv(g, &format!("head.{i}"), state, 1, 1)?);
        }
        out.reverse();
        Ok(out)
    }

    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, ry: &[NodeId]) -> Result<Vec<NodeId>> {
        let b = self.aggregate(g, p, ry)?;
        self.decode(g, p, b)
    }
}

/// Trainable Feature Recovery Block: maps recovery-image features onto the
/// reference pyramid's geometry.
#[derive(Clone, Debug)]
pub struct Frb {
    pub arch: FrbArch,
    pub params: ParamStore,
}

impl Frb {
    pub fn new(widths: &[usize], seed: u64) -> Frb {
        let arch = FrbArch {
            widths: widths.to_vec(),
        };
        let mut rng = SplitMix64::derive(seed, INIT_STREAM);
        let mut params = ParamStore::new();
        let conv = |params: &mut ParamStore, rng: &mut SplitMix64, name: String, oc: usize, ic: usize| {
            params.insert(format!("{name}.w"), init::conv_kernel(rng, oc, ic, 3));
            params.insert(format!("{name}.b"), init::zero_bias(oc));
        };
        for (i, &w) in widths.iter().enumerate() {
            conv(&mut params, &mut rng, format!("agg.{i}"), w, w);
        }
        let last = widths.len() - 1;
        conv(&mut params, &mut rng, "bottle".into(), widths[last], arch.bottleneck_channels());
        conv(&mut params, &mut rng, format!("head.{last}"), widths[last], widths[last]);
        for i in (0..last).rev() {
            params.insert(
                format!("up.{i}.w"),
                init::conv_transpose_kernel(&mut rng, widths[i + 1], widths[i], 2, 2),
            );
            params.insert(format!("up.{i}.b"), init::zero_bias(widths[i]));
            conv(&mut params, &mut rng, format!("head.{i}"), widths[i], widths[i]);
        }
        Frb { arch, params }
    }

    /// `F_Y` for a recovery-image pyramid.
    pub fn forward(&self, ry: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let ids: Vec<NodeId> = ry.iter().map(|t| g.constant(t.clone())).collect();
        let out = self.arch.forward_graph(&mut g, &bound, &ids)?;
        Ok(out.into_iter().map(|id| g.value(id).clone()).collect())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.named_tensors(FRB_PREFIX)
    }

    pub fn load(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        self.params.load(tensors, FRB_PREFIX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminate::Backbone;

    fn pyramid() -> Vec<Tensor> {
        let b = Backbone::seeded(3, 16);
        let mut rng = SplitMix64::new(1);
        let x = Tensor::from_fn([2, 1, 64, 64], |_, _, _, _| rng.next_f32());
        b.extract(&x).unwrap()
    }

    #[test]
    fn bottleneck_and_output_shapes() {
        let frb = Frb::new(&[16, 32, 64], 0);
        let ry = pyramid();
        let mut g = Graph::new();
        let bound = frb.params.bind(&mut g, false);
        let ids: Vec<NodeId> = ry.iter().map(|t| g.constant(t.clone())).collect();
        let b = frb.arch.aggregate(&mut g, &bound, &ids).unwrap();
        assert_eq!(g.value(b).shape(), [2, 112, 4, 4]);
        let fy = frb.forward(&ry).unwrap();
        for (a, b) in fy.iter().zip(&ry) {
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn zero_params_give_zero_features() {
        let mut frb = Frb::new(&[16, 32, 64], 0);
        frb.params.zero_all();
        let fy = frb.forward(&pyramid()).unwrap();
        assert!(fy.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }
}
