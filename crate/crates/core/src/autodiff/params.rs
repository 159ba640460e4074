use std::collections::HashMap;

use super::{Graph, NodeId, Param};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Ordered, uniquely named parameter tensors of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param::new(name, value));
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the tape, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound<'_> {
        let ids = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { store: self, ids }
    }

    /// Reuse node ids that were bound in store order elsewhere.
    pub fn bound_from(&self, ids: &[NodeId]) -> Bound<'_> {
        assert_eq!(ids.len(), self.params.len());
        Bound {
            store: self,
            ids: ids.to_vec(),
        }
    }

    /// Copies gradients from the tape into each parameter's `grad`.
    pub fn collect_grads(&mut self, g: &Graph, bound_ids: &[NodeId]) {
        for (p, id) in self.params.iter_mut().zip(bound_ids) {
            p.grad = g.grad(*id).map(|s| s.to_vec());
        }
    }

    /// Replace values from a name -> tensor list (e.g. a checkpoint). Every
    /// parameter must be present with a matching shape.
    pub fn load(&mut self, tensors: &[(String, Tensor)], prefix: &str) -> Result<()> {
        let by_name: HashMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in &mut self.params {
            let key = format!("{prefix}{}", p.name);
            let t = by_name
                .get(key.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{key}'")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    lhs: p.value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            p.value = (*t).clone();
        }
        Ok(())
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (format!("{prefix}{}", p.name), p.value.clone()))
            .collect()
    }

    pub fn checksum(&self) -> u64 {
        self.params
            .iter()
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.value.checksum())
    }

    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Parameters placed on a particular tape.
pub struct Bound<'a> {
    store: &'a ParamStore,
    ids: Vec<NodeId>,
}

impl Bound<'_> {
    pub fn id(&self, name: &str) -> NodeId {
        let i = self
            .store
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.ids[*i]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// `bias(conv2d(x, <prefix>.w))` with bias `<prefix>.b`.
    pub fn conv(&self, g: &mut Graph, prefix: &str, x: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let y = g.conv2d(x, self.id(&format!("{prefix}.w")), stride, pad)?;
        g.add_bias(y, self.id(&format!("{prefix}.b")))
    }

    pub fn conv_transpose(&self, g: &mut Graph, prefix: &str, x: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let y = g.conv_transpose(x, self.id(&format!("{prefix}.w")), stride, pad)?;
        g.add_bias(y, self.id(&format!("{prefix}.b")))
    }
}
