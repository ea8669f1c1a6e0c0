//! Named parameter storage with per-group trainability.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which part of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    VisionEncoder,
    Projector,
    LlmBase,
    Lora,
    LmHead,
    ScoreDecoder,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::VisionEncoder,
        Group::Projector,
        Group::LlmBase,
        Group::Lora,
        Group::LmHead,
        Group::ScoreDecoder,
    ];

    /// Groups that no optimizer step may ever touch.
    pub fn is_frozen(self) -> bool {
        matches!(self, Group::VisionEncoder | Group::LlmBase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
    /// Last accumulated gradient; `None` for parameters that did not receive one.
    pub grad: Option<Tensor>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            group,
            value,
            grad: None,
        });
        id
    }

    pub fn gaussian<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: Group,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, group, Tensor::new(shape.to_vec(), data).unwrap())
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn count(&self, group: Group) -> usize {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Per-parameter flat gradients, ordered by parameter id.
pub type ParamGrads = Vec<(ParamId, Vec<f64>)>;

/// The set of groups a forward pass should differentiate with respect to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Trainable {
    mask: u8,
}

impl Trainable {
    pub fn none() -> Self {
        Self { mask: 0 }
    }

    /// Builds a mask; frozen groups are silently excluded.
    pub fn of(groups: &[Group]) -> Self {
        let mut mask = 0;
        for g in groups {
            if !g.is_frozen() {
                mask |= 1 << *g as u8;
            }
        }
        Self { mask }
    }

    pub fn contains(self, g: Group) -> bool {
        self.mask & (1 << g as u8) != 0
    }
}

/// A forward pass: a fresh tape plus the mapping from parameters to leaves.
pub struct Forward<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    trainable: Trainable,
    leaves: HashMap<ParamId, Var>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, trainable: Trainable) -> Self {
        Self {
            graph: Graph::new(),
            store,
            trainable,
            leaves: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.get(&id) {
            return *v;
        }
        let p = self.store.get(id);
        let rg = self.trainable.contains(p.group);
        let v = self.graph.leaf(p.value.clone(), rg);
        self.leaves.insert(id, v);
        v
    }

    /// Gradients of every parameter leaf that received one, after `backward`.
    pub fn param_grads(&self) -> ParamGrads {
        let mut out: Vec<_> = self
            .leaves
            .iter()
            .filter_map(|(id, v)| self.graph.grad(*v).map(|g| (*id, g.to_vec())))
            .collect();
        out.sort_by_key(|(id, _)| id.0);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_groups_cannot_be_made_trainable() {
        let t = Trainable::of(&Group::ALL);
        assert!(!t.contains(Group::VisionEncoder));
        assert!(!t.contains(Group::LlmBase));
        assert!(t.contains(Group::Lora));
        assert!(t.contains(Group::ScoreDecoder));
    }
}
