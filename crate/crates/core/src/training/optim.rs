use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamGroup, ParamId, ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Gradient sums keyed by parameter, iterated in id order so reductions
/// are reproducible.
#[derive(Debug, Clone, Default)]
pub struct GradBuffer {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, grads: HashMap<ParamId, Tensor>) {
        for (id, g) in grads {
            match self.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.grads.insert(id, g);
                }
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn norm(&self) -> f64 {
        self.grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm {
            let f = max_norm / norm;
            for g in self.grads.values_mut() {
                *g = g.scale(f);
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }
}

/// Per-parameter first and second moments for the graph group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: HashMap<String, Tensor>,
    pub second: HashMap<String, Tensor>,
}

/// Plain gradient descent on the flat group and Adam on the graph group.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub lr_flat: f64,
    pub lr_graph: f64,
    pub adam: AdamState,
}

impl Optimizer {
    pub fn new(lr_flat: f64, lr_graph: f64) -> Self {
        Self {
            lr_flat,
            lr_graph,
            adam: AdamState::default(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let param = store.param(id);
            match param.group {
                ParamGroup::Flat => {
                    let lr = self.lr_flat;
                    let value = store.get_mut(id);
                    for (v, d) in value.data_mut().iter_mut().zip(g.data()) {
                        *v -= lr * d;
                    }
                }
                ParamGroup::Graph => {
                    let name = param.name.clone();
                    let m = self
                        .adam
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    for (mi, d) in m.data_mut().iter_mut().zip(g.data()) {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                    }
                    let v = self
                        .adam
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    for (vi, d) in v.data_mut().iter_mut().zip(g.data()) {
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                    }
                    let (m, v) = (&self.adam.first[&name], &self.adam.second[&name]);
                    let lr = self.lr_graph;
                    let value = store.get_mut(id);
                    for ((p, mi), vi) in value.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                        *p -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
