//! Named parameter storage, initialization and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{FusionError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which optimizer owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Fusion-network weights: adapters, candidate-op parameters, task head.
    Network,
    /// Architecture logits.
    Arch,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamStore<T> {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            groups: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.groups.push(group);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.groups[id.0] == group)
    }

    /// Number of scalar entries in a group.
    pub fn count(&self, group: ParamGroup) -> usize {
        self.ids_in(group).map(|id| self.values[id.0].len()).sum()
    }

    /// Loads every parameter into `graph`. Parameters in `trainable` become
    /// differentiable leaves; the rest are constants.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: Option<ParamGroup>) -> Binding {
        let vars = self
            .values
            .iter()
            .zip(&self.groups)
            .map(|(v, &g)| {
                if trainable == Some(g) {
                    graph.param(v.clone())
                } else {
                    graph.constant(v.clone())
                }
            })
            .collect();
        Binding { vars }
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
pub fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

/// Zero-centred Gaussian noise of the given scale.
pub fn small_noise<T: Scalar, R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z * scale)
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with L2 penalty folded into the gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Adam<T> {
    pub group: ParamGroup,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    state: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(group: ParamGroup, weight_decay: f64) -> Self {
        Self {
            group,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            state: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `self.group` that received a
    /// gradient. Parameters of other groups are never touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, binding: &Binding, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if self.state.len() < store.len() {
            self.state.resize_with(store.len(), || None);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (wd, eps) = (T::of(self.weight_decay), T::of(self.eps));
        let step_size = T::of(lr / bc1);
        let bc2 = T::of(bc2);
        let ids: Vec<ParamId> = store.ids_in(self.group).collect();
        for id in ids {
            let Some(g) = grads.get(binding.var(id)) else { continue };
            if !g.all_finite() {
                return Err(FusionError::NonFinite(format!("gradient of {}", store.name(id))));
            }
            let value = store.get_mut(id);
            let moments = self.state[id.0].get_or_insert_with(|| Moments {
                m: vec![T::zero(); value.len()],
                v: vec![T::zero(); value.len()],
            });
            for (((p, &gr), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(moments.m.iter_mut())
                .zip(moments.v.iter_mut())
            {
                let gr = gr + wd * *p;
                *m = b1 * *m + (T::one() - b1) * gr;
                *v = b2 * *v + (T::one() - b2) * gr * gr;
                *p = *p - step_size * *m / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `max_lr` at epoch 0 to `min_lr` at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, max_lr: f64, min_lr: f64) -> f64 {
    let t = epoch.min(total_epochs) as f64 / total_epochs.max(1) as f64;
    min_lr + 0.5 * (max_lr - min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
}
