use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Index;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::kernels::Mode;
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// A named tensor owned by a [`ParamStore`].
///
/// Buffers (`requires_grad == false`) are checkpointed with the model but
/// never receive gradients; batch-norm running statistics live here.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, requires_grad: bool) -> ParamId {
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            requires_grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the gradients of one backward sweep into each parameter's
    /// accumulator.
    pub fn accumulate_grads(&mut self, bound: &Bound<'_>, grads: &Gradients) {
        for (p, var) in self.params.iter_mut().zip(&bound.vars) {
            if !p.requires_grad {
                continue;
            }
            if let Some(g) = grads.get(*var) {
                match &mut p.grad {
                    Some(acc) => acc.add_assign(g),
                    None => p.grad = Some(g.clone()),
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Plain gradient descent `θ ← θ − lr·g`, optionally after rescaling the
    /// global gradient norm to at most `clip`. Clears the accumulators.
    pub fn sgd_step(&mut self, lr: f64, clip: Option<f64>) -> Result<()> {
        let norm = self.grad_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        let factor = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for p in &mut self.params {
            if let Some(g) = p.grad.take() {
                for (w, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * factor * gv;
                }
            }
        }
        Ok(())
    }
}

/// The parameters of a store registered on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn new(tape: &'t Tape, store: &ParamStore) -> Self {
        let vars = store
            .params
            .iter()
            .map(|p| {
                if p.requires_grad {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Self { vars }
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;
    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

/// Everything a model needs for one forward pass: the tape, the bound
/// parameters, the batch-norm mode, and a log of running-statistic updates
/// that the caller applies after the step.
pub struct ForwardCtx<'t, 's> {
    pub tape: &'t Tape,
    pub params: Bound<'t>,
    pub store: &'s ParamStore,
    pub mode: Mode,
    updates: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'t, 's> ForwardCtx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            params: Bound::new(tape, store),
            store,
            mode,
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.params[id]
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    pub(crate) fn record_update(&self, id: ParamId, value: Tensor) {
        self.updates.borrow_mut().push((id, value));
    }

    /// Buffer updates produced during the forward pass.
    pub fn take_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }

    /// Backward from `loss`. The returned update holds the parameter
    /// gradients and the buffer updates, detached from the store so that it
    /// can be applied once the context is dropped.
    pub fn finish(self, loss: Var<'t>) -> StepUpdate {
        let grads = loss.backward();
        let grads = self
            .store
            .params
            .iter()
            .zip(&self.params.vars)
            .map(|(p, &v)| if p.requires_grad { grads.get(v).cloned() } else { None })
            .collect();
        StepUpdate {
            grads,
            buffers: self.updates.into_inner(),
        }
    }
}

/// Gradients and buffer values produced by one forward/backward pass.
pub struct StepUpdate {
    grads: Vec<Option<Tensor>>,
    buffers: Vec<(ParamId, Tensor)>,
}

impl StepUpdate {
    /// Adds the gradients into the accumulators of `store` and writes the
    /// buffer updates. `store` must be the store the pass was built from.
    pub fn apply(self, store: &mut ParamStore) {
        for (p, g) in store.params.iter_mut().zip(self.grads) {
            if let Some(g) = g {
                match &mut p.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => p.grad = Some(g),
                }
            }
        }
        for (id, value) in self.buffers {
            *store.value_mut(id) = value;
        }
    }
}

pub(crate) fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, [fan_in, fan_out], limit)
}

pub(crate) fn uniform(rng: &mut Rng, shape: impl Into<Vec<usize>>, limit: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..=limit);
    }
    t
}

pub(crate) fn normal(rng: &mut Rng, shape: impl Into<Vec<usize>>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and >= 0");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    t
}
