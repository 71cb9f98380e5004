//! First-order optimizers operating on a [`ParamStore`].

use std::collections::BTreeMap;

use crate::{Array, Float, ParamId, ParamStore};

/// Serializable optimizer state: a step counter plus named moment arrays
/// (`"<slot>:<parameter name>"`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T: Float> {
    pub step: u64,
    pub slots: Vec<(String, Array<T>)>,
}

pub trait Optimizer<T: Float> {
    /// Applies one update using `(parameter, gradient)` pairs.
    fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Array<T>)]);

    fn learning_rate(&self) -> f64;

    fn export_state(&self, store: &ParamStore<T>) -> OptimizerState<T>;

    /// Restores state exported by [`Optimizer::export_state`]. Fails when a
    /// slot names an unknown parameter or has the wrong shape.
    fn import_state(&mut self, store: &ParamStore<T>, state: &OptimizerState<T>) -> Result<(), String>;
}

fn export_slot<T: Float>(
    name: &str,
    slot: &BTreeMap<ParamId, Array<T>>,
    store: &ParamStore<T>,
    out: &mut Vec<(String, Array<T>)>,
) {
    for (id, a) in slot {
        out.push((format!("{name}:{}", store.name(*id)), a.clone()));
    }
}

fn import_slots<T: Float>(
    names: &[&str],
    store: &ParamStore<T>,
    state: &OptimizerState<T>,
) -> Result<Vec<BTreeMap<ParamId, Array<T>>>, String> {
    let mut slots = vec![BTreeMap::new(); names.len()];
    for (key, value) in &state.slots {
        let (slot, param) = key.split_once(':').ok_or_else(|| format!("malformed slot key {key}"))?;
        let idx = names
            .iter()
            .position(|n| *n == slot)
            .ok_or_else(|| format!("unknown optimizer slot {slot}"))?;
        let id = store.id(param).ok_or_else(|| format!("optimizer state for unknown parameter {param}"))?;
        if store.get(id).shape() != value.shape() {
            return Err(format!("optimizer state shape mismatch for {param}"));
        }
        slots[idx].insert(id, value.clone());
    }
    Ok(slots)
}

/// Adaptive-moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T: Float> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<ParamId, Array<T>>,
    v: BTreeMap<ParamId, Array<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl<T: Float> Optimizer<T> for Adam<T> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Array<T>)]) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (id, g) in grads {
            let m = self.m.entry(*id).or_insert_with(|| Array::zeros(g.raw_dim()));
            let v = self.v.entry(*id).or_insert_with(|| Array::zeros(g.raw_dim()));
            let p = store.get_mut(*id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn export_state(&self, store: &ParamStore<T>) -> OptimizerState<T> {
        let mut slots = Vec::new();
        export_slot("m", &self.m, store, &mut slots);
        export_slot("v", &self.v, store, &mut slots);
        OptimizerState { step: self.t, slots }
    }

    fn import_state(&mut self, store: &ParamStore<T>, state: &OptimizerState<T>) -> Result<(), String> {
        let mut slots = import_slots(&["m", "v"], store, state)?;
        self.v = slots.pop().unwrap();
        self.m = slots.pop().unwrap();
        self.t = state.step;
        Ok(())
    }
}

/// Root-mean-square propagation (no momentum, no centering).
#[derive(Clone, Debug)]
pub struct RmsProp<T: Float> {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    t: u64,
    sq: BTreeMap<ParamId, Array<T>>,
}

impl<T: Float> RmsProp<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_decay(lr, 0.99, 1e-8)
    }

    pub fn with_decay(lr: f64, alpha: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            alpha,
            eps,
            t: 0,
            sq: BTreeMap::new(),
        }
    }
}

impl<T: Float> Optimizer<T> for RmsProp<T> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Array<T>)]) {
        self.t += 1;
        let (alpha, lr, eps, one) = (T::of(self.alpha), T::of(self.lr), T::of(self.eps), T::one());
        for (id, g) in grads {
            let s = self.sq.entry(*id).or_insert_with(|| Array::zeros(g.raw_dim()));
            let p = store.get_mut(*id);
            ndarray::Zip::from(p).and(s).and(g).for_each(|p, s, &g| {
                *s = alpha * *s + (one - alpha) * g * g;
                *p = *p - lr * g / (s.sqrt() + eps);
            });
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn export_state(&self, store: &ParamStore<T>) -> OptimizerState<T> {
        let mut slots = Vec::new();
        export_slot("sq", &self.sq, store, &mut slots);
        OptimizerState { step: self.t, slots }
    }

    fn import_state(&mut self, store: &ParamStore<T>, state: &OptimizerState<T>) -> Result<(), String> {
        let mut slots = import_slots(&["sq"], store, state)?;
        self.sq = slots.pop().unwrap();
        self.t = state.step;
        Ok(())
    }
}
