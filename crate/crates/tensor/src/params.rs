use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::{Array, Float, Grads, Graph, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays. Values are reference counted so binding them into a
/// graph does not copy.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Float> {
    names: Vec<String>,
    values: Vec<Arc<Array<T>>>,
    lookup: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Registers a parameter. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Array<T>> {
        Arc::clone(&self.values[id.0])
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a value; the shape must match.
    pub fn set(&mut self, id: ParamId, value: Array<T>) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "shape mismatch for parameter {}",
            self.names[id.0]
        );
        self.values[id.0] = Arc::new(value);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.names[id.0].starts_with(prefix))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Lazily inserts parameters of a store into a graph, marking those selected
/// by the `trainable` predicate as differentiable leaves and the rest as
/// constants.
pub struct Binding<'g, 's, T: Float> {
    graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    trainable: Vec<bool>,
    vars: RefCell<Vec<Option<Var<'g, T>>>>,
}

impl<'g, 's, T: Float> Binding<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let trainable = store.names.iter().map(|n| trainable(n)).collect();
        Binding {
            graph,
            store,
            trainable,
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    /// Binds every parameter to a caller-supplied variable, in id order.
    pub fn with_vars(graph: &'g Graph<T>, store: &'s ParamStore<T>, vars: &[Var<'g, T>]) -> Self {
        assert_eq!(vars.len(), store.len(), "with_vars: one variable per parameter");
        for (i, v) in vars.iter().enumerate() {
            assert_eq!(v.shape(), store.values[i].shape(), "with_vars: shape of {}", store.names[i]);
        }
        Binding {
            graph,
            store,
            trainable: vars.iter().map(|v| v.requires_grad()).collect(),
            vars: RefCell::new(vars.iter().map(|&v| Some(v)).collect()),
        }
    }

    /// Every parameter frozen.
    pub fn frozen(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Self::new(graph, store, |_| false)
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let value = self.store.shared(id);
        let v = if self.trainable[id.0] {
            self.graph.leaf_rc(value)
        } else {
            self.graph.constant_rc(value)
        };
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Gradients of the trainable parameters that took part in the pass.
    pub fn gradients(&self, mut grads: Grads<T>) -> Vec<(ParamId, Array<T>)> {
        let vars = self.vars.borrow();
        let mut out = Vec::new();
        for (i, v) in vars.iter().enumerate() {
            if !self.trainable[i] {
                continue;
            }
            if let Some(v) = v {
                let g = grads
                    .take_id(v.id)
                    .unwrap_or_else(|| Array::zeros(self.store.values[i].raw_dim()));
                out.push((ParamId(i), g));
            }
        }
        out
    }
}
