//! Named parameter storage and the per-step binding of parameters onto a tape.

use std::collections::BTreeMap;
use std::ops::{Deref, DerefMut};

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    group: String,
    value: Tensor<T>,
}

/// Ordered collection of trainable tensors. Each parameter belongs to a named
/// group (an encoder, the discriminator, a predictor, ...).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor<T>) -> ParamId {
        let full = format!("{group}.{name}");
        assert!(self.find(&full).is_none(), "duplicate parameter {full}");
        self.entries.push(Entry {
            name: full,
            group: group.to_string(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let cur = &self.entries[id.0].value;
        if cur.shape() != value.shape() {
            return Err(Error::dim("param.set", cur.shape(), value.shape()));
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> &str {
        &self.entries[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.group) {
                out.push(e.group.clone());
            }
        }
        out
    }

    pub fn ids_in_group<'a>(&'a self, group: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.group(id) == group)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    group: e.group.clone(),
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for e in &mut self.entries {
            e.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Gradients for the parameters a step actually touched.
pub type ParamGrads<T> = BTreeMap<ParamId, Tensor<T>>;

/// A tape plus lazy parameter binding: a parameter becomes a leaf the first
/// time a layer asks for it, so untouched parameters never appear in the
/// gradient table.
pub struct Session<'a, T: Scalar> {
    graph: Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// Session whose parameters are trainable leaves.
    pub fn train(store: &'a ParamStore<T>) -> Self {
        Self::with_mode(store, true)
    }

    /// Session whose parameters are constants (inference).
    pub fn infer(store: &'a ParamStore<T>) -> Self {
        Self::with_mode(store, false)
    }

    fn with_mode(store: &'a ParamStore<T>, trainable: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            trainable,
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|_| ParamId(i)))
    }

    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads<T>> {
        let grads = self.graph.backward(loss)?;
        let mut out = BTreeMap::new();
        for (i, b) in self.bound.iter().enumerate() {
            if let Some(v) = b {
                if let Some(g) = grads.get(*v) {
                    out.insert(ParamId(i), g.clone());
                }
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> Deref for Session<'_, T> {
    type Target = Graph<T>;

    fn deref(&self) -> &Graph<T> {
        &self.graph
    }
}

impl<T: Scalar> DerefMut for Session<'_, T> {
    fn deref_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }
}

/// Uniform Xavier/Glorot initialization for a `rows × cols` matrix.
pub fn xavier<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    Tensor::from_raw(vec![rows, cols], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lazy_binding_only_reports_touched_parameters() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("g1", "a", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let _b = store.add("g2", "b", Tensor::vector(vec![3.0]).unwrap());
        let mut s = Session::train(&store);
        let av = s.param(a);
        assert_eq!(s.param(a), av);
        let loss = s.sum(av);
        let grads = s.backward(loss).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[&a].data(), &[1.0, 1.0]);
    }

    #[test]
    fn xavier_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = xavier(&mut rng, 10, 20);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
    }
}
