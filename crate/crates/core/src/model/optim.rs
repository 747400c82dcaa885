use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Global L2 norm of all gradients.
pub fn global_norm<T: Scalar>(grads: &ParamGrads<T>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamGrads<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = T::from_f64(max_norm / norm);
        for g in grads.values_mut() {
            *g = g.map(|v| v * c);
        }
    }
    norm
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    moments: BTreeMap<ParamId, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter in `grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let c1 = T::one() - T::from_f64(self.beta1.powi(t));
        let c2 = T::one() - T::from_f64(self.beta2.powi(t));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(self.eps));
        for (&id, g) in grads {
            let p = store.get(id);
            if p.shape() != g.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            let mut next = p.data().to_vec();
            for k in 0..g.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                next[k] -= lr * mh / (vh.sqrt() + eps);
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite value in {} after update",
                    store.name(id)
                )));
            }
            store.set(id, Tensor::new(p.shape().to_vec(), next)?)?;
        }
        Ok(())
    }
}
