use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{Linear, SelfAttentionPool};
use crate::params::{ParamStore, Session};
use crate::scalar::Scalar;

/// Sentence classifier: self-attention pooling, affine map, softmax.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub n_classes: usize,
    pub pool: SelfAttentionPool,
    pub output: Linear,
}

impl Classifier {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        d_in: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Self {
        let pool = SelfAttentionPool::new(store, group, d_in, rng);
        let output = Linear::new(store, group, "output", d_in, n_classes, rng);
        Self {
            n_classes,
            pool,
            output,
        }
    }

    pub fn logits<T: Scalar>(&self, s: &mut Session<T>, h: Var) -> Result<Var> {
        let pooled = self.pool.forward(s, h, None)?;
        self.output.forward(s, pooled.output)
    }

    /// Class probability vector.
    pub fn classify<T: Scalar>(&self, s: &mut Session<T>, h: Var) -> Result<Var> {
        let z = self.logits(s, h)?;
        s.softmax(z)
    }

    /// `-log p(gold)`.
    pub fn nll<T: Scalar>(&self, s: &mut Session<T>, h: Var, gold: usize) -> Result<Var> {
        if gold >= self.n_classes {
            return Err(Error::Data(format!(
                "class {gold} out of range for {} classes",
                self.n_classes
            )));
        }
        let z = self.logits(s, h)?;
        let lp = s.log_softmax(z)?;
        let picked = s.pick(lp, gold)?;
        Ok(s.scale(picked, -T::one()))
    }
}
