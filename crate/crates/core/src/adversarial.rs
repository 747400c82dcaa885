//! Modality discriminator and the adversarial objective.
//!
//! The min-max game is realized with a single loss: the discriminator
//! descends the cross-entropy on modality labels, while a gradient reversal
//! node between the shared encoder and the discriminator hands the encoder
//! the negated gradient.

use rand::Rng;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Linear, SelfAttentionPool};
use crate::params::{ParamStore, Session};
use crate::scalar::Scalar;

/// Parameter group holding the discriminator.
pub const GROUP: &str = "discriminator";

/// Smallest probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityLabel {
    Textual,
    Cognitive,
}

impl ModalityLabel {
    pub const ALL: [ModalityLabel; 2] = [ModalityLabel::Textual, ModalityLabel::Cognitive];

    pub fn index(self) -> usize {
        match self {
            ModalityLabel::Textual => 0,
            ModalityLabel::Cognitive => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityLabel::Textual => "text",
            ModalityLabel::Cognitive => "cognitive",
        }
    }
}

/// Sentence-level modality classifier over shared-encoder states.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub pool: SelfAttentionPool,
    pub output: Linear,
}

impl Discriminator {
    /// `dim` is the shared-encoder output width (`2·d_h`).
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, rng: &mut R) -> Self {
        let pool = SelfAttentionPool::new(store, GROUP, dim, rng);
        let output = Linear::new(store, GROUP, "output", dim, ModalityLabel::ALL.len(), rng);
        Self { pool, output }
    }

    pub fn logits<T: Scalar>(&self, s: &mut Session<T>, h_shared: Var) -> Result<Var> {
        let pooled = self.pool.forward(s, h_shared, None)?;
        self.output.forward(s, pooled.output)
    }

    /// Probability vector over `[textual, cognitive]`.
    pub fn discriminate<T: Scalar>(&self, s: &mut Session<T>, h_shared: Var) -> Result<Var> {
        let z = self.logits(s, h_shared)?;
        s.softmax(z)
    }

    /// Cross-entropy of one sentence against its true modality.
    pub fn loss<T: Scalar>(
        &self,
        s: &mut Session<T>,
        h_shared: Var,
        label: ModalityLabel,
    ) -> Result<Var> {
        let z = self.logits(s, h_shared)?;
        let lp = s.log_softmax(z)?;
        let picked = s.pick(lp, label.index())?;
        Ok(s.scale(picked, -T::one()))
    }

    /// Predicted modality: the arg-max, ties going to the textual label.
    pub fn predict<T: Scalar>(&self, s: &mut Session<T>, h_shared: Var) -> Result<ModalityLabel> {
        let p = self.discriminate(s, h_shared)?;
        let d = s.value(p).data();
        Ok(if d[1] > d[0] {
            ModalityLabel::Cognitive
        } else {
            ModalityLabel::Textual
        })
    }
}

/// Gradient reversal on the discriminator branch. The caller keeps feeding
/// the un-reversed `shared_output` to the task predictor.
pub fn wire_grl<T: Scalar>(s: &mut Session<T>, shared_output: Var, lambda: T) -> Result<Var> {
    s.grad_reverse(shared_output, lambda)
}

/// Mean cross-entropy of probability vectors against their true modality,
/// with probabilities floored at [`PROB_FLOOR`].
pub fn adversarial_loss<T: Scalar>(predictions: &[(Tensor<T>, ModalityLabel)]) -> Result<T> {
    if predictions.is_empty() {
        return Err(Error::Contract(
            "adversarial loss over an empty batch".into(),
        ));
    }
    let floor = T::from_f64(PROB_FLOOR);
    let mut total = T::zero();
    for (p, label) in predictions {
        if p.len() != ModalityLabel::ALL.len() {
            return Err(Error::dim("adversarial_loss", p.shape(), &[2]));
        }
        total -= p.data()[label.index()].max(floor).ln();
    }
    Ok(total / T::from_f64(predictions.len() as f64))
}

/// Batch mean of per-sentence scalar loss nodes.
pub fn mean_loss<T: Scalar>(s: &mut Session<T>, items: &[Var]) -> Result<Var> {
    let (&first, rest) = items
        .split_first()
        .ok_or_else(|| Error::Contract("adversarial loss over an empty batch".into()))?;
    let mut acc = first;
    for &v in rest {
        acc = s.add(acc, v)?;
    }
    Ok(s.scale(acc, T::one() / T::from_f64(items.len() as f64)))
}
