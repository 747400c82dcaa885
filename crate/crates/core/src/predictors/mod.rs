//! Task heads: a linear-chain CRF for sequence labeling and a pooled softmax
//! classifier for sentence classification.

mod classifier;
pub mod crf;

pub use classifier::Classifier;
pub use crf::{Crf, TagSet};
