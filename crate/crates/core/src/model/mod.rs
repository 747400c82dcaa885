//! The assembled network, its training loop, evaluation, hidden-state export,
//! checkpoints and full-model gradient checks.

mod check;
mod checkpoint;
mod config;
mod export;
mod metrics;
mod network;
mod optim;
mod train;

pub use check::{gradcheck_model, GroupCheck};
pub use checkpoint::{
    format_checkpoint, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_HEADER,
};
pub use config::{Ablations, ModelConfig, TrainPlan};
pub use export::{centroid_distance, hidden_states, read_hidden, write_hidden, HiddenRow};
pub use metrics::{bio_spans, span_counts, token_counts, Counts, MetricsReport, Prf};
pub use network::{
    label_inventory, CogAlignModel, CognitivePath, Encoded, Gold, Head, Instance, Prediction,
};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use train::{
    cognitive_objective, cognitive_substep, cross_validate, discriminator_accuracy, evaluate,
    text_objective, text_substep, train, transfer_train, EpochRecord, FitSummary, StepLosses,
    Stream, SubStep, Trainer,
};

#[cfg(test)]
mod tests;
