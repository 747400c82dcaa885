//! Dataset records, the TSV format, signal normalization, cross-validation
//! folds and the synthetic bimodal benchmark.

mod folds;
mod kv;
mod normalize;
mod record;
mod synth;
mod tsv;

pub use folds::{make_folds, FoldPlan};
pub use kv::{atomic_write, KeyValues};
pub use normalize::{normalize_signals, FeatureStats, NormStats, SD_FLOOR};
pub use record::{Labels, SentenceRecord, SignalSet, Task};
pub use synth::{
    centroid_probe, strip_signals, synth_generate, synth_transfer, SynthSpec, SynthSplits,
    TransferSplits, TARGET_SEED_OFFSET,
};
pub use tsv::{format_tsv, load_tsv, parse_tsv, write_tsv, Schema};
