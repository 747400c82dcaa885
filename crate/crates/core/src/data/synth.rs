//! Synthetic bimodal benchmark.
//!
//! Tokens come from a tag-conditioned unigram model: every label owns a slice
//! of the vocabulary, and with probability `ambiguity` a token is drawn from a
//! shared pool instead. Both signal channels encode the word label as
//! `rho * code(label) + (1 - rho) * noise * eps` with standard normal `eps`,
//! where `code` is a one-hot vector when the channel is wide enough and a
//! fixed cosine code otherwise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kv::KeyValues;
use super::record::{Labels, SentenceRecord, SignalSet, Task};
use crate::error::{Error, Result};
use crate::predictors::TagSet;

const ENTITY_TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub task: Task,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Entity types for NER, classes otherwise.
    pub n_labels: usize,
    pub eye_dim: usize,
    pub eeg_dim: usize,
    pub rho: f64,
    pub noise: f64,
    pub ambiguity: f64,
    /// Chance of opening an entity at an `O` position (NER only).
    pub entity_rate: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            vocab_size: 200,
            min_len: 5,
            max_len: 12,
            n_labels: if task.is_sequence() { 2 } else { 3 },
            eye_dim: task.eye_dim(),
            eeg_dim: task.eeg_dim(),
            rho: 0.8,
            noise: 1.0,
            ambiguity: 0.3,
            entity_rate: 0.3,
            n_train: 200,
            n_dev: 50,
            n_test: 50,
            seed: 1,
        }
    }

    /// Tag names (NER) or class names, in index order.
    pub fn label_names(&self) -> Vec<String> {
        if self.task.is_sequence() {
            let types: Vec<String> = (0..self.n_labels).map(entity_type).collect();
            TagSet::bio(&types).names().to_vec()
        } else {
            (0..self.n_labels).map(|c| format!("c{c}")).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("synthetic spec: {m}")));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return bad("ambiguity must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.entity_rate) {
            return bad("entity_rate must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and >= 0");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.n_labels == 0 {
            return bad("need at least one label");
        }
        if self.eye_dim == 0 || self.eeg_dim == 0 {
            return bad("signal dimensions must be positive");
        }
        let groups = self.vocab_groups();
        if self.vocab_size < 2 * groups {
            return bad("vocabulary too small for the label scheme");
        }
        Ok(())
    }

    /// Label groups owning vocabulary: `O` plus one per entity type, or one
    /// per class.
    fn vocab_groups(&self) -> usize {
        if self.task.is_sequence() {
            self.n_labels + 1
        } else {
            self.n_labels
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("task", self.task);
        kv.set("vocab_size", self.vocab_size);
        kv.set("min_len", self.min_len);
        kv.set("max_len", self.max_len);
        kv.set("n_labels", self.n_labels);
        kv.set("eye_dim", self.eye_dim);
        kv.set("eeg_dim", self.eeg_dim);
        kv.set("rho", self.rho);
        kv.set("noise", self.noise);
        kv.set("ambiguity", self.ambiguity);
        kv.set("entity_rate", self.entity_rate);
        kv.set("n_train", self.n_train);
        kv.set("n_dev", self.n_dev);
        kv.set("n_test", self.n_test);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads a spec; missing keys keep the defaults for the task.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let task: Task = kv.parsed("task")?.unwrap_or(Task::Ner);
        let mut s = Self::new(task);
        macro_rules! read {
            ($($f:ident),*) => {$(
                if let Some(v) = kv.parsed(stringify!($f))? {
                    s.$f = v;
                }
            )*};
        }
        read!(
            vocab_size,
            min_len,
            max_len,
            n_labels,
            eye_dim,
            eeg_dim,
            rho,
            noise,
            ambiguity,
            entity_rate,
            n_train,
            n_dev,
            n_test,
            seed
        );
        s.validate()?;
        Ok(s)
    }
}

fn entity_type(i: usize) -> String {
    ENTITY_TYPES
        .get(i)
        .map_or_else(|| format!("T{i}"), |s| s.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSplits {
    pub train: Vec<SentenceRecord>,
    pub dev: Vec<SentenceRecord>,
    pub test: Vec<SentenceRecord>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    /// `[lo, hi)` token id range per vocabulary group, then the shared pool.
    groups: Vec<(usize, usize)>,
    shared: (usize, usize),
    eye_codes: Vec<Vec<f64>>,
    eeg_codes: Vec<Vec<f64>>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let g = spec.vocab_groups();
        let n_shared = spec.vocab_size / (g + 1);
        let per = (spec.vocab_size - n_shared) / g;
        let groups = (0..g).map(|i| (i * per, (i + 1) * per)).collect();
        let shared = (g * per, spec.vocab_size);
        let n_labels = spec.label_names().len();
        let eye_codes = codes(n_labels, spec.eye_dim);
        let eeg_codes = codes(n_labels, spec.eeg_dim);
        Self {
            spec,
            rng,
            groups,
            shared,
            eye_codes,
            eeg_codes,
        }
    }

    fn token(&mut self, group: usize) -> String {
        let (lo, hi) = if self.rng.random::<f64>() < self.spec.ambiguity {
            self.shared
        } else {
            self.groups[group]
        };
        format!("w{}", self.rng.random_range(lo..hi))
    }

    fn signal(&mut self, code: &[f64]) -> Vec<f64> {
        let (rho, noise) = (self.spec.rho, self.spec.noise);
        code.iter()
            .map(|&c| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                rho * c + (1.0 - rho) * noise * e
            })
            .collect()
    }

    /// BIO tag indices; entities of 1-3 tokens, always separated by `O`.
    fn tag_sequence(&mut self, n: usize) -> Vec<usize> {
        let mut tags = Vec::with_capacity(n);
        while tags.len() < n {
            let after_entity = tags.last().is_some_and(|&t| t != 0);
            if !after_entity && self.rng.random::<f64>() < self.spec.entity_rate {
                let ty = self.rng.random_range(0..self.spec.n_labels);
                let len = self.rng.random_range(1..=3).min(n - tags.len());
                tags.push(1 + 2 * ty);
                tags.extend(std::iter::repeat_n(2 + 2 * ty, len - 1));
            } else {
                tags.push(0);
            }
        }
        tags
    }

    fn sentence(&mut self, names: &[String]) -> SentenceRecord {
        let n = self.rng.random_range(self.spec.min_len..=self.spec.max_len);
        let (word_labels, labels) = if self.spec.task.is_sequence() {
            let tags = self.tag_sequence(n);
            let l = Labels::Tags(tags.iter().map(|&t| names[t].clone()).collect());
            (tags, l)
        } else {
            let c = self.rng.random_range(0..self.spec.n_labels);
            (vec![c; n], Labels::Class(names[c].clone()))
        };
        let mut tokens = Vec::with_capacity(n);
        let (mut eye, mut eeg) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &l in &word_labels {
            // B-x and I-x share the vocabulary of type x
            let group = if self.spec.task.is_sequence() {
                l.div_ceil(2)
            } else {
                l
            };
            tokens.push(self.token(group));
            let (ec, gc) = (self.eye_codes[l].clone(), self.eeg_codes[l].clone());
            eye.push(self.signal(&ec));
            eeg.push(self.signal(&gc));
        }
        SentenceRecord {
            tokens,
            labels,
            eye: Some(eye),
            eeg: Some(eeg),
        }
    }
}

/// One-hot codes when `dim >= n`; otherwise `cos(pi (l+1)(j+1) / (n+1))`,
/// which keeps the labels apart even in a single dimension.
fn codes(n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|l| {
            (0..dim)
                .map(|j| {
                    if dim >= n {
                        if j == l {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (std::f64::consts::PI * ((l + 1) * (j + 1)) as f64 / (n + 1) as f64).cos()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthSplits> {
    spec.validate()?;
    let names = spec.label_names();
    let mut g = Generator::new(spec);
    let mut take = |n: usize| (0..n).map(|_| g.sentence(&names)).collect::<Vec<_>>();
    let train = take(spec.n_train);
    let dev = take(spec.n_dev);
    let test = take(spec.n_test);
    Ok(SynthSplits { train, dev, test })
}

/// Source and target streams for transfer experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferSplits {
    /// Signal-bearing sentences (`spec.n_train` of them).
    pub source: Vec<SentenceRecord>,
    /// Signal-free target sentences drawn with a different seed.
    pub target_train: Vec<SentenceRecord>,
    pub target_dev: Vec<SentenceRecord>,
    pub target_test: Vec<SentenceRecord>,
}

/// Seed offset of the target stream.
pub const TARGET_SEED_OFFSET: u64 = 1_000_003;

/// Both streams share the vocabulary and label scheme; the target one is a
/// fresh sample of `n_target` training sentences plus `spec.n_dev` and
/// `spec.n_test` held-out ones, all without signals.
pub fn synth_transfer(spec: &SynthSpec, n_target: usize) -> Result<TransferSplits> {
    let source = synth_generate(spec)?.train;
    let target = synth_generate(&SynthSpec {
        n_train: n_target,
        seed: spec.seed.wrapping_add(TARGET_SEED_OFFSET),
        ..spec.clone()
    })?;
    Ok(TransferSplits {
        source,
        target_train: strip_signals(&target.train),
        target_dev: strip_signals(&target.dev),
        target_test: strip_signals(&target.test),
    })
}

/// Copies of `records` with both signal channels removed.
pub fn strip_signals(records: &[SentenceRecord]) -> Vec<SentenceRecord> {
    records
        .iter()
        .map(|r| SentenceRecord {
            eye: None,
            eeg: None,
            ..r.clone()
        })
        .collect()
}

/// Word-level nearest-centroid probe: fits one centroid per label on `train`
/// signals and returns accuracy on `test`. Ties go to the label that sorts
/// first.
pub fn centroid_probe(
    train: &[SentenceRecord],
    test: &[SentenceRecord],
    set: SignalSet,
) -> Result<f64> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in train {
        for (i, v) in r.cognitive(set)?.into_iter().enumerate() {
            let e = sums
                .entry(r.word_label(i).to_string())
                .or_insert_with(|| (vec![0.0; v.len()], 0));
            for (a, b) in e.0.iter_mut().zip(&v) {
                *a += b;
            }
            e.1 += 1;
        }
    }
    let centroids: Vec<(String, Vec<f64>)> = sums
        .into_iter()
        .map(|(l, (s, n))| (l, s.iter().map(|v| v / n as f64).collect()))
        .collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for r in test {
        for (i, v) in r.cognitive(set)?.into_iter().enumerate() {
            let mut best: Option<(&str, f64)> = None;
            for (l, c) in &centroids {
                let d: f64 = c.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((l, d));
                }
            }
            total += 1;
            if best.is_some_and(|(l, _)| l == r.word_label(i)) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Data("probe test set has no words".into()));
    }
    Ok(hit as f64 / total as f64)
}
