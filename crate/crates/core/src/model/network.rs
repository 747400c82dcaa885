use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::adversarial::{wire_grl, Discriminator, ModalityLabel};
use crate::autodiff::{Axis, Tensor, Var};
use crate::data::{Labels, SentenceRecord};
use crate::error::{Error, Result};
use crate::layers::{
    embed_tokens, BiLstm, CharCnn, CharVocab, EmbeddingTable, Linear, TextAwareAttention,
    WordVectors,
};
use crate::params::{ParamStore, Session};
use crate::predictors::{Classifier, Crf, TagSet};
use crate::scalar::Scalar;

/// Task head: CRF for sequence labeling, pooled softmax otherwise.
#[derive(Clone, Debug)]
pub enum Head {
    Crf(Crf),
    Classifier(Classifier),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gold {
    Tags(Vec<usize>),
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Tags(Vec<usize>),
    Class { index: usize, probs: Vec<f64> },
}

impl Head {
    fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        d_in: usize,
        sequence: bool,
        n: usize,
        rng: &mut R,
    ) -> Self {
        if sequence {
            Head::Crf(Crf::new(store, group, d_in, n, rng))
        } else {
            Head::Classifier(Classifier::new(store, group, d_in, n, rng))
        }
    }

    pub fn nll<T: Scalar>(&self, s: &mut Session<T>, h: Var, gold: &Gold) -> Result<Var> {
        match (self, gold) {
            (Head::Crf(c), Gold::Tags(t)) => c.nll(s, h, t),
            (Head::Classifier(c), Gold::Class(k)) => c.nll(s, h, *k),
            _ => Err(Error::Data(
                "gold label kind does not match the task head".into(),
            )),
        }
    }

    pub fn predict<T: Scalar>(&self, s: &mut Session<T>, h: Var) -> Result<Prediction> {
        match self {
            Head::Crf(c) => Ok(Prediction::Tags(c.decode(s, h)?.0)),
            Head::Classifier(c) => {
                let p = c.classify(s, h)?;
                let probs = s.value(p).to_f64_vec();
                let mut index = 0;
                for (i, &v) in probs.iter().enumerate() {
                    if v > probs[index] {
                        index = i;
                    }
                }
                Ok(Prediction::Class { index, probs })
            }
        }
    }
}

/// A sentence mapped to indices, ready for the graph.
#[derive(Clone, Debug)]
pub struct Instance<T> {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
    pub gold: Gold,
    /// `d_c × N` cognitive features, when present and requested.
    pub signals: Option<Tensor<T>>,
}

impl<T> Instance<T> {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Components that only the training-time cognitive path uses.
#[derive(Clone, Debug)]
pub struct CognitivePath {
    pub private: BiLstm,
    pub adapter: Linear,
    pub attention: TextAwareAttention,
    pub predictor: Head,
    pub discriminator: Discriminator,
}

/// Outputs of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `[H^p; H^s]`, `4·d_h × N`.
    pub h_prime: Var,
    /// `H^s`, `2·d_h × N`.
    pub shared: Var,
}

/// The full network: private text and cognitive encoders, the shared encoder
/// with its modality adapters, the discriminator and both task predictors.
#[derive(Debug)]
pub struct CogAlignModel<T: Scalar> {
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub embedding: EmbeddingTable<T>,
    pub char_vocab: Option<CharVocab>,
    pub char_cnn: Option<CharCnn>,
    pub store: ParamStore<T>,
    pub text_private: BiLstm,
    pub text_adapter: Linear,
    pub shared: BiLstm,
    pub text_predictor: Head,
    /// Absent when the configuration uses no signals.
    pub cognitive: Option<CognitivePath>,
    cognitive_reads: AtomicUsize,
}

impl<T: Scalar> Clone for CogAlignModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            labels: self.labels.clone(),
            embedding: self.embedding.clone(),
            char_vocab: self.char_vocab.clone(),
            char_cnn: self.char_cnn.clone(),
            store: self.store.clone(),
            text_private: self.text_private.clone(),
            text_adapter: self.text_adapter.clone(),
            shared: self.shared.clone(),
            text_predictor: self.text_predictor.clone(),
            cognitive: self.cognitive.clone(),
            cognitive_reads: AtomicUsize::new(self.cognitive_reads()),
        }
    }
}

/// Label inventory implied by `records`: BIO tags (`O`, then `B-x`/`I-x` per
/// sorted type) or sorted class names.
pub fn label_inventory(records: &[SentenceRecord], sequence: bool) -> Result<Vec<String>> {
    if sequence {
        let mut types = BTreeSet::new();
        for r in records {
            let tags = r
                .tags()
                .ok_or_else(|| Error::Data("sentence class given for a tagging task".into()))?;
            for t in tags {
                match t.split_once('-') {
                    Some(("B" | "I", ty)) if !ty.is_empty() => {
                        types.insert(ty.to_string());
                    }
                    _ if t == "O" => {}
                    _ => return Err(Error::Data(format!("tag {t:?} is not in BIO form"))),
                }
            }
        }
        let types: Vec<String> = types.into_iter().collect();
        Ok(TagSet::bio(&types).names().to_vec())
    } else {
        let mut classes = BTreeSet::new();
        for r in records {
            let c = r.class().ok_or_else(|| {
                Error::Data("per-token tags given for a classification task".into())
            })?;
            classes.insert(c.to_string());
        }
        if classes.is_empty() {
            return Err(Error::Data("no classes in training data".into()));
        }
        Ok(classes.into_iter().collect())
    }
}

impl<T: Scalar> CogAlignModel<T> {
    /// Fresh model with frozen word vectors: pretrained ones where `vectors`
    /// covers the vocabulary, random otherwise.
    pub fn build(
        config: ModelConfig,
        records: &[SentenceRecord],
        vectors: Option<&WordVectors>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let labels = label_inventory(records, config.task.is_sequence())?;
        let vocab: BTreeSet<&str> = records
            .iter()
            .flat_map(|r| r.tokens.iter().map(String::as_str))
            .collect();
        let vocab: Vec<String> = vocab.into_iter().map(String::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = match vectors {
            Some(v) => {
                if v.dim != config.word_dim {
                    return Err(Error::Data(format!(
                        "word vectors have dimension {}, config says {}",
                        v.dim, config.word_dim
                    )));
                }
                EmbeddingTable::with_pretrained(&vocab, v, &mut rng)
            }
            None => EmbeddingTable::random(&vocab, config.word_dim, &mut rng),
        };
        let char_vocab = config.use_chars.then(|| CharVocab::from_words(&vocab));
        Self::assemble(config, labels, embedding, char_vocab, &mut rng)
    }

    /// Creates every parameter group in a fixed order.
    pub fn assemble<R: Rng>(
        config: ModelConfig,
        labels: Vec<String>,
        embedding: EmbeddingTable<T>,
        char_vocab: Option<CharVocab>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Data("empty label set".into()));
        }
        if embedding.dim() != config.word_dim {
            return Err(Error::dim(
                "embedding",
                &[embedding.dim()],
                &[config.word_dim],
            ));
        }
        if config.use_chars != char_vocab.is_some() {
            return Err(Error::Data(
                "character vocabulary presence does not match model.use_chars".into(),
            ));
        }
        let mut store = ParamStore::new();
        let char_cnn = char_vocab.as_ref().map(|cv| {
            CharCnn::new(
                &mut store,
                cv.len(),
                config.char_dim,
                config.char_window,
                config.char_filters,
                rng,
            )
        });
        let (d_text, h) = (config.text_dim(), config.hidden);
        let sequence = config.task.is_sequence();
        let text_private = BiLstm::new(&mut store, "text_private", d_text, h, rng);
        let text_adapter = Linear::new(
            &mut store,
            "adapter.text",
            "proj",
            d_text,
            config.shared_dim,
            rng,
        );
        let shared = BiLstm::new(&mut store, "shared", config.shared_dim, h, rng);
        let text_predictor = Head::new(
            &mut store,
            "text_predictor",
            4 * h,
            sequence,
            labels.len(),
            rng,
        );
        let cognitive = if config.cog_dim() > 0 {
            let d_c = config.cog_dim();
            let attention = TextAwareAttention::new(&mut store, config.max_len, rng);
            let private = BiLstm::new(&mut store, "cog_private", d_c, h, rng);
            let adapter = Linear::new(
                &mut store,
                "adapter.cog",
                "proj",
                d_c,
                config.shared_dim,
                rng,
            );
            let predictor = Head::new(
                &mut store,
                "cog_predictor",
                4 * h,
                sequence,
                labels.len(),
                rng,
            );
            let discriminator = Discriminator::new(&mut store, 2 * h, rng);
            Some(CognitivePath {
                private,
                adapter,
                attention,
                predictor,
                discriminator,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            labels,
            embedding,
            char_vocab,
            char_cnn,
            store,
            text_private,
            text_adapter,
            shared,
            text_predictor,
            cognitive,
            cognitive_reads: AtomicUsize::new(0),
        })
    }

    /// Same model at another precision.
    pub fn cast<U: Scalar>(&self) -> CogAlignModel<U> {
        CogAlignModel {
            config: self.config.clone(),
            labels: self.labels.clone(),
            embedding: self.embedding.cast(),
            char_vocab: self.char_vocab.clone(),
            char_cnn: self.char_cnn.clone(),
            store: self.store.cast(),
            text_private: self.text_private.clone(),
            text_adapter: self.text_adapter.clone(),
            shared: self.shared.clone(),
            text_predictor: self.text_predictor.clone(),
            cognitive: self.cognitive.clone(),
            cognitive_reads: AtomicUsize::new(0),
        }
    }

    /// How many times cognitive inputs have been read.
    pub fn cognitive_reads(&self) -> usize {
        self.cognitive_reads.load(Ordering::Relaxed)
    }

    fn note_cognitive_read(&self) {
        self.cognitive_reads.fetch_add(1, Ordering::Relaxed);
    }

    pub fn is_sequence(&self) -> bool {
        self.config.task.is_sequence()
    }

    pub fn label_index(&self, name: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Data(format!("label {name:?} is not in the model's label set")))
    }

    fn gold(&self, record: &SentenceRecord) -> Result<Gold> {
        match (&record.labels, self.is_sequence()) {
            (Labels::Tags(t), true) => Ok(Gold::Tags(
                t.iter()
                    .map(|x| self.label_index(x))
                    .collect::<Result<_>>()?,
            )),
            (Labels::Class(c), false) => Ok(Gold::Class(self.label_index(c)?)),
            _ => Err(Error::Data(format!(
                "label kind does not match task {}",
                self.config.task
            ))),
        }
    }

    /// Text-only instance; cognitive fields of `record` are never touched.
    pub fn prepare_text(&self, record: &SentenceRecord) -> Result<Instance<T>> {
        if record.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        let chars = match &self.char_vocab {
            Some(cv) => record.tokens.iter().map(|t| cv.encode(t)).collect(),
            None => Vec::new(),
        };
        Ok(Instance {
            words: self.embedding.indices(&record.tokens),
            chars,
            gold: self.gold(record)?,
            signals: None,
        })
    }

    /// Instance including cognitive features when the record has them and
    /// the model uses them.
    pub fn prepare(&self, record: &SentenceRecord) -> Result<Instance<T>> {
        let mut inst = self.prepare_text(record)?;
        if self.cognitive.is_some() && record.has_signals() {
            self.note_cognitive_read();
            let rows = record.cognitive(self.config.signals)?;
            let (d, n) = (self.config.cog_dim(), record.len());
            let mut data = vec![T::zero(); d * n];
            for (i, row) in rows.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::Data(format!(
                        "token {i}: {} signal values, expected {d}",
                        row.len()
                    )));
                }
                for (k, &v) in row.iter().enumerate() {
                    data[k * n + i] = T::from_f64(v);
                }
            }
            inst.signals = Some(Tensor::new(vec![d, n], data)?);
        }
        Ok(inst)
    }

    pub fn prepare_all(&self, records: &[SentenceRecord]) -> Result<Vec<Instance<T>>> {
        records.iter().map(|r| self.prepare(r)).collect()
    }

    fn embed(&self, s: &mut Session<T>, inst: &Instance<T>) -> Result<Var> {
        let chars = self.char_cnn.as_ref().map(|c| (c, inst.chars.as_slice()));
        embed_tokens(s, &self.embedding, &inst.words, chars)
    }

    fn join(&self, s: &mut Session<T>, private: Var, shared: Var) -> Result<Encoded> {
        let h_prime = s.concat(&[private, shared], Axis::Rows)?;
        Ok(Encoded { h_prime, shared })
    }

    /// Text path: embeddings through the private text encoder and, via the
    /// text adapter, the shared encoder.
    pub fn forward_text(&self, s: &mut Session<T>, inst: &Instance<T>) -> Result<Encoded> {
        let x = self.embed(s, inst)?;
        let private = self.text_private.forward(s, x)?;
        let a = self.text_adapter.forward(s, x)?;
        let shared = self.shared.forward(s, a)?;
        self.join(s, private, shared)
    }

    /// Cognitive path: signals, text-aware attention (keyed on the sentence's
    /// embeddings) unless `attention` is false, then the private cognitive
    /// encoder and, via the cognitive adapter, the shared encoder.
    pub fn forward_cognitive(
        &self,
        s: &mut Session<T>,
        inst: &Instance<T>,
        attention: bool,
    ) -> Result<Encoded> {
        let cog = self.cognitive.as_ref().ok_or_else(|| {
            Error::Contract("model has no cognitive path (signals = none)".into())
        })?;
        let signals = inst
            .signals
            .as_ref()
            .ok_or_else(|| Error::Data("missing cognitive signals at token 0".into()))?;
        if signals.cols() != inst.len() {
            return Err(Error::Data(format!(
                "missing cognitive signals at token {}",
                signals.cols().min(inst.len())
            )));
        }
        self.note_cognitive_read();
        let mut c = s.constant(signals.clone());
        if attention {
            let x = self.embed(s, inst)?;
            c = cog.attention.forward(s, x, c, None)?.output;
        }
        let private = cog.private.forward(s, c)?;
        let a = cog.adapter.forward(s, c)?;
        let shared = self.shared.forward(s, a)?;
        self.join(s, private, shared)
    }

    /// Discriminator loss on `shared`, through a reversal node when `lambda`
    /// is given.
    pub fn adversarial_term(
        &self,
        s: &mut Session<T>,
        shared: Var,
        label: ModalityLabel,
        lambda: Option<T>,
    ) -> Result<Var> {
        let cog = self
            .cognitive
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no discriminator (signals = none)".into()))?;
        let branch = match lambda {
            Some(l) => wire_grl(s, shared, l)?,
            None => shared,
        };
        cog.discriminator.loss(s, branch, label)
    }

    /// Cognitive-free prediction: text path and text predictor only.
    pub fn infer(&self, record: &SentenceRecord) -> Result<Prediction> {
        let inst = self.prepare_text(record)?;
        self.infer_instance(&inst)
    }

    pub fn infer_instance(&self, inst: &Instance<T>) -> Result<Prediction> {
        let mut s = Session::infer(&self.store);
        let enc = self.forward_text(&mut s, inst)?;
        self.text_predictor.predict(&mut s, enc.h_prime)
    }

    /// Labels of a prediction, one per token.
    pub fn prediction_labels(&self, p: &Prediction, n: usize) -> Vec<String> {
        match p {
            Prediction::Tags(t) => t.iter().map(|&i| self.labels[i].clone()).collect(),
            Prediction::Class { index, .. } => vec![self.labels[*index].clone(); n],
        }
    }

    /// Trainable parameter groups in creation order.
    pub fn groups(&self) -> Vec<String> {
        self.store.groups()
    }
}
