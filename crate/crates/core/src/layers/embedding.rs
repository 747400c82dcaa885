use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Axis, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{xavier, ParamId, ParamStore, Session};
use crate::scalar::Scalar;

pub const UNK_WORD: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

/// Word lookup table. Row [`UNK_INDEX`] is reserved for unseen tokens.
#[derive(Clone, Debug)]
pub struct EmbeddingTable<T> {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor<T>,
    frozen: bool,
    param: Option<ParamId>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// `words[0]` must be [`UNK_WORD`]; `matrix` is `words.len() × dim`.
    pub fn new(words: Vec<String>, matrix: Tensor<T>) -> Result<Self> {
        if words.first().map(String::as_str) != Some(UNK_WORD) {
            return Err(Error::Data(format!(
                "embedding vocabulary must start with {UNK_WORD}"
            )));
        }
        if matrix.ndim() != 2 || matrix.rows() != words.len() {
            return Err(Error::dim("embedding", matrix.shape(), &[words.len()]));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!(
                    "duplicate word {w:?} in embedding vocabulary"
                )));
            }
        }
        Ok(Self {
            words,
            index,
            matrix,
            frozen: true,
            param: None,
        })
    }

    /// Random N(0, 1/dim) vectors for `vocab` (UNK is prepended).
    pub fn random<R: Rng>(vocab: &[String], dim: usize, rng: &mut R) -> Self {
        let mut words = vec![UNK_WORD.to_string()];
        let mut seen = std::collections::HashSet::new();
        seen.insert(UNK_WORD);
        words.extend(vocab.iter().filter(|w| seen.insert(w.as_str())).cloned());
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid normal");
        let data = (0..words.len() * dim)
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        let n = words.len();
        Self::new(words, Tensor::from_raw(vec![n, dim], data)).expect("consistent vocabulary")
    }

    /// Pretrained vectors for the words the file covers; random vectors for the
    /// remaining words of `vocab`.
    pub fn with_pretrained<R: Rng>(vocab: &[String], vectors: &WordVectors, rng: &mut R) -> Self {
        let mut table = Self::random(vocab, vectors.dim, rng);
        for (w, v) in vectors.words.iter().zip(&vectors.vectors) {
            if let Some(&i) = table.index.get(w) {
                let d = vectors.dim;
                for (k, &x) in v.iter().enumerate() {
                    table.matrix.data_mut()[i * d + k] = T::from_f64(x);
                }
            }
        }
        table
    }

    /// Makes the table trainable by moving its matrix into `store`.
    pub fn unfreeze(&mut self, store: &mut ParamStore<T>) {
        if self.frozen {
            self.param = Some(store.add("embedding.word", "matrix", self.matrix.clone()));
            self.frozen = false;
        }
    }

    /// Same table at another precision. A trainable table keeps its parameter
    /// id, so cast the owning store alongside it.
    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable {
            words: self.words.clone(),
            index: self.index.clone(),
            matrix: self.matrix.cast(),
            frozen: self.frozen,
            param: self.param,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    /// Index of `token`, falling back to [`UNK_INDEX`].
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn indices<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t.as_ref())).collect()
    }

    /// `d × N` matrix whose column `i` is the vector of `indices[i]`.
    pub fn lookup(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let d = self.dim();
        let n = indices.len();
        if n == 0 {
            return Err(Error::Data("empty token sequence".into()));
        }
        let mut out = vec![T::zero(); d * n];
        for (j, &ix) in indices.iter().enumerate() {
            if ix >= self.len() {
                return Err(Error::Data(format!(
                    "token index {ix} outside vocabulary of {}",
                    self.len()
                )));
            }
            for k in 0..d {
                out[k * n + j] = self.matrix.data()[ix * d + k];
            }
        }
        Ok(Tensor::from_raw(vec![d, n], out))
    }

    /// Embeds a token index sequence as a `d × N` node.
    pub fn embed(&self, s: &mut Session<T>, indices: &[usize]) -> Result<Var> {
        match self.param {
            Some(p) if !self.frozen => {
                if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
                    return Err(Error::Data(format!(
                        "token index {bad} outside vocabulary of {}",
                        self.len()
                    )));
                }
                let m = s.param(p);
                let mt = s.transpose(m)?;
                s.select_cols(mt, indices)
            }
            _ => {
                let t = self.lookup(indices)?;
                Ok(s.constant(t))
            }
        }
    }
}

/// Plain-text word vectors: one token per line followed by its reals.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub words: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl WordVectors {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut dim = 0;
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            // optional "count dim" header
            if lineno == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok())
            {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let vals = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err("non-numeric vector component".into()))?;
            if vals.is_empty() {
                return Err(err("token without vector".into()));
            }
            if dim == 0 {
                dim = vals.len();
            } else if vals.len() != dim {
                return Err(err(format!(
                    "expected {dim} components, found {}",
                    vals.len()
                )));
            }
            words.push(fields[0].to_string());
            vectors.push(vals);
        }
        if dim == 0 {
            return Err(Error::Data(format!("{}: no vectors", path.display())));
        }
        Ok(Self {
            dim,
            words,
            vectors,
        })
    }
}

pub const PAD_CHAR: usize = 0;
pub const UNK_CHAR: usize = 1;

/// Character inventory for the character CNN. Index 0 pads, index 1 is unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut chars: Vec<char> = words.iter().flat_map(|w| w.as_ref().chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        Self { chars }
    }

    pub fn from_chars(mut chars: Vec<char>) -> Self {
        chars.sort_unstable();
        chars.dedup();
        Self { chars }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Vocabulary size including the pad and unknown slots.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars()
            .map(|c| self.chars.binary_search(&c).map_or(UNK_CHAR, |i| i + 2))
            .collect()
    }
}

/// Character-level CNN: embed characters, convolve with `filters` windows of
/// width `window`, max-pool over positions.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub char_dim: usize,
    pub window: usize,
    pub filters: usize,
    pub emb: ParamId,
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl CharCnn {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        n_chars: usize,
        char_dim: usize,
        window: usize,
        filters: usize,
        rng: &mut R,
    ) -> Self {
        let group = "embedding.char";
        let normal = Normal::new(0.0, (1.0 / char_dim as f64).sqrt()).expect("valid normal");
        let emb_data = (0..char_dim * n_chars)
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        let emb = store.add(
            group,
            "emb",
            Tensor::from_raw(vec![char_dim, n_chars], emb_data),
        );
        let kernel = store.add(group, "kernel", xavier(rng, filters, window * char_dim));
        let bias = store.add(group, "bias", Tensor::zeros(&[filters]));
        Self {
            char_dim,
            window,
            filters,
            emb,
            kernel,
            bias,
        }
    }

    fn padded(&self, word: &[usize]) -> Vec<usize> {
        let mut w = word.to_vec();
        while w.len() < self.window {
            w.push(PAD_CHAR);
        }
        w
    }

    /// Length-`filters` vector for one word of character indices.
    pub fn embed_word<T: Scalar>(&self, s: &mut Session<T>, word: &[usize]) -> Result<Var> {
        let m = self.embed_words(s, &[word.to_vec()])?;
        s.reshape(m, &[self.filters])
    }

    /// `filters × N` matrix, one column per word.
    pub fn embed_words<T: Scalar>(&self, s: &mut Session<T>, words: &[Vec<usize>]) -> Result<Var> {
        if words.iter().any(Vec::is_empty) {
            return Err(Error::Data("empty word passed to character CNN".into()));
        }
        let n_chars = s.store().get(self.emb).cols();
        let padded: Vec<Vec<usize>> = words.iter().map(|w| self.padded(w)).collect();
        // window offset -> flat list of character indices across all conv positions
        let mut spans = Vec::with_capacity(words.len());
        let mut per_offset: Vec<Vec<usize>> = vec![Vec::new(); self.window];
        let mut start = 0;
        for w in &padded {
            let positions = w.len() - self.window + 1;
            for p in 0..positions {
                for (o, list) in per_offset.iter_mut().enumerate() {
                    let c = w[p + o];
                    list.push(if c < n_chars { c } else { UNK_CHAR });
                }
            }
            spans.push(start..start + positions);
            start += positions;
        }
        let emb = s.param(self.emb);
        let mut blocks = Vec::with_capacity(self.window);
        for list in &per_offset {
            blocks.push(s.select_cols(emb, list)?);
        }
        let unfolded = s.concat(&blocks, Axis::Rows)?;
        let k = s.param(self.kernel);
        let b = s.param(self.bias);
        let conv = s.matmul(k, unfolded)?;
        let conv = s.add_col_bias(conv, b)?;
        let conv_t = s.transpose(conv)?;
        let mut cols = Vec::with_capacity(words.len());
        for span in spans {
            let block = s.slice(conv_t, span, 0..self.filters)?;
            let pooled = s.max_over_rows(block)?;
            cols.push(s.reshape(pooled, &[self.filters, 1])?);
        }
        s.concat(&cols, Axis::Cols)
    }
}

/// Word (and optionally character) representation of a sentence as a `d × N` node.
pub fn embed_tokens<T: Scalar>(
    s: &mut Session<T>,
    table: &EmbeddingTable<T>,
    word_indices: &[usize],
    chars: Option<(&CharCnn, &[Vec<usize>])>,
) -> Result<Var> {
    let words = table.embed(s, word_indices)?;
    match chars {
        None => Ok(words),
        Some((cnn, char_seqs)) => {
            if char_seqs.len() != word_indices.len() {
                return Err(Error::dim(
                    "embed_tokens",
                    &[word_indices.len()],
                    &[char_seqs.len()],
                ));
            }
            let c = cnn.embed_words(s, char_seqs)?;
            s.concat(&[words, c], Axis::Rows)
        }
    }
}
