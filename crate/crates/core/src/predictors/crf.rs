//! Linear-chain CRF with explicit START/STOP states.
//!
//! Emissions are `k × N` (tag × position). The transition table is
//! `(k+2) × (k+2)`, indexed `[from, to]`, where index `k` is START and `k+1`
//! is STOP. Entries leaving STOP or entering START are structurally `-inf`:
//! they are never read, and their stored values receive zero gradient.

use rand::Rng;

use crate::autodiff::{CustomOp, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::{ParamId, ParamStore, Session};
use crate::scalar::{log_sum_exp, Scalar};

/// Ordered tag inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagSet {
    names: Vec<String>,
}

impl TagSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("empty tag set".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Data(format!("duplicate tag {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// BIO tags for the given entity types: `O`, then `B-x`, `I-x` per type.
    pub fn bio<S: AsRef<str>>(types: &[S]) -> Self {
        let mut names = vec!["O".to_string()];
        for t in types {
            names.push(format!("B-{}", t.as_ref()));
            names.push(format!("I-{}", t.as_ref()));
        }
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn start(&self) -> usize {
        self.names.len()
    }

    pub fn stop(&self) -> usize {
        self.names.len() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn check_shapes<T: Scalar>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Result<(usize, usize)> {
    if emissions.ndim() != 2 {
        return Err(Error::dim("crf.emissions", emissions.shape(), &[0, 0]));
    }
    let (k, n) = (emissions.rows(), emissions.cols());
    if trans.shape() != [k + 2, k + 2] {
        return Err(Error::dim(
            "crf.transitions",
            trans.shape(),
            &[k + 2, k + 2],
        ));
    }
    Ok((k, n))
}

/// `Σ_i (o[y_i, i] + T[y_{i-1}, y_i]) + T[y_N, STOP]` with `y_0 = START`.
pub fn sequence_score<T: Scalar>(
    emissions: &Tensor<T>,
    trans: &Tensor<T>,
    tags: &[usize],
) -> Result<T> {
    let (k, n) = check_shapes(emissions, trans)?;
    if tags.len() != n {
        return Err(Error::Data(format!(
            "tag sequence length {} != {n} positions",
            tags.len()
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::Data(format!(
            "tag index {bad} out of range for {k} tags"
        )));
    }
    let w = k + 2;
    let t = trans.data();
    let mut score = T::zero();
    let mut prev = k;
    for (i, &y) in tags.iter().enumerate() {
        score += emissions.get(y, i) + t[prev * w + y];
        prev = y;
    }
    Ok(score + t[prev * w + k + 1])
}

/// Forward-algorithm log-space tables. `alpha[i][j]` is the log-sum of all
/// prefixes ending in tag `j` at position `i` (including emission `i`).
fn forward_table<T: Scalar>(
    emissions: &Tensor<T>,
    trans: &Tensor<T>,
    k: usize,
    n: usize,
) -> Vec<Vec<T>> {
    let w = k + 2;
    let t = trans.data();
    let mut alpha = vec![vec![T::zero(); k]; n];
    for j in 0..k {
        alpha[0][j] = t[k * w + j] + emissions.get(j, 0);
    }
    let mut buf = vec![T::zero(); k];
    for i in 1..n {
        for j in 0..k {
            for p in 0..k {
                buf[p] = alpha[i - 1][p] + t[p * w + j];
            }
            alpha[i][j] = log_sum_exp(&buf) + emissions.get(j, i);
        }
    }
    alpha
}

/// `beta[i][j]`: log-sum over suffixes after position `i` given tag `j` at `i`
/// (excluding emission `i`, including the STOP transition).
fn backward_table<T: Scalar>(
    emissions: &Tensor<T>,
    trans: &Tensor<T>,
    k: usize,
    n: usize,
) -> Vec<Vec<T>> {
    let w = k + 2;
    let t = trans.data();
    let mut beta = vec![vec![T::zero(); k]; n];
    for j in 0..k {
        beta[n - 1][j] = t[j * w + k + 1];
    }
    let mut buf = vec![T::zero(); k];
    for i in (0..n - 1).rev() {
        for p in 0..k {
            for j in 0..k {
                buf[j] = t[p * w + j] + emissions.get(j, i + 1) + beta[i + 1][j];
            }
            beta[i][p] = log_sum_exp(&buf);
        }
    }
    beta
}

/// `log Σ_y exp(score(y))` over all `k^N` tag paths.
pub fn log_partition<T: Scalar>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Result<T> {
    let (k, n) = check_shapes(emissions, trans)?;
    let alpha = forward_table(emissions, trans, k, n);
    let w = k + 2;
    let last: Vec<T> = (0..k)
        .map(|j| alpha[n - 1][j] + trans.data()[j * w + k + 1])
        .collect();
    Ok(log_sum_exp(&last))
}

/// Negative log-likelihood of `gold`.
pub fn nll<T: Scalar>(emissions: &Tensor<T>, trans: &Tensor<T>, gold: &[usize]) -> Result<T> {
    // rounding can leave a single dominant path a hair below zero
    Ok((log_partition(emissions, trans)? - sequence_score(emissions, trans, gold)?).max(T::zero()))
}

/// Gradients of the NLL: posterior marginals minus gold indicator counts.
fn nll_gradients<T: Scalar>(
    emissions: &Tensor<T>,
    trans: &Tensor<T>,
    gold: &[usize],
) -> (T, Vec<T>, Vec<T>) {
    let (k, n) = (emissions.rows(), emissions.cols());
    let w = k + 2;
    let t = trans.data();
    let alpha = forward_table(emissions, trans, k, n);
    let beta = backward_table(emissions, trans, k, n);
    let last: Vec<T> = (0..k).map(|j| alpha[n - 1][j] + t[j * w + k + 1]).collect();
    let log_z = log_sum_exp(&last);

    let mut d_emit = vec![T::zero(); k * n];
    let mut d_trans = vec![T::zero(); w * w];
    for i in 0..n {
        for j in 0..k {
            let m = (alpha[i][j] + beta[i][j] - log_z).exp();
            d_emit[j * n + i] += m;
        }
    }
    for j in 0..k {
        d_trans[k * w + j] += (t[k * w + j] + emissions.get(j, 0) + beta[0][j] - log_z).exp();
        d_trans[j * w + k + 1] += (alpha[n - 1][j] + t[j * w + k + 1] - log_z).exp();
    }
    for i in 0..n - 1 {
        for p in 0..k {
            for j in 0..k {
                let m = (alpha[i][p] + t[p * w + j] + emissions.get(j, i + 1) + beta[i + 1][j]
                    - log_z)
                    .exp();
                d_trans[p * w + j] += m;
            }
        }
    }
    let mut prev = k;
    let mut gold_score = T::zero();
    for (i, &y) in gold.iter().enumerate() {
        d_emit[y * n + i] -= T::one();
        d_trans[prev * w + y] -= T::one();
        gold_score += emissions.get(y, i) + t[prev * w + y];
        prev = y;
    }
    d_trans[prev * w + k + 1] -= T::one();
    gold_score += t[prev * w + k + 1];
    ((log_z - gold_score).max(T::zero()), d_emit, d_trans)
}

/// Highest-scoring path and its score. Among equal-scoring paths the
/// lexicographically smallest tag sequence wins.
pub fn viterbi<T: Scalar>(emissions: &Tensor<T>, trans: &Tensor<T>) -> Result<(Vec<usize>, T)> {
    let (k, n) = check_shapes(emissions, trans)?;
    let w = k + 2;
    let t = trans.data();
    // best[i][j]: best suffix score from position i with tag j, excluding emission i
    let mut best = vec![vec![T::zero(); k]; n];
    for j in 0..k {
        best[n - 1][j] = t[j * w + k + 1];
    }
    for i in (0..n - 1).rev() {
        for p in 0..k {
            let mut m = T::neg_infinity();
            for j in 0..k {
                let v = t[p * w + j] + emissions.get(j, i + 1) + best[i + 1][j];
                if v > m {
                    m = v;
                }
            }
            best[i][p] = m;
        }
    }
    // walk forward choosing the smallest maximizing tag at each step
    let mut path = Vec::with_capacity(n);
    let mut prev = k;
    for i in 0..n {
        let mut arg = 0;
        let mut m = T::neg_infinity();
        for j in 0..k {
            let v = t[prev * w + j] + emissions.get(j, i) + best[i][j];
            if v > m {
                m = v;
                arg = j;
            }
        }
        path.push(arg);
        prev = arg;
    }
    let score = sequence_score(emissions, trans, &path)?;
    Ok((path, score))
}

struct CrfNllOp<T> {
    d_emit: Vec<T>,
    d_trans: Vec<T>,
}

impl<T: Scalar> CustomOp<T> for CrfNllOp<T> {
    fn name(&self) -> &str {
        "crf_nll"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &[T],
    ) -> Vec<Option<Vec<T>>> {
        let g = grad[0];
        vec![
            Some(self.d_emit.iter().map(|&v| v * g).collect()),
            Some(self.d_trans.iter().map(|&v| v * g).collect()),
        ]
    }
}

/// Records the CRF negative log-likelihood as a scalar node.
pub fn nll_node<T: Scalar>(
    s: &mut Session<T>,
    emissions: Var,
    trans: Var,
    gold: &[usize],
) -> Result<Var> {
    let (e, t) = (s.value(emissions), s.value(trans));
    // validates shapes and tags
    sequence_score(e, t, gold)?;
    let (value, d_emit, d_trans) = nll_gradients(e, t, gold);
    Ok(s.custom(
        &[emissions, trans],
        Tensor::scalar(value),
        Box::new(CrfNllOp { d_emit, d_trans }),
    ))
}

/// CRF predictor: emission projection plus transition table.
#[derive(Clone, Debug)]
pub struct Crf {
    pub n_tags: usize,
    pub emission: Linear,
    pub transitions: ParamId,
}

impl Crf {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        d_in: usize,
        n_tags: usize,
        rng: &mut R,
    ) -> Self {
        let emission = Linear::new(store, group, "emission", d_in, n_tags, rng);
        let transitions = store.add(
            group,
            "transitions",
            Tensor::zeros(&[n_tags + 2, n_tags + 2]),
        );
        Self {
            n_tags,
            emission,
            transitions,
        }
    }

    /// `|tags| × N` emission scores for features `h: d_in × N`.
    pub fn emissions<T: Scalar>(&self, s: &mut Session<T>, h: Var) -> Result<Var> {
        self.emission.forward(s, h)
    }

    pub fn nll<T: Scalar>(&self, s: &mut Session<T>, h: Var, gold: &[usize]) -> Result<Var> {
        let e = self.emissions(s, h)?;
        let t = s.param(self.transitions);
        nll_node(s, e, t, gold)
    }

    pub fn decode<T: Scalar>(&self, s: &mut Session<T>, h: Var) -> Result<(Vec<usize>, T)> {
        let e = self.emissions(s, h)?;
        let t = s.param(self.transitions);
        viterbi(s.value(e), s.value(t))
    }

    /// Transition score with the structural `-inf` entries applied.
    pub fn transition<T: Scalar>(&self, store: &ParamStore<T>, from: usize, to: usize) -> T {
        let k = self.n_tags;
        if from == k + 1 || to == k {
            return T::neg_infinity();
        }
        store.get(self.transitions).get(from, to)
    }
}
