use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::SentenceRecord;
use crate::error::{Error, Result};

/// Assignment of each record to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// `assignment[i]` is the fold of record `i`.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// Record indices per fold.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.folds().iter().map(Vec::len).collect()
    }

    /// `(train, test)` indices with fold `i` held out.
    pub fn split(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&r| self.assignment[r] != i)
    }
}

/// Seeded shuffle, then round-robin assignment.
///
/// The shuffle runs over records sorted by content (with duplicates told apart
/// by occurrence), so permuting the input leaves every record's fold
/// unchanged.
pub fn make_folds(records: &[SentenceRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    let n = records.len();
    if k == 0 || k > n {
        return Err(Error::Contract(format!(
            "cannot split {n} records into {k} folds"
        )));
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut keyed: Vec<(String, usize, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let key = format!("{}\u{1}{:?}", r.tokens.join("\u{0}"), r.labels);
            let c = seen.entry(key.clone()).or_default();
            *c += 1;
            (key, *c, i)
        })
        .collect();
    keyed.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keyed.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, (_, _, i)) in keyed.iter().enumerate() {
        assignment[*i] = pos % k;
    }
    Ok(FoldPlan { k, assignment })
}
