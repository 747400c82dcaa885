use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Ner,
    Sentiment,
    Relation,
}

impl Task {
    pub fn is_sequence(self) -> bool {
        matches!(self, Task::Ner)
    }

    /// Eye-tracking features per word: the 17 gaze measures for NER, five
    /// (FFD, NFIX, TFD, FPD, GD) for the sentence tasks.
    pub fn eye_dim(self) -> usize {
        match self {
            Task::Ner => 17,
            _ => 5,
        }
    }

    /// EEG features per word: 8 frequency bands for NER, one averaged value
    /// otherwise.
    pub fn eeg_dim(self) -> usize {
        match self {
            Task::Ner => 8,
            _ => 1,
        }
    }

    /// Cross-validation fold count.
    pub fn folds(self) -> usize {
        match self {
            Task::Relation => 5,
            _ => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Ner => "ner",
            Task::Sentiment => "sentiment",
            Task::Relation => "relation",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ner" => Ok(Task::Ner),
            "sentiment" => Ok(Task::Sentiment),
            "relation" => Ok(Task::Relation),
            _ => Err(Error::Data(format!(
                "unknown task {s:?} (expected ner, sentiment or relation)"
            ))),
        }
    }
}

/// Which cognitive channels feed the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SignalSet {
    None,
    Eye,
    Eeg,
    EyeEeg,
}

impl SignalSet {
    pub fn uses_eye(self) -> bool {
        matches!(self, SignalSet::Eye | SignalSet::EyeEeg)
    }

    pub fn uses_eeg(self) -> bool {
        matches!(self, SignalSet::Eeg | SignalSet::EyeEeg)
    }

    /// Width of the concatenated per-word cognitive vector.
    pub fn dim(self, task: Task) -> usize {
        let mut d = 0;
        if self.uses_eye() {
            d += task.eye_dim();
        }
        if self.uses_eeg() {
            d += task.eeg_dim();
        }
        d
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalSet::None => "none",
            SignalSet::Eye => "eye",
            SignalSet::Eeg => "eeg",
            SignalSet::EyeEeg => "eye+eeg",
        }
    }
}

impl fmt::Display for SignalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SignalSet::None),
            "eye" => Ok(SignalSet::Eye),
            "eeg" => Ok(SignalSet::Eeg),
            "eye+eeg" => Ok(SignalSet::EyeEeg),
            _ => Err(Error::Data(format!(
                "unknown signal set {s:?} (expected none, eye, eeg or eye+eeg)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One tag per token.
    Tags(Vec<String>),
    /// One class for the whole sentence.
    Class(String),
}

/// One sentence with optional word-level signals (one row per token).
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    pub labels: Labels,
    pub eye: Option<Vec<Vec<f64>>>,
    pub eeg: Option<Vec<Vec<f64>>>,
}

impl SentenceRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_signals(&self) -> bool {
        self.eye.is_some() || self.eeg.is_some()
    }

    pub fn tags(&self) -> Option<&[String]> {
        match &self.labels {
            Labels::Tags(t) => Some(t),
            Labels::Class(_) => None,
        }
    }

    pub fn class(&self) -> Option<&str> {
        match &self.labels {
            Labels::Class(c) => Some(c),
            Labels::Tags(_) => None,
        }
    }

    /// Per-word label: the tag, or the sentence class repeated.
    pub fn word_label(&self, i: usize) -> &str {
        match &self.labels {
            Labels::Tags(t) => &t[i],
            Labels::Class(c) => c,
        }
    }

    /// Per-word cognitive vectors for `set`, eye features first.
    pub fn cognitive(&self, set: SignalSet) -> Result<Vec<Vec<f64>>> {
        let pick = |m: &Option<Vec<Vec<f64>>>, what: &str| -> Result<Vec<Vec<f64>>> {
            let m = m
                .as_ref()
                .ok_or_else(|| Error::Data(format!("missing {what} signals at token 0")))?;
            if let Some(i) = (0..self.len()).find(|&i| m.get(i).is_none()) {
                return Err(Error::Data(format!("missing {what} signals at token {i}")));
            }
            Ok(m.clone())
        };
        let mut out = vec![Vec::new(); self.len()];
        if set.uses_eye() {
            for (o, r) in out.iter_mut().zip(pick(&self.eye, "eye")?) {
                o.extend(r);
            }
        }
        if set.uses_eeg() {
            for (o, r) in out.iter_mut().zip(pick(&self.eeg, "eeg")?) {
                o.extend(r);
            }
        }
        Ok(out)
    }

    /// Checks lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        if let Labels::Tags(t) = &self.labels {
            if t.len() != self.len() {
                return Err(Error::Data(format!(
                    "{} tags for {} tokens",
                    t.len(),
                    self.len()
                )));
            }
        }
        for (m, what) in [(&self.eye, "eye"), (&self.eeg, "eeg")] {
            if let Some(m) = m {
                if m.len() != self.len() {
                    return Err(Error::Data(format!(
                        "{} {what} rows for {} tokens",
                        m.len(),
                        self.len()
                    )));
                }
                if let Some(i) = m.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Data(format!("non-finite {what} value at token {i}")));
                }
            }
        }
        Ok(())
    }
}
