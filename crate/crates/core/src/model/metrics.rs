//! Precision / recall / F1 bookkeeping.
//!
//! Conventions: precision is 0 when nothing was predicted, recall is 0 when
//! nothing was gold, F1 is 0 when both are 0. The one exception is an empty
//! prediction set against an empty gold set, which counts as perfect.

use std::collections::BTreeSet;

use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    pub fn from_counts(c: Counts) -> Self {
        if c.pred == 0 && c.gold == 0 {
            return Self::new(1.0, 1.0);
        }
        let p = if c.pred == 0 {
            0.0
        } else {
            c.tp as f64 / c.pred as f64
        };
        let r = if c.gold == 0 {
            0.0
        } else {
            c.tp as f64 / c.gold as f64
        };
        Self::new(p, r)
    }

    fn mean(xs: &[Prf]) -> Prf {
        let n = xs.len().max(1) as f64;
        Prf {
            precision: xs.iter().map(|x| x.precision).sum::<f64>() / n,
            recall: xs.iter().map(|x| x.recall).sum::<f64>() / n,
            f1: xs.iter().map(|x| x.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.pred += o.pred;
        self.gold += o.gold;
    }
}

/// Entity spans `(type, start, end_exclusive)` of a BIO sequence. An `I-x`
/// that does not continue an `x` span opens a new one.
pub fn bio_spans<S: AsRef<str>>(tags: &[S]) -> BTreeSet<(String, usize, usize)> {
    let mut out = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        let (kind, ty) = match t.split_once('-') {
            Some((k @ ("B" | "I"), ty)) => (k, ty),
            _ => ("O", ""),
        };
        let continues = kind == "I" && open.as_ref().is_some_and(|(o, _)| o == ty);
        if !continues {
            if let Some((o, s)) = open.take() {
                out.insert((o, s, i));
            }
            if kind != "O" {
                open = Some((ty.to_string(), i));
            }
        }
    }
    if let Some((o, s)) = open {
        out.insert((o, s, tags.len()));
    }
    out
}

pub fn span_counts<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Counts {
    let (g, p) = (bio_spans(gold), bio_spans(pred));
    Counts {
        tp: g.intersection(&p).count(),
        pred: p.len(),
        gold: g.len(),
    }
}

/// Token-level counts over non-`O` tokens.
pub fn token_counts<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Counts {
    let mut c = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if p != "O" {
            c.pred += 1;
        }
        if g != "O" {
            c.gold += 1;
        }
        if g != "O" && g == p {
            c.tp += 1;
        }
    }
    c
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub sentences: usize,
    /// Span-level micro scores (sequence labeling).
    pub span: Option<Prf>,
    /// Token-level micro scores over entity tokens (sequence labeling).
    pub token: Option<Prf>,
    /// Macro-averaged scores over classes (classification).
    #[serde(rename = "macro")]
    pub macro_avg: Option<Prf>,
    /// Token accuracy (sequence labeling) or sentence accuracy.
    pub accuracy: f64,
    pub discriminator_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<MetricsReport>,
}

impl MetricsReport {
    /// Headline score: span F1 or macro F1.
    pub fn f1(&self) -> f64 {
        self.span.or(self.macro_avg).map_or(0.0, |p| p.f1)
    }

    pub fn headline(&self) -> Option<Prf> {
        self.span.or(self.macro_avg)
    }

    /// Scores for tag sequences.
    pub fn sequence<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Self {
        let (mut span, mut token) = (Counts::default(), Counts::default());
        let (mut right, mut total) = (0usize, 0usize);
        for (g, p) in gold.iter().zip(pred) {
            span += span_counts(g, p);
            token += token_counts(g, p);
            right += g
                .iter()
                .zip(p)
                .filter(|(a, b)| a.as_ref() == b.as_ref())
                .count();
            total += g.len();
        }
        Self {
            sentences: gold.len(),
            span: Some(Prf::from_counts(span)),
            token: Some(Prf::from_counts(token)),
            accuracy: if total == 0 {
                0.0
            } else {
                right as f64 / total as f64
            },
            ..Self::default()
        }
    }

    /// Macro scores over the classes occurring in `gold` or `pred`.
    pub fn classification(gold: &[usize], pred: &[usize]) -> Self {
        let classes: BTreeSet<usize> = gold.iter().chain(pred).copied().collect();
        let per: Vec<Prf> = classes
            .iter()
            .map(|&c| {
                let mut k = Counts::default();
                for (&g, &p) in gold.iter().zip(pred) {
                    k.tp += usize::from(g == c && p == c);
                    k.pred += usize::from(p == c);
                    k.gold += usize::from(g == c);
                }
                Prf::from_counts(k)
            })
            .collect();
        let right = gold.iter().zip(pred).filter(|(a, b)| a == b).count();
        Self {
            sentences: gold.len(),
            macro_avg: Some(Prf::mean(&per)),
            accuracy: if gold.is_empty() {
                0.0
            } else {
                right as f64 / gold.len() as f64
            },
            ..Self::default()
        }
    }

    /// Mean over folds, keeping each fold's report.
    pub fn mean_of(folds: Vec<MetricsReport>) -> Self {
        let n = folds.len().max(1) as f64;
        let avg = |f: &dyn Fn(&MetricsReport) -> Option<Prf>| -> Option<Prf> {
            let xs: Vec<Prf> = folds.iter().filter_map(f).collect();
            (!xs.is_empty()).then(|| Prf::mean(&xs))
        };
        let disc: Vec<f64> = folds
            .iter()
            .filter_map(|r| r.discriminator_accuracy)
            .collect();
        Self {
            sentences: folds.iter().map(|r| r.sentences).sum(),
            span: avg(&|r| r.span),
            token: avg(&|r| r.token),
            macro_avg: avg(&|r| r.macro_avg),
            accuracy: folds.iter().map(|r| r.accuracy).sum::<f64>() / n,
            discriminator_accuracy: (!disc.is_empty())
                .then(|| disc.iter().sum::<f64>() / disc.len() as f64),
            folds,
        }
    }
}
