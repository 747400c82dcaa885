//! Tab-separated sentences: one token per line, blank line between sentences.
//! Columns are `token`, `label`, then `E` eye values and `B` EEG values; a
//! line with only the first two columns carries no signals. Sentence-level
//! tasks repeat the class on every token line.

use std::fmt::Write as _;
use std::path::Path;

use super::kv::atomic_write;
use super::record::{Labels, SentenceRecord, Task};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub task: Task,
    pub eye_dim: usize,
    pub eeg_dim: usize,
}

impl Schema {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            eye_dim: task.eye_dim(),
            eeg_dim: task.eeg_dim(),
        }
    }

    fn full_width(&self) -> usize {
        2 + self.eye_dim + self.eeg_dim
    }
}

pub fn load_tsv(path: &Path, schema: Schema) -> Result<Vec<SentenceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path, schema)
}

struct Pending {
    first_line: usize,
    tokens: Vec<String>,
    labels: Vec<String>,
    signals: Option<Vec<Vec<f64>>>,
}

pub fn parse_tsv(text: &str, path: &Path, schema: Schema) -> Result<Vec<SentenceRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    let finish = |p: Pending, out: &mut Vec<SentenceRecord>| {
        let labels = if schema.task.is_sequence() {
            Labels::Tags(p.labels)
        } else {
            Labels::Class(p.labels[0].clone())
        };
        let (eye, eeg) = match p.signals {
            None => (None, None),
            Some(rows) => {
                let eye = rows.iter().map(|r| r[..schema.eye_dim].to_vec()).collect();
                let eeg = rows.iter().map(|r| r[schema.eye_dim..].to_vec()).collect();
                (Some(eye), Some(eeg))
            }
        };
        out.push(SentenceRecord {
            tokens: p.tokens,
            labels,
            eye,
            eeg,
        });
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(p) = cur.take() {
                finish(p, &mut out);
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let with_signals = match cols.len() {
            2 => false,
            n if n == schema.full_width() => true,
            n => {
                return Err(err(
                    line_no,
                    format!("expected 2 or {} columns, found {n}", schema.full_width()),
                ))
            }
        };
        let (token, label) = (cols[0], cols[1]);
        if token.is_empty() || label.is_empty() {
            return Err(err(line_no, "empty token or label".into()));
        }
        let values = if with_signals {
            let mut v = Vec::with_capacity(cols.len() - 2);
            for (j, c) in cols[2..].iter().enumerate() {
                let x: f64 = c.trim().parse().map_err(|_| {
                    err(
                        line_no,
                        format!("non-numeric signal value {c:?} in column {}", j + 3),
                    )
                })?;
                if !x.is_finite() {
                    return Err(err(
                        line_no,
                        format!("non-finite signal value {c:?} in column {}", j + 3),
                    ));
                }
                v.push(x);
            }
            Some(v)
        } else {
            None
        };

        let p = cur.get_or_insert_with(|| Pending {
            first_line: line_no,
            tokens: Vec::new(),
            labels: Vec::new(),
            signals: values.as_ref().map(|_| Vec::new()),
        });
        match (&mut p.signals, values) {
            (Some(rows), Some(v)) => rows.push(v),
            (None, None) => {}
            _ => {
                return Err(err(
                    line_no,
                    format!(
                        "signal columns inconsistent with the sentence starting at line {}",
                        p.first_line
                    ),
                ))
            }
        }
        if !schema.task.is_sequence() {
            if let Some(first) = p.labels.first() {
                if first != label {
                    return Err(err(
                        line_no,
                        format!("class {label:?} differs from sentence class {first:?}"),
                    ));
                }
            }
        }
        p.tokens.push(token.to_string());
        p.labels.push(label.to_string());
    }
    if let Some(p) = cur.take() {
        finish(p, &mut out);
    }
    Ok(out)
}

/// Renders records; the inverse of [`parse_tsv`] up to float formatting.
pub fn format_tsv(records: &[SentenceRecord], schema: Schema) -> Result<String> {
    let mut s = String::new();
    for (n, r) in records.iter().enumerate() {
        r.validate()?;
        if r.tags().is_some() != schema.task.is_sequence() {
            return Err(Error::Data(format!(
                "sentence {n}: label kind does not match task {}",
                schema.task
            )));
        }
        let signals = match (&r.eye, &r.eeg) {
            (None, None) => None,
            (Some(e), Some(g)) => {
                if e[0].len() != schema.eye_dim || g[0].len() != schema.eeg_dim {
                    return Err(Error::Data(format!(
                        "sentence {n}: signal widths do not match the schema"
                    )));
                }
                Some((e, g))
            }
            _ => {
                return Err(Error::Data(format!(
                    "sentence {n}: eye and eeg must be both present or both absent"
                )))
            }
        };
        if n > 0 {
            s.push('\n');
        }
        for (i, tok) in r.tokens.iter().enumerate() {
            if tok.contains(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "sentence {n}: token {tok:?} contains whitespace"
                )));
            }
            write!(s, "{tok}\t{}", r.word_label(i)).unwrap();
            if let Some((e, g)) = signals {
                for v in e[i].iter().chain(&g[i]) {
                    write!(s, "\t{v}").unwrap();
                }
            }
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn write_tsv(path: &Path, records: &[SentenceRecord], schema: Schema) -> Result<()> {
    atomic_write(path, format_tsv(records, schema)?.as_bytes())
}
