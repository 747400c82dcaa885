use std::fmt::Write as _;
use std::path::Path;

use super::network::CogAlignModel;
use crate::adversarial::ModalityLabel;
use crate::data::{atomic_write, SentenceRecord};
use crate::error::{Error, Result};
use crate::params::Session;
use crate::scalar::Scalar;

/// One word's shared-encoder state.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenRow {
    pub modality: ModalityLabel,
    pub sentence: usize,
    pub position: usize,
    pub values: Vec<f64>,
}

/// Shared-encoder states of every word: text path for every sentence, the
/// cognitive path (with attention) for sentences carrying signals.
pub fn hidden_states<T: Scalar>(
    model: &CogAlignModel<T>,
    records: &[SentenceRecord],
) -> Result<Vec<HiddenRow>> {
    let mut rows = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let inst = model.prepare(r)?;
        let mut s = Session::infer(&model.store);
        let mut encs = vec![(ModalityLabel::Textual, model.forward_text(&mut s, &inst)?)];
        if inst.signals.is_some() {
            encs.push((
                ModalityLabel::Cognitive,
                model.forward_cognitive(&mut s, &inst, true)?,
            ));
        }
        for (modality, enc) in encs {
            let h = s.value(enc.shared);
            for p in 0..h.cols() {
                rows.push(HiddenRow {
                    modality,
                    sentence: i,
                    position: p,
                    values: h.column(p).iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
    }
    Ok(rows)
}

/// Tab-separated rows `modality sentence position v1 … vk`, shortest
/// round-tripping decimals.
pub fn write_hidden(path: &Path, rows: &[HiddenRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        let _ = write!(out, "{}\t{}\t{}", r.modality.name(), r.sentence, r.position);
        for v in &r.values {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_hidden(path: &Path) -> Result<Vec<HiddenRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(bad(
                k + 1,
                "expected modality, sentence, position and values".into(),
            ));
        }
        let modality = ModalityLabel::ALL
            .into_iter()
            .find(|m| m.name() == f[0])
            .ok_or_else(|| bad(k + 1, format!("unknown modality {:?}", f[0])))?;
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| bad(k + 1, format!("{s:?}: {e}")))
        };
        let values = f[3..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| bad(k + 1, format!("{s:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        rows.push(HiddenRow {
            modality,
            sentence: int(f[1])?,
            position: int(f[2])?,
            values,
        });
    }
    Ok(rows)
}

/// Euclidean distance between the mean text row and the mean cognitive row.
pub fn centroid_distance(rows: &[HiddenRow]) -> Result<f64> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut sums = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for r in rows {
        if r.values.len() != dim {
            return Err(Error::dim("centroid_distance", &[r.values.len()], &[dim]));
        }
        let m = r.modality.index();
        counts[m] += 1;
        for (a, v) in sums[m].iter_mut().zip(&r.values) {
            *a += v;
        }
    }
    if counts.contains(&0) {
        return Err(Error::Data(
            "centroid distance needs rows of both modalities".into(),
        ));
    }
    Ok(sums[0]
        .iter()
        .zip(&sums[1])
        .map(|(a, b)| (a / counts[0] as f64 - b / counts[1] as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}
