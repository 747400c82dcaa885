//! Per-feature z-scoring with constants fitted on the training split.

use super::kv::KeyValues;
use super::record::SentenceRecord;
use crate::error::{Error, Result};

/// Features whose standard deviation falls below this are zeroed.
pub const SD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FeatureStats {
    fn fit<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> Option<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let rows: Vec<&Vec<f64>> = rows.collect();
        for r in &rows {
            if sum.is_empty() {
                sum = vec![0.0; r.len()];
            }
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; mean.len()];
        for r in &rows {
            for ((acc, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let sd = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        Some(Self { mean, sd })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), sd) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = if *sd < SD_FLOOR { 0.0 } else { (*v - m) / sd };
        }
    }
}

/// Normalization constants for both channels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormStats {
    pub eye: Option<FeatureStats>,
    pub eeg: Option<FeatureStats>,
}

impl NormStats {
    /// Fits constants over every token row of `records` that carries signals.
    pub fn fit(records: &[SentenceRecord]) -> Self {
        Self {
            eye: FeatureStats::fit(records.iter().filter_map(|r| r.eye.as_ref()).flatten()),
            eeg: FeatureStats::fit(records.iter().filter_map(|r| r.eeg.as_ref()).flatten()),
        }
    }

    pub fn apply(&self, records: &mut [SentenceRecord]) -> Result<()> {
        for r in records.iter_mut() {
            for (m, st, what) in [
                (&mut r.eye, &self.eye, "eye"),
                (&mut r.eeg, &self.eeg, "eeg"),
            ] {
                let Some(m) = m else { continue };
                let st = st
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("no {what} normalization constants")))?;
                for row in m.iter_mut() {
                    if row.len() != st.mean.len() {
                        return Err(Error::Data(format!(
                            "{what} row has {} features, constants have {}",
                            row.len(),
                            st.mean.len()
                        )));
                    }
                    st.apply(row);
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        for (st, what) in [(&self.eye, "eye"), (&self.eeg, "eeg")] {
            if let Some(st) = st {
                kv.set_floats(&format!("{what}.mean"), &st.mean);
                kv.set_floats(&format!("{what}.sd"), &st.sd);
            }
        }
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let read = |what: &str| -> Result<Option<FeatureStats>> {
            match (
                kv.floats(&format!("{what}.mean"))?,
                kv.floats(&format!("{what}.sd"))?,
            ) {
                (None, None) => Ok(None),
                (Some(mean), Some(sd)) if mean.len() == sd.len() => {
                    Ok(Some(FeatureStats { mean, sd }))
                }
                _ => Err(Error::Data(format!(
                    "{what}: mean and sd must both be present with equal length"
                ))),
            }
        };
        Ok(Self {
            eye: read("eye")?,
            eeg: read("eeg")?,
        })
    }
}

/// Fits constants on `train` and returns the normalized copy with them.
pub fn normalize_signals(train: &[SentenceRecord]) -> Result<(Vec<SentenceRecord>, NormStats)> {
    let stats = NormStats::fit(train);
    let mut out = train.to_vec();
    stats.apply(&mut out)?;
    Ok((out, stats))
}
