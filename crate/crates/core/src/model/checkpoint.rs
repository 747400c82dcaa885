//! Text checkpoints.
//!
//! ```text
//! cogalign-checkpoint 1
//! digest <sha256 of the config lines>
//! config <n>        n lines key=value
//! extra <n>         n lines key=value (caller metadata, e.g. normalization)
//! labels <n>        n lines
//! chars <n>         one line of code points, or absent when n = 0 and no char CNN
//! vocab <V> <d>     V lines: word, then d hex f64 bit patterns
//! params <P>        P pairs of lines: `name dims`, then hex values
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::CogAlignModel;
use crate::autodiff::Tensor;
use crate::data::{atomic_write, KeyValues};
use crate::error::{Error, Result};
use crate::layers::{CharVocab, EmbeddingTable};
use crate::scalar::Scalar;

pub const CHECKPOINT_HEADER: &str = "cogalign-checkpoint 1";

fn kv_lines(kv: &KeyValues) -> Vec<String> {
    kv.iter().map(|(k, v)| format!("{k}={v}")).collect()
}

fn push_values<T: Scalar>(out: &mut String, values: &[T]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{:016x}", v.as_f64().to_bits());
    }
}

/// Serializes `model` plus caller metadata `extra`; byte-identical for
/// identical inputs.
pub fn format_checkpoint<T: Scalar>(model: &CogAlignModel<T>, extra: &KeyValues) -> String {
    let mut cfg = KeyValues::new();
    model.config.write_kv(&mut cfg);
    let cfg = kv_lines(&cfg);
    let digest = hex::encode(Sha256::digest(cfg.join("\n").as_bytes()));
    let mut out = format!(
        "{CHECKPOINT_HEADER}\ndigest {digest}\nconfig {}\n",
        cfg.len()
    );
    for l in &cfg {
        out.push_str(l);
        out.push('\n');
    }
    let extra = kv_lines(extra);
    let _ = writeln!(out, "extra {}", extra.len());
    for l in &extra {
        out.push_str(l);
        out.push('\n');
    }
    let _ = writeln!(out, "labels {}", model.labels.len());
    for l in &model.labels {
        out.push_str(l);
        out.push('\n');
    }
    match &model.char_vocab {
        Some(cv) => {
            let codes: Vec<String> = cv
                .chars()
                .iter()
                .map(|&c| u32::from(c).to_string())
                .collect();
            let _ = writeln!(out, "chars {}\n{}", codes.len(), codes.join(" "));
        }
        None => out.push_str("chars none\n"),
    }
    let m = model.embedding.matrix();
    let _ = writeln!(out, "vocab {} {}", m.rows(), m.cols());
    for (i, w) in model.embedding.words().iter().enumerate() {
        out.push_str(w);
        out.push(' ');
        push_values(&mut out, &m.data()[i * m.cols()..(i + 1) * m.cols()]);
        out.push('\n');
    }
    let _ = writeln!(out, "params {}", model.store.len());
    for id in model.store.ids() {
        let t = model.store.get(id);
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{} {}", model.store.name(id), dims.join(","));
        push_values(&mut out, t.data());
        out.push('\n');
    }
    out
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &CogAlignModel<T>,
    extra: &KeyValues,
) -> Result<()> {
    atomic_write(path, format_checkpoint(model, extra).as_bytes())
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    at: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.at,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.at = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of checkpoint")),
        }
    }

    /// `<keyword> <args…>` header line.
    fn section(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(keyword) {
            return Err(self.err(format!("expected {keyword:?} section")));
        }
        Ok(parts.collect())
    }

    fn count(&mut self, keyword: &str) -> Result<usize> {
        let args = self.section(keyword)?;
        match args.as_slice() {
            [n] => n
                .parse()
                .map_err(|_| self.err(format!("bad {keyword} count {n:?}"))),
            _ => Err(self.err(format!("malformed {keyword} header"))),
        }
    }

    fn values<T: Scalar>(&self, line: &str, expected: usize) -> Result<Vec<T>> {
        let vals: Vec<T> = line
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                u64::from_str_radix(s, 16)
                    .map(|b| T::from_f64(f64::from_bits(b)))
                    .map_err(|_| self.err(format!("bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("{} values, expected {expected}", vals.len())));
        }
        Ok(vals)
    }

    fn kv(&mut self, keyword: &str) -> Result<(KeyValues, Vec<&'a str>)> {
        let n = self.count(keyword)?;
        let lines = (0..n).map(|_| self.next()).collect::<Result<Vec<_>>>()?;
        Ok((KeyValues::parse(&lines.join("\n"), self.path)?, lines))
    }
}

/// Parses a checkpoint; returns the model and the caller metadata.
pub fn parse_checkpoint<T: Scalar>(
    text: &str,
    path: &Path,
) -> Result<(CogAlignModel<T>, KeyValues)> {
    let mut r = Lines {
        path,
        iter: text.lines().enumerate(),
        at: 0,
    };
    if r.next()? != CHECKPOINT_HEADER {
        return Err(r.err(format!("not a checkpoint (expected {CHECKPOINT_HEADER:?})")));
    }
    let digest = match r.section("digest")?.as_slice() {
        [d] => d.to_string(),
        _ => return Err(r.err("malformed digest")),
    };
    let (cfg_kv, cfg_lines) = r.kv("config")?;
    if hex::encode(Sha256::digest(cfg_lines.join("\n").as_bytes())) != digest {
        return Err(r.err("config digest mismatch"));
    }
    let config = ModelConfig::from_kv(&cfg_kv)?;
    let (extra, _) = r.kv("extra")?;
    let n = r.count("labels")?;
    let labels = (0..n)
        .map(|_| r.next().map(String::from))
        .collect::<Result<Vec<_>>>()?;
    let char_vocab = match r.section("chars")?.as_slice() {
        ["none"] => None,
        [n] => {
            let n: usize = n.parse().map_err(|_| r.err("bad chars count"))?;
            let line = r.next()?;
            let chars = line
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<u32>()
                        .ok()
                        .and_then(char::from_u32)
                        .ok_or_else(|| r.err(format!("bad char {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if chars.len() != n {
                return Err(r.err(format!("{} chars, expected {n}", chars.len())));
            }
            Some(CharVocab::from_chars(chars))
        }
        _ => return Err(r.err("malformed chars header")),
    };
    let (v, d) = match r.section("vocab")?.as_slice() {
        [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
            (Ok(v), Ok(d)) => (v, d),
            _ => return Err(r.err("bad vocab header")),
        },
        _ => return Err(r.err("malformed vocab header")),
    };
    let mut words = Vec::with_capacity(v);
    let mut matrix = Vec::with_capacity(v * d);
    for _ in 0..v {
        let line = r.next()?;
        let (w, vals) = line.split_once(' ').unwrap_or((line, ""));
        words.push(w.to_string());
        matrix.extend(r.values::<T>(vals, d)?);
    }
    let embedding = EmbeddingTable::new(words, Tensor::new(vec![v, d], matrix)?)?;
    let mut model = CogAlignModel::assemble(
        config,
        labels,
        embedding,
        char_vocab,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let p = r.count("params")?;
    if p != model.store.len() {
        return Err(r.err(format!("{p} parameters, model has {}", model.store.len())));
    }
    let mut seen = vec![false; p];
    for _ in 0..p {
        let head = r.next()?;
        let (name, dims) = head
            .split_once(' ')
            .ok_or_else(|| r.err("malformed parameter header"))?;
        let shape = dims
            .split(',')
            .map(|x| {
                x.parse::<usize>()
                    .map_err(|_| r.err(format!("bad shape {dims:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let id = model
            .store
            .find(name)
            .ok_or_else(|| r.err(format!("unknown parameter {name:?}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(r.err(format!("duplicate parameter {name:?}")));
        }
        let n = shape.iter().product();
        let line = r.next()?;
        let vals = r.values::<T>(line, n)?;
        model
            .store
            .set(id, Tensor::new(shape, vals)?)
            .map_err(|e| r.err(e.to_string()))?;
    }
    Ok((model, extra))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CogAlignModel<T>, KeyValues)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}
