use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cogalign::data::{KeyValues, SignalSet, SynthSpec, Task};
use cogalign::model::{ModelConfig, TrainPlan};

/// Keys accepted besides `model.*`, `train.*` and `synth.*`.
const TOP_LEVEL: [&str; 12] = [
    "task",
    "signals",
    "seed",
    "data.train",
    "data.dev",
    "data.test",
    "data.plain",
    "data.vectors",
    "checkpoint",
    "metrics",
    "output",
    "eval.folds",
];

/// Every setting of one command run, resolved from a key=value file with
/// flag overrides layered on top.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub synth: SynthSpec,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Signal-free stream for transfer training.
    pub plain: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub output: PathBuf,
    /// Cross-validation folds for `train`; 0 trains once on `data.train`.
    pub folds: usize,
}

fn known(key: &str) -> bool {
    let defaults = || {
        let mut kv = KeyValues::new();
        ModelConfig::new(Task::Ner, SignalSet::EyeEeg).write_kv(&mut kv);
        TrainPlan::default().write_kv(&mut kv);
        kv
    };
    if TOP_LEVEL.contains(&key) {
        return true;
    }
    if let Some(k) = key.strip_prefix("synth.") {
        return SynthSpec::new(Task::Ner).to_kv().get(k).is_some() && k != "task" && k != "seed";
    }
    defaults().get(key).is_some()
}

impl RunConfig {
    /// Loads `file` (if any) and applies `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = match file {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::new(),
        };
        for (k, v) in overrides {
            kv.set(k, v);
        }
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        for key in kv.keys() {
            if !known(key) {
                bail!("unknown config key {key:?}");
            }
        }
        let model = ModelConfig::from_kv(kv).context("model settings")?;
        let plan = TrainPlan::from_kv(kv).context("training settings")?;
        let mut sk = KeyValues::new();
        sk.set("task", model.task);
        sk.set("seed", plan.seed);
        for (k, v) in kv.iter() {
            if let Some(k) = k.strip_prefix("synth.") {
                sk.set(k, v);
            }
        }
        let synth = SynthSpec::from_kv(&sk).context("synth settings")?;
        let path = |k: &str| kv.get(k).map(PathBuf::from);
        Ok(Self {
            model,
            plan,
            synth,
            train: path("data.train"),
            dev: path("data.dev"),
            test: path("data.test"),
            plain: path("data.plain"),
            vectors: path("data.vectors"),
            checkpoint: path("checkpoint").unwrap_or_else(|| "model.ckpt".into()),
            metrics: path("metrics").unwrap_or_else(|| "metrics.jsonl".into()),
            output: path("output").unwrap_or_else(|| "out".into()),
            folds: kv.parsed("eval.folds")?.unwrap_or(0),
        })
    }

    pub fn require<'a>(&self, what: &'a str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref()
            .with_context(|| format!("{what} is required (flag or config key)"))
    }
}

/// Documented keys with their defaults, shown in `--help`.
pub fn key_reference() -> String {
    let mut kv = KeyValues::new();
    ModelConfig::new(Task::Ner, SignalSet::EyeEeg).write_kv(&mut kv);
    TrainPlan::default().write_kv(&mut kv);
    let mut out = String::from("Config keys (key=value file, flags win) and defaults:\n");
    for (k, v) in kv.iter() {
        out.push_str(&format!("  {k}={v}\n"));
    }
    for (k, v) in SynthSpec::new(Task::Ner).to_kv().iter() {
        if k != "task" && k != "seed" {
            out.push_str(&format!("  synth.{k}={v}\n"));
        }
    }
    out.push_str(
        "  data.train= data.dev= data.test= data.plain= data.vectors=  (paths, unset)\n  \
         checkpoint=model.ckpt metrics=metrics.jsonl output=out\n  \
         eval.folds=0  (0: single run; k: k-fold cross-validation)\n\
         model.use_chars defaults to true for ner; synth.* dims default to the task's signal widths.",
    );
    out
}
