//! Command-line front end: train, eval, decode, gradcheck, synth and export.

pub mod config;

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cogalign::autodiff::check::ABS_FLOOR;
use cogalign::data::{
    atomic_write, load_tsv, normalize_signals, strip_signals, synth_generate, write_tsv, NormStats,
    Schema, SentenceRecord, SignalSet, SynthSpec,
};
use cogalign::layers::WordVectors;
use cogalign::model::{
    centroid_distance, cross_validate, evaluate, gradcheck_model, hidden_states, load_checkpoint,
    save_checkpoint, transfer_train, write_hidden, CogAlignModel, EpochRecord, GroupCheck,
    MetricsReport, ModelConfig,
};
use serde::Serialize;

pub use config::RunConfig;

/// Absolute floor of the float32 gradient check.
pub const F32_FLOOR: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "cogalign", version, about = "Adversarial text/cognitive-signal alignment toolkit",
    after_help = config::key_reference(),
    after_long_help = long_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn long_help() -> String {
    format!(
        "{}\n\nExit codes: 0 ok, 2 config or data error, 3 numeric abort, 4 gradient check failure.",
        config::key_reference()
    )
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint and JSON-lines metrics.
    Train(Common),
    /// Score a checkpoint on `data.test`; writes JSON-lines metrics.
    Eval(Common),
    /// Tag `data.test` with a checkpoint; writes the input TSV with predicted labels to `output`.
    Decode(Common),
    /// Finite-difference check of every parameter group of a small random model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Tape gradients in 32-bit floats (tolerance 1e-4 instead of 1e-6).
        #[arg(long)]
        float32: bool,
        /// Test hook: flip the sign of the gradient reversal on the tape.
        #[arg(long)]
        inject_grl_fault: bool,
    },
    /// Write a synthetic dataset (train.tsv, dev.tsv, test.tsv, spec.cfg) into `output`.
    Synth(Common),
    /// Dump shared-encoder states of `data.test` for both modalities to `output`.
    Export(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key=value config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// ner, sentiment or relation.
    #[arg(long)]
    pub task: Option<String>,
    /// none, eye, eeg or eye+eeg.
    #[arg(long)]
    pub signals: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training TSV (data.train).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development TSV for early stopping (data.dev).
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test TSV (data.test).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Signal-free TSV alternated with the training data (data.plain).
    #[arg(long)]
    pub plain: Option<PathBuf>,
    /// Word vectors, one token and its reals per line (data.vectors).
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Ablation switch, repeatable: no-text-aware-attention, no-cognitive-loss, no-discriminator.
    #[arg(long)]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gradient reversal scale.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Train the discriminator cooperatively (no gradient reversal).
    #[arg(long)]
    pub no_grl: bool,
    /// Cross-validation folds (eval.folds).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Any config key, repeatable: --set model.hidden=20.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("--set {s:?}: expected KEY=VALUE"))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("task", self.task.clone());
        put("signals", self.signals.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("data.train", path(&self.train));
        put("data.dev", path(&self.dev));
        put("data.test", path(&self.test));
        put("data.plain", path(&self.plain));
        put("data.vectors", path(&self.vectors));
        put("checkpoint", path(&self.checkpoint));
        put("metrics", path(&self.metrics));
        put("output", path(&self.output));
        put("train.epochs", self.epochs.map(|v| v.to_string()));
        put("train.lr", self.lr.map(|v| v.to_string()));
        put("train.batch_size", self.batch_size.map(|v| v.to_string()));
        put("train.lambda", self.lambda.map(|v| v.to_string()));
        put("eval.folds", self.folds.map(|v| v.to_string()));
        if self.no_grl {
            put("train.use_grl", Some("false".into()));
        }
        if !self.ablate.is_empty() {
            put("train.ablate", Some(self.ablate.join(",")));
        }
        Ok(o)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides()?)
    }
}

/// Gradient check threshold exceeded.
#[derive(Debug)]
pub struct GradcheckFailed(pub Vec<String>);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed for {}", self.0.join(", "))
    }
}

impl std::error::Error for GradcheckFailed {}

/// 0 ok, 2 config/data, 3 numeric abort, 4 gradient check failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<GradcheckFailed>() {
            return 4;
        }
        if let Some(cogalign::Error::Numeric(_)) = cause.downcast_ref::<cogalign::Error>() {
            return 3;
        }
    }
    2
}

/// Runs one command; progress and summaries go to `out`.
pub fn run(cli: &Cli, out: &mut String) -> Result<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(&c.resolve()?, out),
        Command::Eval(c) => cmd_eval(&c.resolve()?, out),
        Command::Decode(c) => cmd_decode(&c.resolve()?, out),
        Command::Gradcheck {
            common,
            float32,
            inject_grl_fault,
        } => cmd_gradcheck(&common.resolve()?, *float32, *inject_grl_fault, out),
        Command::Synth(c) => cmd_synth(&c.resolve()?, out),
        Command::Export(c) => cmd_export(&c.resolve()?, out),
    }
}

fn load(cfg: &RunConfig, path: &Path) -> Result<Vec<SentenceRecord>> {
    let recs = load_tsv(path, Schema::for_task(cfg.model.task))?;
    if recs.is_empty() {
        bail!("{}: no sentences", path.display());
    }
    Ok(recs)
}

/// One JSON line of the metrics file.
#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line<'a> {
    Epoch {
        #[serde(skip_serializing_if = "Option::is_none")]
        fold: Option<usize>,
        #[serde(flatten)]
        epoch: &'a EpochRecord,
    },
    Fold {
        fold: usize,
        #[serde(flatten)]
        report: &'a MetricsReport,
    },
    Summary {
        split: &'a str,
        #[serde(flatten)]
        report: &'a MetricsReport,
    },
}

fn push_line(buf: &mut String, line: &Line) -> Result<()> {
    buf.push_str(&serde_json::to_string(line)?);
    buf.push('\n');
    Ok(())
}

fn summary(split: &str, r: &MetricsReport) -> String {
    let mut s = format!("{split}: ");
    if let Some(p) = r.headline() {
        let _ = write!(s, "P {:.4} R {:.4} F1 {:.4}", p.precision, p.recall, p.f1);
    }
    let _ = write!(s, " acc {:.4}", r.accuracy);
    if let Some(d) = r.discriminator_accuracy {
        let _ = write!(s, " disc-acc {d:.4}");
    }
    s
}

fn signal_check(cfg: &RunConfig, recs: &[SentenceRecord], path: &Path) -> Result<()> {
    if cfg.model.signals != SignalSet::None && !recs.iter().any(SentenceRecord::has_signals) {
        bail!(
            "signals = {} but {} carries no signal columns (use signals=none for text-only data)",
            cfg.model.signals,
            path.display()
        );
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut String) -> Result<()> {
    let train_path = cfg.require("data.train", &cfg.train)?;
    let raw = load(cfg, train_path)?;
    signal_check(cfg, &raw, train_path)?;
    let (train, stats) = normalize_signals(&raw)?;
    let norm = |p: &Path| -> Result<Vec<SentenceRecord>> {
        let mut r = load(cfg, p)?;
        stats.apply(&mut r)?;
        Ok(r)
    };
    let dev = cfg.dev.as_deref().map(norm).transpose()?;
    let test = cfg.test.as_deref().map(norm).transpose()?;
    let plain = match &cfg.plain {
        Some(p) => strip_signals(&load(cfg, p)?),
        None => Vec::new(),
    };
    let vectors = cfg.vectors.as_deref().map(WordVectors::load).transpose()?;
    let mut lines = String::new();

    if cfg.folds > 0 {
        let mut epochs = Vec::new();
        let cv = cross_validate(
            &cfg.model,
            &train,
            cfg.folds,
            vectors.as_ref(),
            &cfg.plan,
            |f, e| {
                epochs.push((f, e.clone()));
            },
        )?;
        for (f, e) in &epochs {
            push_line(
                &mut lines,
                &Line::Epoch {
                    fold: Some(*f),
                    epoch: e,
                },
            )?;
        }
        for (f, r) in cv.folds.iter().enumerate() {
            push_line(&mut lines, &Line::Fold { fold: f, report: r })?;
        }
        push_line(
            &mut lines,
            &Line::Summary {
                split: "cv",
                report: &cv,
            },
        )?;
        out.push_str(&summary(&format!("{}-fold cv", cfg.folds), &cv));
        out.push('\n');
    }

    let vocab: Vec<SentenceRecord> = train.iter().chain(&plain).cloned().collect();
    let mut model =
        CogAlignModel::<f64>::build(cfg.model.clone(), &vocab, vectors.as_ref(), cfg.plan.seed)?;
    let zuco = model.prepare_all(&train)?;
    let plain = model.prepare_all(&plain)?;
    let mut epochs = Vec::new();
    let fit = transfer_train(
        &mut model,
        &zuco,
        &plain,
        dev.as_deref(),
        &cfg.plan,
        |_, e| {
            epochs.push(e.clone());
            ControlFlow::Continue(())
        },
    )?;
    for e in &epochs {
        push_line(
            &mut lines,
            &Line::Epoch {
                fold: None,
                epoch: e,
            },
        )?;
        let _ = writeln!(
            out,
            "epoch {:>3}  task_text {:.4}  task_cog {:.4}  adversarial {:.4}{}",
            e.epoch,
            e.task_text,
            e.task_cog,
            e.adversarial,
            e.dev_f1
                .map_or(String::new(), |f| format!("  dev_f1 {f:.4}"))
        );
    }
    if let Some(b) = fit.best_epoch {
        let _ = writeln!(out, "kept parameters of epoch {b}");
    }
    let (split, data) = match &test {
        Some(t) => ("test", t),
        None => ("train", &train),
    };
    let report = evaluate(&model, data)?;
    push_line(
        &mut lines,
        &Line::Summary {
            split,
            report: &report,
        },
    )?;
    out.push_str(&summary(split, &report));
    out.push('\n');

    save_checkpoint(&cfg.checkpoint, &model, &stats.to_kv())?;
    atomic_write(&cfg.metrics, lines.as_bytes())?;
    let _ = writeln!(
        out,
        "wrote {} and {}",
        cfg.checkpoint.display(),
        cfg.metrics.display()
    );
    Ok(())
}

fn open_model(cfg: &RunConfig) -> Result<(CogAlignModel<f64>, NormStats)> {
    if !cfg.checkpoint.exists() {
        bail!("checkpoint {} does not exist", cfg.checkpoint.display());
    }
    let (model, extra) = load_checkpoint::<f64>(&cfg.checkpoint)?;
    Ok((model, NormStats::from_kv(&extra)?))
}

fn checkpoint_data(
    cfg: &RunConfig,
    model: &ModelConfig,
    stats: &NormStats,
) -> Result<(PathBuf, Vec<SentenceRecord>)> {
    let path = cfg.require("data.test", &cfg.test)?;
    let mut recs = load_tsv(path, Schema::for_task(model.task))?;
    stats.apply(&mut recs)?;
    Ok((path.to_path_buf(), recs))
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut String) -> Result<()> {
    let (model, stats) = open_model(cfg)?;
    let (_, recs) = checkpoint_data(cfg, &model.config, &stats)?;
    let report = evaluate(&model, &recs)?;
    let mut lines = String::new();
    push_line(
        &mut lines,
        &Line::Summary {
            split: "test",
            report: &report,
        },
    )?;
    atomic_write(&cfg.metrics, lines.as_bytes())?;
    out.push_str(&summary("test", &report));
    out.push('\n');
    Ok(())
}

pub fn cmd_decode(cfg: &RunConfig, out: &mut String) -> Result<()> {
    let (model, _) = open_model(cfg)?;
    let path = cfg.require("data.test", &cfg.test)?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let recs = load_tsv(path, Schema::for_task(model.config.task))?;
    let mut labels = Vec::new();
    for r in &recs {
        let p = model.infer(r)?;
        labels.extend(model.prediction_labels(&p, r.len()));
    }
    let mut next = labels.into_iter();
    let mut decoded = String::with_capacity(text.len());
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if !line.trim().is_empty() {
            let mut cols: Vec<&str> = line.split('\t').collect();
            let label = next.next().context("more tokens than predictions")?;
            cols[1] = &label;
            decoded.push_str(&cols.join("\t"));
        }
        decoded.push('\n');
    }
    atomic_write(&cfg.output, decoded.as_bytes())?;
    let _ = writeln!(
        out,
        "decoded {} sentences into {}",
        recs.len(),
        cfg.output.display()
    );
    Ok(())
}

/// Small model for the gradient suite.
pub fn gradcheck_config(cfg: &RunConfig) -> ModelConfig {
    ModelConfig {
        word_dim: 5,
        char_dim: 3,
        char_window: 3,
        char_filters: 3,
        hidden: 3,
        shared_dim: 4,
        max_len: 8,
        ..ModelConfig::new(cfg.model.task, cfg.model.signals)
    }
}

pub fn cmd_gradcheck(
    cfg: &RunConfig,
    float32: bool,
    grl_fault: bool,
    out: &mut String,
) -> Result<()> {
    let spec = SynthSpec {
        n_train: 2,
        n_dev: 1,
        n_test: 1,
        min_len: 3,
        max_len: 5,
        vocab_size: 30,
        ..cfg.synth.clone()
    };
    let data = synth_generate(&spec)?;
    let model =
        CogAlignModel::<f64>::build(gradcheck_config(cfg), &data.train, None, cfg.plan.seed)?;
    let batch = model.prepare_all(&data.train)?;
    let floor = if float32 { F32_FLOOR } else { ABS_FLOOR };
    let report = gradcheck_model(&model, &batch, &cfg.plan, float32, floor, grl_fault)?;
    let _ = writeln!(
        out,
        "{} parameters, {} mode, tolerance {:e}",
        model.store.num_scalars(),
        if float32 { "float32" } else { "float64" },
        report.first().map_or(0.0, |c| c.tolerance)
    );
    for c in &report {
        let _ = writeln!(
            out,
            "{:<28} max rel err {:.3e}  {}",
            c.label(),
            c.max_error,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<String> = report
        .iter()
        .filter(|c| !c.passed())
        .map(GroupCheck::label)
        .collect();
    if !failed.is_empty() {
        return Err(GradcheckFailed(failed).into());
    }
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut String) -> Result<()> {
    let data = synth_generate(&cfg.synth)?;
    std::fs::create_dir_all(&cfg.output)
        .with_context(|| format!("creating {}", cfg.output.display()))?;
    let schema = Schema {
        task: cfg.synth.task,
        eye_dim: cfg.synth.eye_dim,
        eeg_dim: cfg.synth.eeg_dim,
    };
    for (name, recs) in [
        ("train", &data.train),
        ("dev", &data.dev),
        ("test", &data.test),
    ] {
        write_tsv(&cfg.output.join(format!("{name}.tsv")), recs, schema)?;
    }
    cfg.synth.to_kv().save(&cfg.output.join("spec.cfg"))?;
    let _ = writeln!(
        out,
        "wrote {} train, {} dev, {} test sentences to {}",
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        cfg.output.display()
    );
    Ok(())
}

pub fn cmd_export(cfg: &RunConfig, out: &mut String) -> Result<()> {
    let (model, stats) = open_model(cfg)?;
    let (_, recs) = checkpoint_data(cfg, &model.config, &stats)?;
    let rows = hidden_states(&model, &recs)?;
    write_hidden(&cfg.output, &rows)?;
    let _ = write!(out, "wrote {} rows to {}", rows.len(), cfg.output.display());
    if let Ok(d) = centroid_distance(&rows) {
        let _ = write!(out, "; modality centroid distance {d:.6}");
    }
    out.push('\n');
    Ok(())
}
