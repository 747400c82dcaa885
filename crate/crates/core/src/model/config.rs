use crate::data::{KeyValues, SignalSet, Task};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub signals: SignalSet,
    pub word_dim: usize,
    /// Character CNN on by default for sequence labeling only.
    pub use_chars: bool,
    pub char_dim: usize,
    pub char_window: usize,
    pub char_filters: usize,
    pub hidden: usize,
    /// Width of the modality adapters feeding the shared encoder.
    pub shared_dim: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn new(task: Task, signals: SignalSet) -> Self {
        Self {
            task,
            signals,
            word_dim: 300,
            use_chars: task.is_sequence(),
            char_dim: 30,
            char_window: 3,
            char_filters: 30,
            hidden: 50,
            shared_dim: 128,
            max_len: 64,
        }
    }

    /// Rows of the embedded text input.
    pub fn text_dim(&self) -> usize {
        self.word_dim + if self.use_chars { self.char_filters } else { 0 }
    }

    /// Rows of the per-word cognitive vector.
    pub fn cog_dim(&self) -> usize {
        self.signals.dim(self.task)
    }

    /// Rows of `H' = [H^p; H^s]`.
    pub fn h_prime_dim(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("hidden", self.hidden),
            ("shared_dim", self.shared_dim),
            ("max_len", self.max_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Data(format!("model.{k} must be positive")));
            }
        }
        if self.use_chars && (self.char_dim == 0 || self.char_window == 0 || self.char_filters == 0)
        {
            return Err(Error::Data(
                "character CNN dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("task", self.task);
        kv.set("signals", self.signals);
        kv.set("model.word_dim", self.word_dim);
        kv.set("model.use_chars", self.use_chars);
        kv.set("model.char_dim", self.char_dim);
        kv.set("model.char_window", self.char_window);
        kv.set("model.char_filters", self.char_filters);
        kv.set("model.hidden", self.hidden);
        kv.set("model.shared_dim", self.shared_dim);
        kv.set("model.max_len", self.max_len);
    }

    /// Reads `task`, `signals` and `model.*` keys over the task defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let task: Task = kv.parsed("task")?.unwrap_or(Task::Ner);
        let signals = kv.parsed("signals")?.unwrap_or(SignalSet::EyeEeg);
        let mut c = Self::new(task, signals);
        macro_rules! read {
            ($($f:ident),*) => {$(
                if let Some(v) = kv.parsed(concat!("model.", stringify!($f)))? {
                    c.$f = v;
                }
            )*};
        }
        read!(
            word_dim,
            use_chars,
            char_dim,
            char_window,
            char_filters,
            hidden,
            shared_dim,
            max_len
        );
        c.validate()?;
        Ok(c)
    }
}

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablations {
    pub no_text_aware_attention: bool,
    pub no_cognitive_loss: bool,
    pub no_discriminator: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 3] = [
        "no-text-aware-attention",
        "no-cognitive-loss",
        "no-discriminator",
    ];

    /// Turns on the switch called `name` (dashes or underscores).
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name.replace('_', "-").as_str() {
            "no-text-aware-attention" | "no-attention" => self.no_text_aware_attention = true,
            "no-cognitive-loss" => self.no_cognitive_loss = true,
            "no-discriminator" => self.no_discriminator = true,
            "" | "none" => {}
            other => {
                return Err(Error::Data(format!(
                    "unknown ablation {other:?} (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&'static str> {
        let flags = [
            self.no_text_aware_attention,
            self.no_cognitive_loss,
            self.no_discriminator,
        ];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect()
    }
}

/// Optimization schedule and switches.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Gradient reversal scale.
    pub lambda: f64,
    /// `false` feeds the discriminator the plain shared output, so the
    /// encoder cooperates with the discriminator instead of opposing it.
    pub use_grl: bool,
    pub ablations: Ablations,
    pub seed: u64,
    /// Early-stopping patience in epochs when a dev split is given.
    pub patience: usize,
    /// Batches taken from each stream before switching during transfer.
    pub transfer_period: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            epochs: 30,
            batch_size: 8,
            lambda: 1.0,
            use_grl: true,
            ablations: Ablations::default(),
            seed: 1,
            patience: 10,
            transfer_period: 1,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("train.clip_norm must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("train.lambda must be >= 0, got {}", self.lambda));
        }
        if self.batch_size == 0 || self.transfer_period == 0 {
            return bad("train.batch_size and train.transfer_period must be positive".into());
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("train.lr", self.lr);
        kv.set("train.beta1", self.beta1);
        kv.set("train.beta2", self.beta2);
        kv.set("train.eps", self.eps);
        kv.set("train.clip_norm", self.clip_norm);
        kv.set("train.epochs", self.epochs);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.lambda", self.lambda);
        kv.set("train.use_grl", self.use_grl);
        kv.set("train.ablate", self.ablations.names().join(","));
        kv.set("seed", self.seed);
        kv.set("train.patience", self.patience);
        kv.set("train.transfer_period", self.transfer_period);
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut p = Self::default();
        macro_rules! read {
            ($($f:ident),*) => {$(
                if let Some(v) = kv.parsed(concat!("train.", stringify!($f)))? {
                    p.$f = v;
                }
            )*};
        }
        read!(
            lr,
            beta1,
            beta2,
            eps,
            clip_norm,
            epochs,
            batch_size,
            lambda,
            use_grl,
            patience,
            transfer_period
        );
        if let Some(seed) = kv.parsed("seed")? {
            p.seed = seed;
        }
        if let Some(list) = kv.get("train.ablate") {
            for name in list.split(',') {
                p.ablations.enable(name.trim())?;
            }
        }
        p.validate()?;
        Ok(p)
    }
}
