use std::fmt;
use std::str::FromStr;

use crate::compute::{EmbeddingSource, OptimizerKind};
use crate::error::{Error, Result};
use crate::losses::ConsistencySpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Plain SGD on the labeled stream items (lower bound).
    Finetune,
    /// All tasks at once with every label (upper bound).
    Joint,
    Er,
    PseudoEr,
    Cic,
    Ccic,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Finetune,
        Method::Joint,
        Method::Er,
        Method::PseudoEr,
        Method::Cic,
        Method::Ccic,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Finetune => "sgd",
            Method::Joint => "joint",
            Method::Er => "er",
            Method::PseudoEr => "pseudo_er",
            Method::Cic => "cic",
            Method::Ccic => "ccic",
        }
    }

    pub fn uses_buffer(self) -> bool {
        matches!(self, Method::Er | Method::PseudoEr | Method::Cic | Method::Ccic)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where unsupervised-mining negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mining {
    /// Buffer items of earlier tasks.
    #[default]
    AcrossTask,
    /// Other items of the current batch.
    WithinTask,
    /// Any buffer item or current-batch item.
    TaskAgnostic,
}

impl Mining {
    pub fn id(self) -> &'static str {
        match self {
            Mining::AcrossTask => "across",
            Mining::WithinTask => "within",
            Mining::TaskAgnostic => "agnostic",
        }
    }
}

impl FromStr for Mining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "across" => Ok(Mining::AcrossTask),
            "within" => Ok(Mining::WithinTask),
            "agnostic" => Ok(Mining::TaskAgnostic),
            other => Err(Error::Config(format!("unknown mining strategy {other:?}"))),
        }
    }
}

/// Component switches for knockout studies. Everything is on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub knn: bool,
    pub sharpen: bool,
    pub unsup_loss: bool,
    pub mixup: bool,
    pub unsup_mining: bool,
    pub sup_mining: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            knn: true,
            sharpen: true,
            unsup_loss: true,
            mixup: true,
            unsup_mining: true,
            sup_mining: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub method: Method,
    pub buffer_size: usize,
    /// Replay minibatch size.
    pub replay_batch: usize,
    /// Weight of the consistency term.
    pub lambda: f64,
    /// Weight of the unsupervised mining term.
    pub mu: f64,
    /// Unsupervised mining margin.
    pub alpha: f64,
    /// Supervised mining margin.
    pub beta: f64,
    /// Sharpening temperature.
    pub tau: f64,
    /// PseudoER logit-gap threshold.
    pub eta: f64,
    /// Augmented views per unlabeled item.
    pub augment_count: usize,
    /// mixUp Beta parameter.
    pub gamma: f64,
    pub knn_k: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs_per_task: usize,
    pub mining: Mining,
    pub ablation: Ablation,
    pub embedding: EmbeddingSource,
    pub consistency: ConsistencySpace,
}

impl LearnerConfig {
    /// Defaults for `method`; CCIC pairs with Adam, every other method with SGD.
    pub fn for_method(method: Method) -> Self {
        let adam = method == Method::Ccic;
        Self {
            method,
            buffer_size: 500,
            replay_batch: 32,
            lambda: 1.0,
            mu: 1.0,
            alpha: 1.0,
            beta: 1.0,
            tau: 0.5,
            eta: 0.5,
            augment_count: 2,
            gamma: 0.75,
            knn_k: 5,
            lr: if adam { 1e-3 } else { 0.05 },
            optimizer: if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd },
            epochs_per_task: 10,
            mining: Mining::AcrossTask,
            ablation: Ablation::default(),
            embedding: EmbeddingSource::Logits,
            consistency: ConsistencySpace::Logits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("tau", self.tau), ("gamma", self.gamma)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a positive number, got {v}")));
            }
        }
        let nonneg = [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lr", self.lr),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.eta.is_nan() {
            return Err(Error::Config("eta is NaN".into()));
        }
        if self.augment_count == 0 || self.knn_k == 0 {
            return Err(Error::Config("augment_count and knn_k must be >= 1".into()));
        }
        if self.method.uses_buffer() && self.buffer_size == 0 {
            return Err(Error::Config(format!("{} needs a nonzero buffer", self.method)));
        }
        Ok(())
    }
}
