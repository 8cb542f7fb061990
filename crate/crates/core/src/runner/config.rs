//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos cannot silently fall back to defaults. `method` is
//! applied first because it selects the optimizer and learning-rate
//! defaults that later keys may override.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::compute::{EmbeddingSource, FeatureShape, OptimizerKind};
use crate::data::{BlobsConfig, DigitsConfig};
use crate::error::{Error, Result};
use crate::learners::{LearnerConfig, Method};
use crate::losses::ConsistencySpace;

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs(BlobsConfig),
    Digits(DigitsConfig),
    /// Container files; `shape` is needed for image augmentation.
    File {
        train: PathBuf,
        test: PathBuf,
        shape: Option<FeatureShape>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Seed of the synthetic generators; the run seed drives everything else.
    pub data_seed: u64,
    pub tasks: usize,
    pub labeled_rate: f64,
    pub batch_size: usize,
    pub learner: LearnerConfig,
    pub backbone: Backbone,
    pub hidden: Vec<usize>,
    pub conv_channels: [usize; 2],
    /// Gaussian jitter for flat inputs.
    pub jitter_sigma: f64,
    /// Translation range and mirroring for image inputs.
    pub crop_pad: usize,
    pub flip: bool,
    /// Hold out 10% of the training split and evaluate on it instead of test.
    pub validation: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Blobs(BlobsConfig::default()),
            data_seed: 0,
            tasks: 5,
            labeled_rate: 0.25,
            batch_size: 32,
            learner: LearnerConfig::for_method(Method::Er),
            backbone: Backbone::Mlp,
            hidden: vec![32, 32],
            conv_channels: [8, 16],
            jitter_sigma: 0.1,
            crop_pad: 1,
            flip: false,
            validation: false,
            seeds: (0..5).collect(),
            out: PathBuf::from("runs"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits `key = value` lines, skipping blanks and comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = RunConfig::default();
        let mut dataset_kind = "blobs".to_string();
        for (k, v) in &pairs {
            match k.as_str() {
                "method" => cfg.set("method", v)?,
                "dataset" => dataset_kind = v.clone(),
                _ => {}
            }
        }
        cfg.dataset = match dataset_kind.as_str() {
            "blobs" => DatasetSpec::Blobs(BlobsConfig::default()),
            "digits" => DatasetSpec::Digits(DigitsConfig::default()),
            "file" => DatasetSpec::File {
                train: PathBuf::new(),
                test: PathBuf::new(),
                shape: None,
            },
            other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
        };
        if matches!(cfg.dataset, DatasetSpec::Digits(_)) {
            cfg.backbone = Backbone::Conv;
        }
        for (k, v) in &pairs {
            if k != "method" && k != "dataset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let l = &mut self.learner;
        match key {
            "method" => {
                let method: Method = v.parse()?;
                let keep = (l.buffer_size, l.epochs_per_task);
                *l = LearnerConfig::for_method(method);
                (l.buffer_size, l.epochs_per_task) = keep;
            }
            "tasks" => self.tasks = parse_num(key, v)?,
            "labeled_rate" => self.labeled_rate = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "validation" => self.validation = parse_bool(key, v)?,
            "backbone" => {
                self.backbone = match v {
                    "mlp" => Backbone::Mlp,
                    "conv" => Backbone::Conv,
                    _ => return Err(Error::Config(format!("unknown backbone `{v}`"))),
                }
            }
            "hidden" => self.hidden = parse_list(key, v)?,
            "conv_channels" => {
                let c: Vec<usize> = parse_list(key, v)?;
                self.conv_channels = c
                    .try_into()
                    .map_err(|_| Error::Config("conv_channels takes two values".into()))?;
            }
            "jitter_sigma" => self.jitter_sigma = parse_num(key, v)?,
            "crop_pad" => self.crop_pad = parse_num(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,

            "buffer_size" => l.buffer_size = parse_num(key, v)?,
            "replay_batch" => l.replay_batch = parse_num(key, v)?,
            "lr" => l.lr = parse_num(key, v)?,
            "optimizer" => {
                l.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(Error::Config(format!("unknown optimizer `{v}`"))),
                }
            }
            "epochs" => l.epochs_per_task = parse_num(key, v)?,
            "lambda" => l.lambda = parse_num(key, v)?,
            "mu" => l.mu = parse_num(key, v)?,
            "alpha" => l.alpha = parse_num(key, v)?,
            "beta" => l.beta = parse_num(key, v)?,
            "tau" => l.tau = parse_num(key, v)?,
            "eta" => l.eta = parse_num(key, v)?,
            "k_aug" => l.augment_count = parse_num(key, v)?,
            "gamma" => l.gamma = parse_num(key, v)?,
            "knn_k" => l.knn_k = parse_num(key, v)?,
            "mining" => l.mining = v.parse()?,
            "embedding" => {
                l.embedding = match v {
                    "logits" => EmbeddingSource::Logits,
                    "penultimate" => EmbeddingSource::Penultimate,
                    _ => return Err(Error::Config(format!("unknown embedding `{v}`"))),
                }
            }
            "consistency" => {
                l.consistency = match v {
                    "logits" => ConsistencySpace::Logits,
                    "probabilities" => ConsistencySpace::Probabilities,
                    _ => return Err(Error::Config(format!("unknown consistency space `{v}`"))),
                }
            }
            "use_knn" => l.ablation.knn = parse_bool(key, v)?,
            "use_sharpen" => l.ablation.sharpen = parse_bool(key, v)?,
            "use_unsup_loss" => l.ablation.unsup_loss = parse_bool(key, v)?,
            "use_mixup" => l.ablation.mixup = parse_bool(key, v)?,
            "use_unsup_mining" => l.ablation.unsup_mining = parse_bool(key, v)?,
            "use_sup_mining" => l.ablation.sup_mining = parse_bool(key, v)?,

            _ => return self.set_dataset(key, v),
        }
        Ok(())
    }

    fn set_dataset(&mut self, key: &str, v: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key `{key}` for this dataset"));
        match &mut self.dataset {
            DatasetSpec::Blobs(b) => match key {
                "dim" => b.dim = parse_num(key, v)?,
                "classes" => b.num_classes = parse_num(key, v)?,
                "train_per_class" => b.train_per_class = parse_num(key, v)?,
                "test_per_class" => b.test_per_class = parse_num(key, v)?,
                "class_spread" => b.class_spread = parse_num(key, v)?,
                "modes" => b.modes = parse_num(key, v)?,
                "mode_spread" => b.mode_spread = parse_num(key, v)?,
                "noise" => b.noise = parse_num(key, v)?,
                _ => return Err(unknown()),
            },
            DatasetSpec::Digits(d) => match key {
                "train_per_class" => d.train_per_class = parse_num(key, v)?,
                "test_per_class" => d.test_per_class = parse_num(key, v)?,
                "noise" => d.noise = parse_num(key, v)?,
                "max_shift" => d.max_shift = parse_num(key, v)?,
                _ => return Err(unknown()),
            },
            DatasetSpec::File { train, test, shape } => match key {
                "train_file" => *train = PathBuf::from(v),
                "test_file" => *test = PathBuf::from(v),
                "image_shape" => {
                    let s: Vec<usize> = parse_list(key, v)?;
                    let [c, h, w]: [usize; 3] = s
                        .try_into()
                        .map_err(|_| Error::Config("image_shape takes channels,height,width".into()))?;
                    *shape = Some(FeatureShape::image(c, h, w));
                }
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        if !(self.labeled_rate > 0.0 && self.labeled_rate <= 1.0) {
            return Err(Error::Config(format!(
                "labeled_rate must be in (0, 1], got {}",
                self.labeled_rate
            )));
        }
        if self.tasks == 0 || self.batch_size == 0 {
            return Err(Error::Config("tasks and batch_size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.backbone == Backbone::Mlp && self.hidden.is_empty() {
            return Err(Error::Config("hidden must list at least one layer width".into()));
        }
        Ok(())
    }

    /// Every key in a fixed order; parsing this text yields `self` again.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.dataset {
            DatasetSpec::Blobs(b) => {
                kv("dataset", "blobs".into());
                kv("dim", b.dim.to_string());
                kv("classes", b.num_classes.to_string());
                kv("train_per_class", b.train_per_class.to_string());
                kv("test_per_class", b.test_per_class.to_string());
                kv("class_spread", b.class_spread.to_string());
                kv("modes", b.modes.to_string());
                kv("mode_spread", b.mode_spread.to_string());
                kv("noise", b.noise.to_string());
            }
            DatasetSpec::Digits(d) => {
                kv("dataset", "digits".into());
                kv("train_per_class", d.train_per_class.to_string());
                kv("test_per_class", d.test_per_class.to_string());
                kv("noise", d.noise.to_string());
                kv("max_shift", d.max_shift.to_string());
            }
            DatasetSpec::File { train, test, shape } => {
                kv("dataset", "file".into());
                kv("train_file", train.display().to_string());
                kv("test_file", test.display().to_string());
                if let Some(sh) = shape {
                    kv("image_shape", format!("{},{},{}", sh.channels, sh.height, sh.width));
                }
            }
        }
        let l = &self.learner;
        kv("data_seed", self.data_seed.to_string());
        kv("tasks", self.tasks.to_string());
        kv("labeled_rate", self.labeled_rate.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("method", l.method.id().into());
        kv("buffer_size", l.buffer_size.to_string());
        kv("replay_batch", l.replay_batch.to_string());
        kv("lr", l.lr.to_string());
        kv(
            "optimizer",
            match l.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            }
            .into(),
        );
        kv("epochs", l.epochs_per_task.to_string());
        kv("lambda", l.lambda.to_string());
        kv("mu", l.mu.to_string());
        kv("alpha", l.alpha.to_string());
        kv("beta", l.beta.to_string());
        kv("tau", l.tau.to_string());
        kv("eta", l.eta.to_string());
        kv("k_aug", l.augment_count.to_string());
        kv("gamma", l.gamma.to_string());
        kv("knn_k", l.knn_k.to_string());
        kv("mining", l.mining.id().into());
        kv(
            "embedding",
            match l.embedding {
                EmbeddingSource::Logits => "logits",
                EmbeddingSource::Penultimate => "penultimate",
            }
            .into(),
        );
        kv(
            "consistency",
            match l.consistency {
                ConsistencySpace::Logits => "logits",
                ConsistencySpace::Probabilities => "probabilities",
            }
            .into(),
        );
        kv("use_knn", l.ablation.knn.to_string());
        kv("use_sharpen", l.ablation.sharpen.to_string());
        kv("use_unsup_loss", l.ablation.unsup_loss.to_string());
        kv("use_mixup", l.ablation.mixup.to_string());
        kv("use_unsup_mining", l.ablation.unsup_mining.to_string());
        kv("use_sup_mining", l.ablation.sup_mining.to_string());
        kv(
            "backbone",
            match self.backbone {
                Backbone::Mlp => "mlp",
                Backbone::Conv => "conv",
            }
            .into(),
        );
        kv("hidden", join(&self.hidden));
        kv("conv_channels", join(&self.conv_channels));
        kv("jitter_sigma", self.jitter_sigma.to_string());
        kv("crop_pad", self.crop_pad.to_string());
        kv("flip", self.flip.to_string());
        kv("validation", self.validation.to_string());
        kv("seeds", join(&self.seeds));
        kv("out", self.out.display().to_string());
        s
    }

    /// SHA-256 of the canonical text minus `seeds` and `out`, which do not
    /// change what a single seeded run computes.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("seeds ") && !l.starts_with("out "))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
