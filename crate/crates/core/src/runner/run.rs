use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Backbone, DatasetSpec, RunConfig};
use crate::compute::{Network, Tensor};
use crate::data::{build_split, split_validation, Augmentation, Dataset, Sample};
use crate::error::{Error, Result};
use crate::learners::{Learner, Method};
use crate::losses::LossBreakdown;
use crate::memory::ReservoirBuffer;
use crate::metrics::MetricsMatrix;

/// Fraction of the training split held out when `validation` is on.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub task: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Everything one seeded run produces.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub matrix: MetricsMatrix,
    pub final_accuracy: f64,
    pub forgetting: f64,
    pub steps: Vec<StepLog>,
    pub buffer: ReservoirBuffer,
    pub num_classes: usize,
    pub wall_seconds: f64,
}

/// Aggregate over the seeds of one configuration.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_hash: String,
    pub dataset: String,
    pub tasks: usize,
    pub method: Method,
    pub buffer_size: usize,
    pub labeled_rate: f64,
    pub seeds: Vec<SeedOutcome>,
    pub wall_seconds: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunRecord {
    pub fn final_accuracies(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.final_accuracy).collect()
    }

    pub fn forgettings(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.forgetting).collect()
    }

    /// Mean ± std of A_f across seeds.
    pub fn accuracy_stats(&self) -> (f64, f64) {
        mean_std(&self.final_accuracies())
    }

    pub fn forgetting_stats(&self) -> (f64, f64) {
        mean_std(&self.forgettings())
    }

    /// One row per seed; the statistics are recomputed from these by `report`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "config_hash,dataset,tasks,method,buffer_size,labeled_rate,seed,final_accuracy,forgetting,wall_seconds\n",
        );
        for o in &self.seeds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:?},{},{:?},{:?},{:.3}",
                self.config_hash,
                self.dataset,
                self.tasks,
                self.method,
                self.buffer_size,
                self.labeled_rate,
                o.seed,
                o.final_accuracy,
                o.forgetting,
                o.wall_seconds
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let (a, a_sd) = self.accuracy_stats();
        let (f, f_sd) = self.forgetting_stats();
        format!(
            "{} m={} p_s={} on {} ({} seeds): A_f = {:.2} ± {:.2}%, F = {:.2} ± {:.2}%",
            self.method,
            self.buffer_size,
            self.labeled_rate,
            self.dataset,
            self.seeds.len(),
            100.0 * a,
            100.0 * a_sd,
            100.0 * f,
            100.0 * f_sd
        )
    }
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Thread pool sized by `WSCL_WORKERS` (default: one worker per core).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("WSCL_WORKERS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("WSCL_WORKERS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(e.to_string()))
}

/// Train and evaluation samples for a run, after the optional validation hold-out.
pub struct PreparedData {
    pub dataset: Dataset,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let dataset = match &cfg.dataset {
        DatasetSpec::Blobs(b) => Dataset::blobs(b, cfg.data_seed)?,
        DatasetSpec::Digits(d) => Dataset::digits(d, cfg.data_seed)?,
        DatasetSpec::File { train, test, shape } => Dataset::from_files(train, test, *shape)?,
    };
    let (train, eval) = if cfg.validation {
        split_validation(
            dataset.train.clone(),
            dataset.num_classes,
            VALIDATION_FRACTION,
            cfg.data_seed,
        )
    } else {
        (dataset.train.clone(), dataset.test.clone())
    };
    if eval.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    Ok(PreparedData { dataset, train, eval })
}

pub fn build_network(cfg: &RunConfig, dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<Network> {
    let emb = cfg.learner.embedding;
    match cfg.backbone {
        Backbone::Mlp => Network::mlp(dataset.shape.len(), &cfg.hidden, dataset.num_classes, emb, rng),
        Backbone::Conv => {
            if !dataset.shape.is_image() {
                return Err(Error::Config("conv backbone needs image-shaped data".into()));
            }
            let hidden = cfg.hidden.first().copied().unwrap_or(32);
            Network::conv(dataset.shape, cfg.conv_channels, hidden, dataset.num_classes, emb, rng)
        }
    }
}

pub fn augmentation_for(cfg: &RunConfig, dataset: &Dataset) -> Augmentation {
    if dataset.shape.is_image() {
        Augmentation::Image {
            shape: dataset.shape,
            pad: cfg.crop_pad,
            flip: cfg.flip,
        }
    } else {
        Augmentation::Jitter {
            sigma: cfg.jitter_sigma,
        }
    }
}

/// Accuracy of `learner` on each group of `eval` samples, grouping by
/// which of `class_groups` the sample's class falls into.
pub fn evaluate(learner: &Learner, eval: &[Sample], class_groups: &[Vec<usize>]) -> Result<Vec<f64>> {
    let mut accs = Vec::with_capacity(class_groups.len());
    for group in class_groups {
        let subset: Vec<&Sample> = eval.iter().filter(|s| group.contains(&s.class)).collect();
        if subset.is_empty() {
            return Err(Error::Config(format!("no evaluation samples for classes {group:?}")));
        }
        let mut correct = 0usize;
        for chunk in subset.chunks(512) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|s| s.features.clone()).collect();
            let preds = learner.predict(&Tensor::from_rows(&rows)?)?;
            correct += preds.iter().zip(chunk).filter(|(p, s)| **p == s.class).count();
        }
        accs.push(correct as f64 / subset.len() as f64);
    }
    Ok(accs)
}

/// Trains one seeded run and returns its matrix, losses and buffer.
pub fn run_seed(cfg: &RunConfig, data: &PreparedData, seed: u64) -> Result<SeedOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let ds = &data.dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = build_network(cfg, ds, &mut rng)?;
    let mut learner = Learner::new(
        cfg.learner.clone(),
        net,
        augmentation_for(cfg, ds),
        seed.wrapping_add(1),
    )?;

    let joint = cfg.learner.method == Method::Joint;
    let (stream_tasks, rate) = if joint { (1, 1.0) } else { (cfg.tasks, cfg.labeled_rate) };
    let stream = build_split(&data.train, ds.num_classes, stream_tasks, rate, seed)?;
    if !ds.num_classes.is_multiple_of(cfg.tasks) {
        return Err(Error::Config(format!(
            "{} classes cannot form {} equal tasks",
            ds.num_classes, cfg.tasks
        )));
    }
    let per_task = ds.num_classes / cfg.tasks;
    let eval_groups: Vec<Vec<usize>> = (0..cfg.tasks)
        .map(|t| (t * per_task..(t + 1) * per_task).collect())
        .collect();

    let mut matrix = MetricsMatrix::new(cfg.tasks);
    let mut steps = Vec::new();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    for task in stream.tasks() {
        learner.begin_task(task.id, &task.classes)?;
        let mut cursor = stream.cursor(task.id, cfg.batch_size, cfg.learner.epochs_per_task)?;
        let mut step = 0;
        while !cursor.is_exhausted() {
            let epoch = cursor.epoch();
            let batch = cursor.next_batch(&mut batch_rng);
            if batch.is_empty() {
                continue;
            }
            let loss = learner.step(&batch)?;
            steps.push(StepLog {
                task: task.id,
                epoch,
                step,
                loss,
            });
            step += 1;
        }
        learner.end_task()?;
        if joint {
            let accs = evaluate(&learner, &data.eval, &eval_groups)?;
            for k in 0..cfg.tasks {
                matrix.record_eval(k, &accs[..=k])?;
            }
        } else {
            let accs = evaluate(&learner, &data.eval, &eval_groups[..=task.id])?;
            matrix.record_eval(task.id, &accs)?;
        }
        info!("seed {seed}: finished task {} ({} steps)", task.id, step);
    }
    let final_accuracy = matrix.final_accuracy()?;
    let forgetting = if cfg.tasks >= 2 { matrix.forgetting()? } else { 0.0 };
    Ok(SeedOutcome {
        seed,
        matrix,
        final_accuracy,
        forgetting,
        steps,
        buffer: learner.buffer().clone(),
        num_classes: ds.num_classes,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Per-step loss log as CSV.
pub fn losses_csv(steps: &[StepLog]) -> String {
    let mut s = String::from(
        "task,epoch,step,supervised,unsupervised,sup_mining,unsup_mining,lambda,mu,total,degenerate,unsup_mining_active\n",
    );
    for l in steps {
        let b = &l.loss;
        let _ = writeln!(
            s,
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            l.task,
            l.epoch,
            l.step,
            b.supervised,
            b.unsupervised,
            b.sup_mining,
            b.unsup_mining,
            b.lambda,
            b.mu,
            b.total,
            b.degenerate,
            b.unsup_mining_active
        );
    }
    s
}

/// Writes `metrics.csv`, `losses.csv` and `buffer.bin` under `dir`.
pub fn write_seed_artifacts(outcome: &SeedOutcome, dir: &Path) -> Result<()> {
    write_file(&dir.join("metrics.csv"), outcome.matrix.to_csv().as_bytes())?;
    write_file(&dir.join("losses.csv"), losses_csv(&outcome.steps).as_bytes())?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.buffer.save(&dir.join("buffer.bin"), outcome.num_classes)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Runs every seed of `cfg` in parallel without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunRecord> {
    worker_pool()?.install(|| run_seeds(cfg))
}

/// Seeds fan out on the current rayon pool.
pub(crate) fn run_seeds(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let data = prepare_data(cfg)?;
    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &data, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        config_hash: cfg.hash(),
        dataset: data.dataset.name.clone(),
        tasks: cfg.tasks,
        method: cfg.learner.method,
        buffer_size: if cfg.learner.method.uses_buffer() {
            cfg.learner.buffer_size
        } else {
            0
        },
        labeled_rate: cfg.labeled_rate,
        seeds: outcomes,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every seed and persists per-seed artifacts, `record.csv`,
/// `summary.txt` and the resolved `config.cfg` under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    let record = run_in_memory(cfg)?;
    write_record(cfg, &record)?;
    Ok(record)
}

pub fn write_record(cfg: &RunConfig, record: &RunRecord) -> Result<()> {
    for o in &record.seeds {
        write_seed_artifacts(o, &seed_dir(&cfg.out, o.seed))?;
    }
    write_file(&cfg.out.join("record.csv"), record.to_csv().as_bytes())?;
    write_file(&cfg.out.join("config.cfg"), cfg.to_text().as_bytes())?;
    write_file(
        &cfg.out.join("summary.txt"),
        format!("{}\n", record.summary()).as_bytes(),
    )
}
