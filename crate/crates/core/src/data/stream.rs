use std::cell::Cell;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Sample;
use crate::error::{Error, Result};

thread_local! {
    static HIDDEN_LABEL_READS: Cell<usize> = const { Cell::new(0) };
}

/// Audit hook counting reads of ground truth on unlabeled examples.
pub mod audit {
    use super::HIDDEN_LABEL_READS;

    /// Number of hidden-label reads on the current thread.
    pub fn hidden_label_reads() -> usize {
        HIDDEN_LABEL_READS.with(|c| c.get())
    }

    pub fn reset() {
        HIDDEN_LABEL_READS.with(|c| c.set(0));
    }
}

/// One stream item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    features: Vec<f64>,
    label: Option<usize>,
    class_true: usize,
    task_id: usize,
}

impl Example {
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// The visible label, `None` for unlabeled items.
    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    /// Ground truth for evaluation and audits. Reads on unlabeled items are
    /// counted by [`audit::hidden_label_reads`].
    pub fn reveal_class(&self) -> usize {
        if self.label.is_none() {
            HIDDEN_LABEL_READS.with(|c| c.set(c.get() + 1));
        }
        self.class_true
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: usize,
    pub classes: Vec<usize>,
    examples: Vec<Example>,
}

impl Task {
    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labeled_count(&self) -> usize {
        self.examples.iter().filter(|e| e.label.is_some()).count()
    }
}

/// Ordered class-incremental tasks with a fixed labeled fraction.
#[derive(Debug, Clone)]
pub struct TaskStream {
    tasks: Vec<Task>,
    labeled_rate: f64,
}

/// Labeled items per class: `floor(rate * n)`.
pub fn labeled_count(n: usize, rate: f64) -> usize {
    // The nudge absorbs representation error when rate * n is an exact integer.
    (rate * n as f64 + 1e-9).floor() as usize
}

/// Partitions classes into `num_tasks` consecutive groups and marks
/// `floor(rate * n_c)` uniformly chosen examples of each class as labeled.
pub fn build_split(
    samples: &[Sample],
    num_classes: usize,
    num_tasks: usize,
    labeled_rate: f64,
    seed: u64,
) -> Result<TaskStream> {
    if num_tasks == 0 || num_classes == 0 || !num_classes.is_multiple_of(num_tasks) {
        return Err(Error::Config(format!(
            "{num_classes} classes cannot form {num_tasks} equal disjoint tasks"
        )));
    }
    if !(labeled_rate > 0.0 && labeled_rate <= 1.0) {
        return Err(Error::Config(format!(
            "labeled rate must be in (0, 1], got {labeled_rate}"
        )));
    }
    let per_task = num_classes / num_tasks;
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); num_classes];
    for s in samples {
        if s.class >= num_classes {
            return Err(Error::Config(format!("sample class {} out of range", s.class)));
        }
        by_class[s.class].push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks: Vec<Task> = (0..num_tasks)
        .map(|t| Task {
            id: t,
            classes: (t * per_task..(t + 1) * per_task).collect(),
            examples: Vec::new(),
        })
        .collect();
    for (class, group) in by_class.iter().enumerate() {
        let n_labeled = labeled_count(group.len(), labeled_rate);
        if n_labeled == 0 {
            return Err(Error::Config(format!(
                "class {class} has {} examples: rate {labeled_rate} leaves it without labels",
                group.len()
            )));
        }
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.shuffle(&mut rng);
        let task_id = class / per_task;
        for (rank, &i) in order.iter().enumerate() {
            tasks[task_id].examples.push(Example {
                features: group[i].features.clone(),
                label: (rank < n_labeled).then_some(class),
                class_true: class,
                task_id,
            });
        }
    }
    Ok(TaskStream { tasks, labeled_rate })
}

impl TaskStream {
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn labeled_rate(&self) -> f64 {
        self.labeled_rate
    }

    pub fn classes_per_task(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.classes.len())
    }

    /// Batch iterator over task `task` for `epochs` passes.
    pub fn cursor(&self, task: usize, batch_size: usize, epochs: usize) -> Result<TaskCursor<'_>> {
        let task = self
            .tasks
            .get(task)
            .ok_or_else(|| Error::Usage(format!("task {task} does not exist")))?;
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(TaskCursor {
            task,
            order: Vec::new(),
            pos: 0,
            epoch: 0,
            epochs,
            batch_size,
        })
    }
}

/// Mixed batch handed to learners. Unlabeled items carry features only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub labeled: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub unlabeled: Vec<Vec<f64>>,
    pub task_id: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Epoch-aware batch source for one task.
///
/// Each epoch visits every example once in a fresh random order. The call
/// after the last batch of an epoch returns an empty batch; once `epochs`
/// passes are done every call returns an empty batch.
#[derive(Debug)]
pub struct TaskCursor<'a> {
    task: &'a Task,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    epochs: usize,
    batch_size: usize,
}

impl TaskCursor<'_> {
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_exhausted(&self) -> bool {
        self.epoch >= self.epochs
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Batch {
        let mut batch = Batch {
            task_id: self.task.id,
            ..Batch::default()
        };
        if self.is_exhausted() {
            return batch;
        }
        if self.pos == 0 && self.order.is_empty() {
            self.order = (0..self.task.examples.len()).collect();
            self.order.shuffle(rng);
        }
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.order.clear();
            return batch;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        for &i in &self.order[self.pos..end] {
            let e = &self.task.examples[i];
            match e.label {
                Some(y) => {
                    batch.labeled.push(e.features.clone());
                    batch.labels.push(y);
                }
                None => batch.unlabeled.push(e.features.clone()),
            }
        }
        self.pos = end;
        batch
    }
}
