use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::data::format::{Container, Record};
use crate::error::{Error, Result};

/// A labeled (or pseudo-labeled) replay entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferItem {
    pub features: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

/// Fixed-capacity memory filled by reservoir sampling: after `n` insertion
/// attempts every attempted item is resident with probability `min(1, m/n)`.
#[derive(Debug, Clone)]
pub struct ReservoirBuffer<T = BufferItem> {
    capacity: usize,
    items: Vec<T>,
    seen: u64,
}

impl<T> ReservoirBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of insertion attempts so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    /// Offers `item` to the reservoir. Returns whether it was stored.
    pub fn try_insert<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) -> bool {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
            return true;
        }
        if self.capacity == 0 {
            return false;
        }
        let slot = rng.random_range(0..self.seen);
        if slot < self.capacity as u64 {
            self.items[slot as usize] = item;
            true
        } else {
            false
        }
    }

    /// Indices of a replay minibatch: without replacement when `k` fits in
    /// the buffer, with replacement otherwise. Empty buffers give empty batches.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let n = self.items.len();
        if n == 0 || k == 0 {
            return Vec::new();
        }
        if k <= n {
            index::sample(rng, n, k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..n)).collect()
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<&T> {
        self.sample_indices(k, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

impl ReservoirBuffer<BufferItem> {
    pub fn to_container(&self, num_classes: usize) -> Container {
        Container {
            feature_dims: self.items.first().map_or(0, |i| i.features.len()),
            num_classes,
            rows: self
                .items
                .iter()
                .map(|i| Record {
                    class_id: i.label,
                    task_id: Some(i.task_id),
                    features: i.features.clone(),
                })
                .collect(),
        }
    }

    /// Writes a snapshot (binary unless the path ends in `.csv`).
    pub fn save(&self, path: &Path, num_classes: usize) -> Result<()> {
        self.to_container(num_classes).save(path)
    }

    /// Reads a snapshot back as a list of items.
    pub fn load_items(path: &Path) -> Result<Vec<BufferItem>> {
        let c = Container::load(path)?;
        c.rows
            .into_iter()
            .map(|r| {
                let task_id = r
                    .task_id
                    .ok_or_else(|| Error::Parse("snapshot row lacks a task id".into()))?;
                Ok(BufferItem {
                    features: r.features,
                    label: r.class_id,
                    task_id,
                })
            })
            .collect()
    }
}
