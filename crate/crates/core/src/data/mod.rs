//! Datasets, the labeled/unlabeled task stream and augmentations.

pub mod augment;
pub mod dataset;
pub mod format;
pub mod stream;

pub use augment::Augmentation;
pub use dataset::{split_validation, BlobsConfig, Dataset, DigitsConfig, Sample};
pub use stream::{audit, build_split, labeled_count, Batch, Example, Task, TaskCursor, TaskStream};
