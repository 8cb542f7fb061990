//! Weakly supervised continual learning.
//!
//! A compact classifier is trained on a sequence of class-disjoint tasks in
//! which only a fraction of the stream carries labels. The crate provides the
//! full pipeline:
//!
//! - [`compute`]: dense tensors, a small feed-forward / convolutional network
//!   with explicit backward passes, SGD and Adam, and a finite-difference
//!   gradient checker.
//! - [`data`]: desk-scale datasets, the class-balanced labeled/unlabeled split,
//!   batch streaming and label-preserving augmentations.
//! - [`memory`]: the reservoir replay buffer and the kNN classifier fitted on
//!   buffer embeddings.
//! - [`losses`]: sharpening, asymmetric mixUp, cross-entropy, the consistency
//!   term and the two margin-based mining terms.
//! - [`learners`]: fine-tuning, joint training, ER, PseudoER, CIC and CCIC.
//! - [`metrics`]: the task accuracy matrix, final accuracy and forgetting.
//! - [`runner`]: configs, seeded runs, grid search and report tables.

pub mod compute;
pub mod data;
pub mod error;
pub mod learners;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod runner;

pub use error::{Error, Result};
