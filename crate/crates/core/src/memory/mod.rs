//! Replay memory and nearest-neighbour inference over its embeddings.

pub mod knn;
pub mod reservoir;

pub use knn::{knn_fit_and_predict, KnnClassifier};
pub use reservoir::{BufferItem, ReservoirBuffer};
