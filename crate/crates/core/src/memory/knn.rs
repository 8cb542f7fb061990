use log::warn;

use crate::compute::tensor::squared_distance;
use crate::compute::{Network, Tensor};
use crate::error::{Error, Result};
use crate::memory::{BufferItem, ReservoirBuffer};

/// k-nearest-neighbour vote in embedding space.
///
/// Neighbours are ranked by Euclidean distance (stored order breaks exact
/// ties). The winning class has the most votes; vote ties go to the class
/// with the smallest summed neighbour distance, then to the lowest class id.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    k: usize,
}

impl KnnClassifier {
    pub fn new(embeddings: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::Usage("kNN needs at least one reference item".into()));
        }
        if embeddings.len() != labels.len() {
            return Err(Error::Shape("one label per reference embedding".into()));
        }
        if k == 0 {
            return Err(Error::Config("kNN needs k >= 1".into()));
        }
        let k = if k > embeddings.len() {
            warn!("kNN k={k} exceeds {} stored items; clamping", embeddings.len());
            embeddings.len()
        } else {
            k
        };
        Ok(Self { embeddings, labels, k })
    }

    /// Embeds every buffer item with `net`.
    pub fn fit(buffer: &ReservoirBuffer<BufferItem>, net: &Network, k: usize) -> Result<Self> {
        if buffer.is_empty() {
            return Err(Error::Usage("kNN fitted on an empty buffer".into()));
        }
        let mut embeddings = Vec::with_capacity(buffer.len());
        for chunk in buffer.items().chunks(256) {
            let rows: Vec<&[f64]> = chunk.iter().map(|i| i.features.as_slice()).collect();
            let out = net.forward(&Tensor::from_rows(&rows)?)?;
            embeddings.extend(out.embedding.iter_rows().map(<[f64]>::to_vec));
        }
        let labels = buffer.items().iter().map(|i| i.label).collect();
        Self::new(embeddings, labels, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn predict_one(&self, query: &[f64]) -> usize {
        let mut ranked: Vec<(f64, usize)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (squared_distance(e, query), i))
            .collect();
        if self.k < ranked.len() {
            ranked.select_nth_unstable_by(self.k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ranked.truncate(self.k);
        }
        // (class, votes, summed distance)
        let mut tally: Vec<(usize, usize, f64)> = Vec::with_capacity(self.k);
        for &(d2, i) in &ranked {
            let class = self.labels[i];
            match tally.iter_mut().find(|t| t.0 == class) {
                Some(t) => {
                    t.1 += 1;
                    t.2 += d2.sqrt();
                }
                None => tally.push((class, 1, d2.sqrt())),
            }
        }
        tally
            .into_iter()
            .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
            .map(|t| t.0)
            .expect("k >= 1")
    }

    pub fn predict(&self, queries: &Tensor) -> Vec<usize> {
        queries.iter_rows().map(|q| self.predict_one(q)).collect()
    }
}

/// Embeds the buffer and the queries with `net` and labels each query by
/// its k nearest buffer items.
pub fn knn_fit_and_predict(
    buffer: &ReservoirBuffer<BufferItem>,
    net: &Network,
    queries: &Tensor,
    k: usize,
) -> Result<Vec<usize>> {
    let knn = KnnClassifier::fit(buffer, net, k)?;
    let q = net.forward(queries)?;
    Ok(knn.predict(&q.embedding))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knn(points: &[(f64, usize)], k: usize) -> KnnClassifier {
        KnnClassifier::new(
            points.iter().map(|p| vec![p.0]).collect(),
            points.iter().map(|p| p.1).collect(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn exact_match_with_k1() {
        let c = knn(&[(0.0, 3), (5.0, 1), (9.0, 2)], 1);
        assert_eq!(c.predict_one(&[5.0]), 1);
    }

    #[test]
    fn nearest_of_two_classes() {
        let c = knn(&[(0.0, 0), (10.0, 1)], 1);
        assert_eq!(c.predict_one(&[1.0]), 0);
    }

    #[test]
    fn vote_ties_prefer_smaller_summed_distance_then_lower_class() {
        let c = knn(&[(-1.0, 4), (2.0, 2)], 2);
        assert_eq!(c.predict_one(&[0.0]), 4);
        let c = knn(&[(-1.0, 4), (1.0, 2)], 2);
        assert_eq!(c.predict_one(&[0.0]), 2);
    }

    #[test]
    fn majority_wins_over_distance() {
        let c = knn(&[(0.1, 7), (1.0, 3), (1.1, 3)], 3);
        assert_eq!(c.predict_one(&[0.0]), 3);
    }

    #[test]
    fn k_is_clamped_and_validated() {
        assert_eq!(knn(&[(0.0, 1), (1.0, 1)], 10).k(), 2);
        assert!(KnnClassifier::new(vec![], vec![], 1).is_err());
        assert!(KnnClassifier::new(vec![vec![0.0]], vec![0], 0).is_err());
    }

    #[test]
    fn single_class_buffer_always_wins() {
        let c = knn(&[(0.0, 6), (3.0, 6), (-8.0, 6)], 2);
        for q in [-100.0, 0.0, 55.0] {
            assert_eq!(c.predict_one(&[q]), 6);
        }
    }
}
