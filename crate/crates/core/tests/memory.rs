mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wscl_core::compute::{EmbeddingSource, Network, Tensor};
use wscl_core::memory::{knn_fit_and_predict, BufferItem, KnnClassifier, ReservoirBuffer};

#[test]
fn residence_is_uniform_over_the_stream() {
    let s = common::reservoir_uniformity(10_000, 100, 1_000, 7);
    assert!(s.max_len <= s.capacity);
    assert!(s.chi_z.abs() <= 3.0, "chi-square z = {}", s.chi_z);
    assert!(
        s.outside_3sigma <= 0.005,
        "{} of items beyond 3 sigma",
        s.outside_3sigma
    );
}

#[test]
fn second_insert_into_unit_buffer_is_a_coin_flip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 10_000;
    let mut accepted = 0;
    for _ in 0..trials {
        let mut buf = ReservoirBuffer::new(1);
        assert!(buf.try_insert(0u8, &mut rng));
        accepted += usize::from(buf.try_insert(1u8, &mut rng));
    }
    let rate = accepted as f64 / trials as f64;
    assert!((rate - 0.5).abs() <= 0.015, "{rate}");
}

#[test]
fn fill_phase_accepts_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf = ReservoirBuffer::new(10);
    assert!((0..10).all(|i| buf.try_insert(i, &mut rng)));
    assert_eq!(buf.len(), 10);
    assert_eq!(buf.seen(), 10);
}

#[test]
fn replay_sampling_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut buf = ReservoirBuffer::new(100);
    for i in 0..100usize {
        buf.try_insert(i, &mut rng);
    }
    let draws = 100_000;
    let mut counts = [0u32; 100];
    for _ in 0..draws {
        counts[*buf.sample_batch(1, &mut rng)[0]] += 1;
    }
    let p = 0.01;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    let z: Vec<f64> = counts.iter().map(|&c| (c as f64 - draws as f64 * p) / sd).collect();
    let chi: f64 = z.iter().map(|v| v * v).sum();
    assert!(((chi - 100.0) / 200f64.sqrt()).abs() <= 3.0, "chi {chi}");
    assert!(z.iter().all(|v| v.abs() <= 4.0));
}

#[test]
fn replay_batches_follow_size_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut buf = ReservoirBuffer::new(5);
    assert!(buf.sample_batch(3, &mut rng).is_empty());
    buf.try_insert(42, &mut rng);
    assert_eq!(buf.sample_batch(1, &mut rng), vec![&42]);
    assert!(buf.sample_batch(0, &mut rng).is_empty());
    for i in 0..4 {
        buf.try_insert(i, &mut rng);
    }
    let mut idx = buf.sample_indices(5, &mut rng);
    idx.sort_unstable();
    assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    assert_eq!(buf.sample_indices(32, &mut rng).len(), 32);
}

#[test]
fn knn_matches_brute_force_scan() {
    let (agree, total) = common::knn_oracle(100, 99);
    assert_eq!(agree, total);
}

#[test]
fn single_class_buffer_always_wins() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Network::mlp(3, &[4], 5, EmbeddingSource::Logits, &mut rng).unwrap();
    let mut buf = ReservoirBuffer::new(20);
    for _ in 0..20 {
        let item = BufferItem {
            features: common::gaussian_vec(&mut rng, 3, 1.0),
            label: 3,
            task_id: 0,
        };
        buf.try_insert(item, &mut rng);
    }
    let q = Tensor::from_rows(
        &(0..10)
            .map(|_| common::gaussian_vec(&mut rng, 3, 5.0))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    assert!(knn_fit_and_predict(&buf, &net, &q, 5).unwrap().iter().all(|&c| c == 3));
}

#[test]
fn oversized_k_is_clamped() {
    let knn = KnnClassifier::new(vec![vec![0.0], vec![10.0]], vec![0, 1], 9).unwrap();
    assert_eq!(knn.k(), 2);
    assert!(KnnClassifier::new(vec![], vec![], 1).is_err());
}

#[test]
fn buffer_snapshot_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut buf = ReservoirBuffer::new(6);
    for t in 0..3 {
        for _ in 0..4 {
            let item = BufferItem {
                features: common::gaussian_vec(&mut rng, 2, 1.0),
                label: 2 * t,
                task_id: t,
            };
            buf.try_insert(item, &mut rng);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("buffer.bin");
    buf.save(&path, 6).unwrap();
    assert_eq!(ReservoirBuffer::load_items(&path).unwrap(), buf.items());
}
