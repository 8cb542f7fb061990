//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use wscl_core::compute::gradcheck::{central_difference, relative_error};
use wscl_core::compute::{softmax, EmbeddingSource, FeatureShape, Network};
use wscl_core::data::{Augmentation, Batch};
use wscl_core::learners::{Learner, LearnerConfig, Method, Mining, StepPlan};
use wscl_core::losses::{ConsistencySpace, SoftLabel};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn gaussian_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn small_mlp(rng: &mut ChaCha8Rng, classes: usize, emb: EmbeddingSource) -> Network {
    Network::mlp(4, &[6], classes, emb, rng).unwrap()
}

pub fn small_conv(rng: &mut ChaCha8Rng, classes: usize) -> Network {
    Network::conv(
        FeatureShape::image(1, 4, 4),
        [2, 2],
        5,
        classes,
        EmbeddingSource::Penultimate,
        rng,
    )
    .unwrap()
}

/// Relative error between the plan's analytic gradient and central
/// differences (step `EPS`) of its total loss at the network's parameters.
///
/// Returns `None` when the point lies within one step of a kink (ReLU or
/// hinge): there the `EPS` and `EPS / 10` differences disagree and neither
/// is a derivative, so the point is redrawn instead of scored.
pub fn plan_error(net: &Network, plan: &StepPlan) -> Option<f64> {
    let mut probe = net.clone();
    let (_, analytic) = plan.gradient(&mut probe).unwrap();
    let theta = net.params().to_vec();
    let mut eval_net = net.clone();
    let mut numeric = |eps: f64| {
        central_difference(
            |t| {
                eval_net.params_mut().copy_from_slice(t);
                plan.evaluate(&eval_net).unwrap().total
            },
            &theta,
            eps,
        )
    };
    let coarse = numeric(EPS);
    let fine = numeric(EPS / 10.0);
    if relative_error(&coarse, &fine) > TOLERANCE {
        return None;
    }
    Some(relative_error(&analytic, &coarse))
}

fn randomize(net: &mut Network, rng: &mut ChaCha8Rng) {
    let p = gaussian_vec(rng, net.num_params(), 0.7);
    net.params_mut().copy_from_slice(&p);
}

fn random_label(rng: &mut ChaCha8Rng, classes: usize) -> SoftLabel {
    let logits = gaussian_vec(rng, classes, 2.0);
    SoftLabel::from_probabilities(softmax(&logits)).unwrap()
}

fn distinct3(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize, usize) {
    loop {
        let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
        if a != b && b != c && a != c {
            return (a, b, c);
        }
    }
}

/// One named family of gradient checks.
pub struct GradReport {
    pub name: &'static str,
    pub points: usize,
    /// Draws discarded for straddling a kink.
    pub redrawn: usize,
    pub worst: f64,
    /// Points where the checked term contributed a nonzero value.
    pub active: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst <= TOLERANCE && self.active * 2 >= self.points
    }
}

fn single_term(
    name: &'static str,
    points: usize,
    seed: u64,
    build: impl Fn(&mut ChaCha8Rng) -> (Network, StepPlan),
    active: impl Fn(&Network, &StepPlan) -> bool,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut n_active, mut scored, mut redrawn) = (0.0f64, 0, 0, 0);
    while scored < points {
        let (net, plan) = build(&mut rng);
        let Some(e) = plan_error(&net, &plan) else {
            redrawn += 1;
            assert!(redrawn <= points, "{name}: too many kink crossings");
            continue;
        };
        worst = worst.max(e);
        n_active += usize::from(active(&net, &plan));
        scored += 1;
    }
    GradReport {
        name,
        points,
        redrawn,
        worst,
        active: n_active,
    }
}

fn base_plan(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> StepPlan {
    let mut plan = StepPlan {
        lambda: rng.random_range(0.2..2.0),
        mu: rng.random_range(0.2..2.0),
        alpha: rng.random_range(0.5..20.0),
        beta: rng.random_range(0.5..20.0),
        ..StepPlan::default()
    };
    for _ in 0..rows {
        plan.push_row(gaussian_vec(rng, dim, 1.0));
    }
    plan
}

/// Every loss on its own plus the CIC and CCIC step compositions.
pub fn gradient_suite(points: usize) -> Vec<GradReport> {
    const C: usize = 3;
    let value = |pick: fn(&wscl_core::losses::LossBreakdown) -> f64| {
        move |net: &Network, plan: &StepPlan| pick(&plan.evaluate(net).unwrap()) > 0.0
    };
    let mut out = vec![
        single_term(
            "supervised cross-entropy",
            points,
            11,
            |rng| {
                let mut net = small_mlp(rng, C, EmbeddingSource::Logits);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 5, 4);
                plan.supervised = (0..5).map(|r| (r, rng.random_range(0..C))).collect();
                (net, plan)
            },
            value(|b| b.supervised),
        ),
        single_term(
            "consistency (logits)",
            points,
            12,
            |rng| {
                let mut net = small_mlp(rng, C, EmbeddingSource::Logits);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 5, 4);
                plan.unsupervised = (0..5).map(|r| (r, random_label(rng, C))).collect();
                (net, plan)
            },
            value(|b| b.unsupervised),
        ),
        single_term(
            "consistency (probabilities)",
            points,
            13,
            |rng| {
                let mut net = small_mlp(rng, C, EmbeddingSource::Logits);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 5, 4);
                plan.consistency = ConsistencySpace::Probabilities;
                plan.unsupervised = (0..5).map(|r| (r, random_label(rng, C))).collect();
                (net, plan)
            },
            value(|b| b.unsupervised),
        ),
        single_term(
            "unsupervised mining",
            points,
            14,
            |rng| {
                let mut net = small_mlp(rng, C, EmbeddingSource::Logits);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 6, 4);
                plan.unsup_pairs = (0..4)
                    .map(|_| {
                        let (a, b, _) = distinct3(rng, 6);
                        (a, b)
                    })
                    .collect();
                (net, plan)
            },
            value(|b| b.unsup_mining),
        ),
        single_term(
            "supervised mining",
            points,
            15,
            |rng| {
                let mut net = small_mlp(rng, C, EmbeddingSource::Logits);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 6, 4);
                plan.sup_triplets = (0..4).map(|_| distinct3(rng, 6)).collect();
                (net, plan)
            },
            value(|b| b.sup_mining),
        ),
        single_term(
            "mining on penultimate features",
            points,
            16,
            |rng| {
                let mut net = small_mlp(rng, C, EmbeddingSource::Penultimate);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 6, 4);
                plan.sup_triplets = (0..3).map(|_| distinct3(rng, 6)).collect();
                plan.unsup_pairs = (0..3)
                    .map(|_| {
                        let (a, b, _) = distinct3(rng, 6);
                        (a, b)
                    })
                    .collect();
                (net, plan)
            },
            value(|b| b.sup_mining + b.unsup_mining),
        ),
        single_term(
            "all terms through a conv backbone",
            points,
            17,
            |rng| {
                let mut net = small_conv(rng, C);
                randomize(&mut net, rng);
                let mut plan = base_plan(rng, 6, 16);
                plan.supervised = (0..3).map(|r| (r, rng.random_range(0..C))).collect();
                plan.unsupervised = (3..6).map(|r| (r, random_label(rng, C))).collect();
                plan.sup_triplets = vec![distinct3(rng, 6)];
                plan.unsup_pairs = vec![(0, 4), (2, 5)];
                (net, plan)
            },
            value(|b| b.total),
        ),
    ];
    out.push(composed(Method::Cic, points, 18));
    out.push(composed(Method::Ccic, points, 19));
    out
}

fn toy_batch(rng: &mut ChaCha8Rng, task: usize, labeled: usize, unlabeled: usize) -> Batch {
    let classes = [2 * task, 2 * task + 1];
    let mut b = Batch {
        task_id: task,
        ..Batch::default()
    };
    for _ in 0..labeled {
        let y = classes[rng.random_range(0..2)];
        let mut x = gaussian_vec(rng, 4, 0.5);
        x[y % 4] += 2.0;
        b.labeled.push(x);
        b.labels.push(y);
    }
    for _ in 0..unlabeled {
        b.unlabeled.push(gaussian_vec(rng, 4, 1.0));
    }
    b
}

/// Plans built by the learner itself: augmentation, mixUp, sharpened
/// targets and (for CCIC) mined pairs against a filled buffer.
fn composed(method: Method, points: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = LearnerConfig::for_method(method);
    cfg.buffer_size = 40;
    cfg.replay_batch = 4;
    cfg.lambda = 0.8;
    cfg.mu = 1.5;
    cfg.alpha = 8.0;
    cfg.beta = 4.0;
    cfg.mining = Mining::AcrossTask;
    let net = small_mlp(&mut rng, 4, EmbeddingSource::Logits);
    let mut learner = Learner::new(cfg, net, Augmentation::Jitter { sigma: 0.1 }, seed).unwrap();
    learner.begin_task(0, &[0, 1]).unwrap();
    for _ in 0..10 {
        let b = toy_batch(&mut rng, 0, 4, 4);
        learner.step(&b).unwrap();
    }
    learner.end_task().unwrap();
    learner.begin_task(1, &[2, 3]).unwrap();

    let (mut worst, mut active, mut scored, mut redrawn) = (0.0f64, 0, 0, 0);
    while scored < points {
        randomize(learner.network_mut(), &mut rng);
        let batch = toy_batch(&mut rng, 1, 3, 3);
        let plan = match method {
            Method::Cic => learner.plan_cic(&batch).unwrap(),
            _ => learner.plan_ccic(&batch).unwrap(),
        };
        let b = plan.evaluate(learner.network()).unwrap();
        let used = match method {
            Method::Cic => b.unsupervised > 0.0 && b.supervised > 0.0,
            _ => b.unsupervised > 0.0 && (b.unsup_mining > 0.0 || b.sup_mining > 0.0),
        };
        let Some(e) = plan_error(learner.network(), &plan) else {
            redrawn += 1;
            assert!(redrawn <= points, "{method}: too many kink crossings");
            continue;
        };
        active += usize::from(used);
        worst = worst.max(e);
        scored += 1;
    }
    GradReport {
        name: if method == Method::Cic {
            "CIC step composition"
        } else {
            "CCIC step composition"
        },
        points,
        redrawn,
        worst,
        active,
    }
}

/// Residence statistics of reservoir sampling over repeated trials.
pub struct ReservoirStats {
    pub max_len: usize,
    pub capacity: usize,
    /// `(sum of squared z-scores - n) / sqrt(2 n)`: ≈ N(0, 1) under uniformity.
    pub chi_z: f64,
    /// Share of items whose residence count lies beyond 3σ (≈ 0.27% expected).
    pub outside_3sigma: f64,
    /// Largest per-item |z|.
    pub max_abs_z: f64,
}

pub fn reservoir_uniformity(n: usize, m: usize, trials: usize, seed: u64) -> ReservoirStats {
    use wscl_core::memory::ReservoirBuffer;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; n];
    let mut max_len = 0;
    for _ in 0..trials {
        let mut buf = ReservoirBuffer::<usize>::new(m);
        for i in 0..n {
            buf.try_insert(i, &mut rng);
            max_len = max_len.max(buf.len());
        }
        for &i in buf.items() {
            counts[i] += 1;
        }
    }
    let p = (m as f64 / n as f64).min(1.0);
    let mean = trials as f64 * p;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    let z: Vec<f64> = counts.iter().map(|&c| (c as f64 - mean) / sd).collect();
    let chi: f64 = z.iter().map(|v| v * v).sum();
    ReservoirStats {
        max_len,
        capacity: m,
        chi_z: (chi - n as f64) / (2.0 * n as f64).sqrt(),
        outside_3sigma: z.iter().filter(|v| v.abs() > 3.0).count() as f64 / n as f64,
        max_abs_z: z.iter().fold(0.0, |a, v| a.max(v.abs())),
    }
}

/// Brute-force kNN: score every stored item, sort them all, vote.
pub fn brute_force_knn(refs: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> usize {
    let k = k.min(refs.len());
    let mut all: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = std::collections::BTreeMap::<usize, (usize, f64)>::new();
    for &(d2, i) in &all[..k] {
        let e = votes.entry(labels[i]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d2.sqrt();
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (&class, &(v, d)) in &votes {
        best = match best {
            Some((_, bv, bd)) if v < bv || (v == bv && d >= bd) => best,
            _ => Some((class, v, d)),
        };
    }
    best.unwrap().0
}

/// Random buffers and queries pushed through `knn_fit_and_predict`,
/// compared label by label with the brute-force scan. Half the instances
/// use integer-valued inputs and a bias-free identity-like network so that
/// distance and vote ties actually occur. Returns (agreements, total).
pub fn knn_oracle(instances: usize, seed: u64) -> (usize, usize) {
    use wscl_core::compute::{LayerSpec, Tensor};
    use wscl_core::memory::{knn_fit_and_predict, BufferItem, ReservoirBuffer};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut agree, mut total) = (0, 0);
    for inst in 0..instances {
        let dim = rng.random_range(1..5);
        let classes = rng.random_range(2..6);
        let n = rng.random_range(1..=500);
        let k = rng.random_range(1..12);
        let tied = inst % 2 == 1;
        let mut net = Network::new(
            FeatureShape::flat(dim),
            &[LayerSpec::Dense(8), LayerSpec::Relu, LayerSpec::Dense(classes)],
            EmbeddingSource::Logits,
            &mut rng,
        )
        .unwrap();
        if tied {
            // Identity on the first coordinates, all else zero: embeddings stay integral.
            let mut net_id = Network::new(
                FeatureShape::flat(dim),
                &[LayerSpec::Dense(classes)],
                EmbeddingSource::Logits,
                &mut rng,
            )
            .unwrap();
            let p = net_id.params_mut();
            p.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..dim.min(classes) {
                p[i * dim + i] = 1.0;
            }
            net = net_id;
        }
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            if tied {
                (0..dim).map(|_| rng.random_range(-2i32..=2) as f64).collect()
            } else {
                gaussian_vec(rng, dim, 1.0)
            }
        };
        let mut buf = ReservoirBuffer::new(n);
        for _ in 0..n {
            let item = BufferItem {
                features: draw(&mut rng),
                label: rng.random_range(0..classes),
                task_id: 0,
            };
            buf.try_insert(item, &mut rng);
        }
        let queries: Vec<Vec<f64>> = (0..20).map(|_| draw(&mut rng)).collect();
        let q = Tensor::from_rows(&queries).unwrap();
        let got = knn_fit_and_predict(&buf, &net, &q, k).unwrap();
        let refs: Vec<Vec<f64>> = buf
            .items()
            .iter()
            .map(|it| {
                net.forward(&Tensor::from_rows(std::slice::from_ref(&it.features)).unwrap())
                    .unwrap()
                    .embedding
                    .row(0)
                    .to_vec()
            })
            .collect();
        let labels: Vec<usize> = buf.items().iter().map(|it| it.label).collect();
        let q_emb = net.forward(&q).unwrap().embedding;
        let agrees = q_emb
            .iter_rows()
            .zip(&got)
            .all(|(e, &g)| brute_force_knn(&refs, &labels, e, k) == g);
        agree += usize::from(agrees);
        total += 1;
    }
    (agree, total)
}

/// Brute-force forgetting: for every task but the last, scan the whole
/// column for its maximum.
pub fn brute_force_forgetting(a: &[Vec<f64>]) -> f64 {
    let t = a.len();
    let mut sum = 0.0;
    for i in 0..t - 1 {
        let mut peak = f64::MIN;
        for row in a.iter().skip(i) {
            if row[i] > peak {
                peak = row[i];
            }
        }
        sum += peak - a[t - 1][i];
    }
    sum / (t - 1) as f64
}

/// Random lower-triangular accuracy matrix with 2..=8 tasks.
pub fn random_matrix(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let t = rng.random_range(2..=8);
    (0..t)
        .map(|k| (0..=k).map(|_| rng.random_range(0.0..=1.0)).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> wscl_core::metrics::MetricsMatrix {
    let mut m = wscl_core::metrics::MetricsMatrix::new(rows.len());
    for (k, r) in rows.iter().enumerate() {
        m.record_eval(k, r).unwrap();
    }
    m
}

/// (A_f of the two-task fixture, F of the three-task fixture, random
/// matrices with F in [-1, 1] that also match the brute-force scan).
pub fn metric_oracles(random: usize, seed: u64) -> (f64, f64, usize) {
    let af = matrix_from_rows(&[vec![0.9], vec![0.8, 0.6]]).final_accuracy().unwrap();
    let f = matrix_from_rows(&[vec![0.9], vec![0.7, 0.8], vec![0.5, 0.6, 0.7]])
        .forgetting()
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    for _ in 0..random {
        let rows = random_matrix(&mut rng);
        let got = matrix_from_rows(&rows).forgetting().unwrap();
        if (-1.0..=1.0).contains(&got) && (got - brute_force_forgetting(&rows)).abs() <= 1e-12 {
            ok += 1;
        }
    }
    (af, f, ok)
}

/// SVHN training-set class sizes and the published labeled counts at
/// 0.8%, 5%, 25% and 100%.
pub const SVHN_TABLE: [(usize, [usize; 4]); 10] = [
    (4948, [39, 247, 1237, 4948]),
    (13861, [110, 693, 3465, 13861]),
    (10585, [84, 529, 2646, 10585]),
    (8497, [67, 424, 2124, 8497]),
    (7458, [59, 372, 1864, 7458]),
    (6882, [55, 344, 1720, 6882]),
    (5727, [45, 286, 1431, 5727]),
    (5595, [44, 279, 1398, 5595]),
    (5045, [40, 252, 1261, 5045]),
    (4659, [37, 232, 1164, 4659]),
];
pub const TABLE_RATES: [f64; 4] = [0.008, 0.05, 0.25, 1.0];

/// Runs `build_split` on a stream with SVHN's class sizes at every rate and
/// returns `(class, rate, published, labeled)` for all 40 cells.
pub fn svhn_split_cells() -> Vec<(usize, f64, usize, usize)> {
    use wscl_core::data::{build_split, Sample};
    let samples: Vec<Sample> = SVHN_TABLE
        .iter()
        .enumerate()
        .flat_map(|(class, &(n, _))| {
            (0..n).map(move |i| Sample {
                features: vec![i as f64],
                class,
            })
        })
        .collect();
    let mut cells = Vec::new();
    for (r, &rate) in TABLE_RATES.iter().enumerate() {
        let stream = build_split(&samples, 10, 5, rate, 13).unwrap();
        let mut labeled = [0usize; 10];
        for task in stream.tasks() {
            for e in task.examples() {
                if let Some(y) = e.label() {
                    labeled[y] += 1;
                }
            }
        }
        for (class, &(_, published)) in SVHN_TABLE.iter().enumerate() {
            cells.push((class, rate, published[r], labeled[class]));
        }
    }
    cells
}
