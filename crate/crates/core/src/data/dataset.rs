use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::augment::crop;
use super::format::{Container, Record};
use crate::compute::FeatureShape;
use crate::error::{Error, Result};

/// A fully labeled input, as stored in a dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub shape: FeatureShape,
    pub num_classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Gaussian classes, each a mixture of a few isotropic modes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub dim: usize,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of class centres around the origin.
    pub class_spread: f64,
    /// Number of modes per class.
    pub modes: usize,
    /// Standard deviation of mode centres around their class centre.
    pub mode_spread: f64,
    /// Within-mode noise.
    pub noise: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            num_classes: 10,
            train_per_class: 500,
            test_per_class: 200,
            class_spread: 1.0,
            modes: 3,
            mode_spread: 0.6,
            noise: 0.5,
        }
    }
}

/// Low-resolution 8x8 digit glyphs with stroke noise and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitsConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub max_shift: usize,
}

impl Default for DigitsConfig {
    fn default() -> Self {
        Self {
            train_per_class: 500,
            test_per_class: 200,
            noise: 0.25,
            max_shift: 1,
        }
    }
}

const GLYPHS: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

impl Dataset {
    pub fn blobs(cfg: &BlobsConfig, seed: u64) -> Result<Self> {
        if cfg.dim == 0 || cfg.num_classes == 0 || cfg.modes == 0 {
            return Err(Error::Config("blobs need positive dim, classes and modes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = |std: f64| Normal::new(0.0, std.max(0.0)).map_err(|e| Error::Config(e.to_string()));
        let class_dist = gauss(cfg.class_spread)?;
        let mode_dist = gauss(cfg.mode_spread)?;
        let noise = gauss(cfg.noise)?;

        let mut modes = Vec::with_capacity(cfg.num_classes);
        for _ in 0..cfg.num_classes {
            let centre: Vec<f64> = (0..cfg.dim).map(|_| class_dist.sample(&mut rng)).collect();
            let class_modes: Vec<Vec<f64>> = (0..cfg.modes)
                .map(|_| centre.iter().map(|c| c + mode_dist.sample(&mut rng)).collect())
                .collect();
            modes.push(class_modes);
        }
        let draw = |n: usize, rng: &mut ChaCha8Rng| {
            let mut out = Vec::with_capacity(n * cfg.num_classes);
            for (class, class_modes) in modes.iter().enumerate() {
                for i in 0..n {
                    let m = &class_modes[i % cfg.modes];
                    let features = m.iter().map(|c| c + noise.sample(rng)).collect();
                    out.push(Sample { features, class });
                }
            }
            out
        };
        let train = draw(cfg.train_per_class, &mut rng);
        let test = draw(cfg.test_per_class, &mut rng);
        Ok(Self {
            name: format!("blobs-d{}-c{}-m{}-s{}", cfg.dim, cfg.num_classes, cfg.modes, seed),
            shape: FeatureShape::flat(cfg.dim),
            num_classes: cfg.num_classes,
            train,
            test,
        })
    }

    pub fn digits(cfg: &DigitsConfig, seed: u64) -> Result<Self> {
        let shape = FeatureShape::image(1, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let templates: Vec<Vec<f64>> = GLYPHS
            .iter()
            .map(|g| {
                let mut img = vec![0.0; 64];
                for (r, line) in g.iter().enumerate() {
                    for (c, ch) in line.chars().enumerate() {
                        if ch == '#' {
                            img[r * 8 + c + 1] = 1.0;
                        }
                    }
                }
                img
            })
            .collect();
        let shift = cfg.max_shift as i64;
        let draw = |n: usize, rng: &mut ChaCha8Rng| {
            let mut out = Vec::with_capacity(n * 10);
            for (class, t) in templates.iter().enumerate() {
                for _ in 0..n {
                    let intensity = rng.random_range(0.6..1.0);
                    let moved = crop(
                        t,
                        shape,
                        rng.random_range(-shift..=shift) as isize,
                        rng.random_range(-shift..=shift) as isize,
                    );
                    let features = moved
                        .iter()
                        .map(|&v| {
                            let stroke = if v > 0.0 && rng.random_bool(0.1) {
                                0.0
                            } else {
                                v * intensity
                            };
                            stroke + noise.sample(rng)
                        })
                        .collect();
                    out.push(Sample { features, class });
                }
            }
            out
        };
        let train = draw(cfg.train_per_class, &mut rng);
        let test = draw(cfg.test_per_class, &mut rng);
        Ok(Self {
            name: format!("digits8x8-s{seed}"),
            shape,
            num_classes: 10,
            train,
            test,
        })
    }

    /// Loads train and test splits stored in the container format.
    pub fn from_files(train: &Path, test: &Path, shape: Option<FeatureShape>) -> Result<Self> {
        let tr = Container::load(train)?;
        let te = Container::load(test)?;
        if tr.feature_dims != te.feature_dims || tr.num_classes != te.num_classes {
            return Err(Error::Config("train and test files disagree on their header".into()));
        }
        let shape = shape.unwrap_or(FeatureShape::flat(tr.feature_dims));
        if shape.len() != tr.feature_dims {
            return Err(Error::Config(format!(
                "image shape {shape:?} does not match {} features",
                tr.feature_dims
            )));
        }
        let samples = |c: Container| {
            c.rows
                .into_iter()
                .map(|r| Sample {
                    features: r.features,
                    class: r.class_id,
                })
                .collect()
        };
        Ok(Self {
            name: format!("file:{}", train.display()),
            shape,
            num_classes: tr.num_classes,
            train: samples(tr),
            test: samples(te),
        })
    }

    pub fn to_container(samples: &[Sample], shape: FeatureShape, num_classes: usize) -> Container {
        Container {
            feature_dims: shape.len(),
            num_classes,
            rows: samples
                .iter()
                .map(|s| Record {
                    class_id: s.class,
                    task_id: None,
                    features: s.features.clone(),
                })
                .collect(),
        }
    }

    pub fn class_counts(samples: &[Sample], num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for s in samples {
            counts[s.class] += 1;
        }
        counts
    }
}

/// Moves a class-balanced `fraction` of `samples` into a held-out split.
pub fn split_validation(
    samples: Vec<Sample>,
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<Sample>> = vec![Vec::new(); num_classes];
    for s in samples {
        by_class[s.class].push(s);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut group in by_class {
        group.shuffle(&mut rng);
        let n_val = (group.len() as f64 * fraction).floor() as usize;
        val.extend(group.drain(..n_val));
        train.extend(group);
    }
    (train, val)
}
