use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::compute::FeatureShape;

/// Label-preserving input perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    Identity,
    /// Additive isotropic Gaussian noise, for flat feature vectors.
    Jitter {
        sigma: f64,
    },
    /// Random translation inside a zero-padded frame plus optional mirror.
    Image {
        shape: FeatureShape,
        pad: usize,
        flip: bool,
    },
}

impl Augmentation {
    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        match *self {
            Augmentation::Identity => x.to_vec(),
            Augmentation::Jitter { sigma } => {
                if sigma <= 0.0 {
                    return x.to_vec();
                }
                let noise = Normal::new(0.0, sigma).expect("positive sigma");
                x.iter().map(|&v| v + noise.sample(rng)).collect()
            }
            Augmentation::Image { shape, pad, flip } => {
                let p = pad as i64;
                let dy = rng.random_range(-p..=p) as isize;
                let dx = rng.random_range(-p..=p) as isize;
                let out = crop(x, shape, dy, dx);
                if flip && rng.random_bool(0.5) {
                    flip_horizontal(&out, shape)
                } else {
                    out
                }
            }
        }
    }
}

/// Mirrors every channel left to right.
pub fn flip_horizontal(x: &[f64], shape: FeatureShape) -> Vec<f64> {
    let w = shape.width;
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(w) {
        out.extend(row.iter().rev());
    }
    out
}

/// Window of the zero-padded image displaced by `(dy, dx)`; an offset of
/// zero returns the input unchanged.
pub fn crop(x: &[f64], shape: FeatureShape, dy: isize, dx: isize) -> Vec<f64> {
    let (h, w) = (shape.height as isize, shape.width as isize);
    let mut out = vec![0.0; x.len()];
    for c in 0..shape.channels {
        let base = c * shape.height * shape.width;
        for y in 0..h {
            let sy = y + dy;
            if !(0..h).contains(&sy) {
                continue;
            }
            for xx in 0..w {
                let sx = xx + dx;
                if (0..w).contains(&sx) {
                    out[base + (y * w + xx) as usize] = x[base + (sy * w + sx) as usize];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn image(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..64).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn flip_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = FeatureShape::image(2, 4, 8);
        let x = image(&mut rng);
        assert_ne!(flip_horizontal(&x, shape), x);
        assert_eq!(flip_horizontal(&flip_horizontal(&x, shape), shape), x);
    }

    #[test]
    fn zero_offset_crop_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = image(&mut rng);
        let shape = FeatureShape::image(1, 8, 8);
        assert_eq!(crop(&x, shape, 0, 0), x);
        let no_pad = Augmentation::Image {
            shape,
            pad: 0,
            flip: false,
        };
        assert_eq!(no_pad.apply(&x, &mut rng), x);
    }

    #[test]
    fn crop_shifts_content() {
        let shape = FeatureShape::image(1, 2, 2);
        assert_eq!(crop(&[1.0, 2.0, 3.0, 4.0], shape, 0, 1), vec![2.0, 0.0, 4.0, 0.0]);
        assert_eq!(crop(&[1.0, 2.0, 3.0, 4.0], shape, -1, 0), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn augmentations_preserve_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = image(&mut rng);
        let shape = FeatureShape::image(1, 8, 8);
        for aug in [
            Augmentation::Identity,
            Augmentation::Jitter { sigma: 0.3 },
            Augmentation::Image {
                shape,
                pad: 2,
                flip: true,
            },
        ] {
            assert_eq!(aug.apply(&x, &mut rng).len(), x.len());
        }
    }

    #[test]
    fn two_draws_usually_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = FeatureShape::image(1, 8, 8);
        let aug = Augmentation::Image {
            shape,
            pad: 2,
            flip: true,
        };
        let trials = 2000;
        let differ = (0..trials)
            .filter(|_| {
                let x = image(&mut rng);
                aug.apply(&x, &mut rng) != aug.apply(&x, &mut rng)
            })
            .count();
        // 25 offsets x 2 flips: P(equal) = 1/50 on images without symmetry.
        assert!(differ as f64 / trials as f64 > 0.9);
    }
}
