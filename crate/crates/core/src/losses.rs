//! Objective components.
//!
//! The batch losses operate on rows of a forward pass: they return the
//! (unweighted) mean value and, when a gradient buffer is supplied, add
//! `weight * dLoss/dOutput` into it so several terms can share one backward
//! pass.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::compute::tensor::{softmax, squared_distance, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Nonnegative class weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Wraps an already normalised probability vector.
    pub fn from_probabilities(p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!("{p:?} is not a probability vector")));
        }
        Ok(Self(p))
    }
}

/// Temperature sharpening `z_i^(1/tau) / sum_j z_j^(1/tau)`.
pub fn sharpen(z: &[f64], tau: f64) -> Result<SoftLabel> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("sharpening temperature must be > 0, got {tau}")));
    }
    if z.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Usage(format!(
            "sharpen needs nonnegative finite input, got {z:?}"
        )));
    }
    let max = z.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Usage("sharpen input is all zeros".into()));
    }
    // Powers are taken relative to the maximum so tiny temperatures cannot overflow.
    let inv = 1.0 / tau;
    let mut out: Vec<f64> = z.iter().map(|&v| (v / max).powf(inv)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(SoftLabel(out))
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Asymmetric interpolation weight `max(zeta, 1 - zeta)`.
pub fn mix_weight(zeta: f64) -> f64 {
    zeta.max(1.0 - zeta)
}

/// Draws `zeta ~ Beta(gamma, gamma)`.
pub fn sample_zeta<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(gamma, gamma).map_err(|e| Error::Config(format!("mixUp parameter {gamma}: {e}")))?;
    Ok(beta.sample(rng))
}

/// Interpolates towards `x1` with weight `max(zeta, 1 - zeta)`.
pub fn mix(x1: &[f64], x2: &[f64], zeta: f64) -> Result<Vec<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!(
            "mixUp operands have {} and {} values",
            x1.len(),
            x2.len()
        )));
    }
    let w = mix_weight(zeta);
    Ok(x1.iter().zip(x2).map(|(a, b)| w * a + (1.0 - w) * b).collect())
}

/// Asymmetric mixUp with a freshly drawn interpolation coefficient.
pub fn mixup<R: Rng + ?Sized>(x1: &[f64], x2: &[f64], gamma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!(
            "mixUp operands have {} and {} values",
            x1.len(),
            x2.len()
        )));
    }
    let zeta = sample_zeta(gamma, rng)?;
    mix(x1, x2, zeta)
}

/// Cross-entropy of a probability vector against a class id, clamped at
/// [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// `max(margin - distance, 0)`.
pub fn hinge(margin: f64, distance: f64) -> f64 {
    (margin - distance).max(0.0)
}

/// `max(margin - d_negative + d_positive, 0)`.
pub fn triplet_hinge(margin: f64, d_negative: f64, d_positive: f64) -> f64 {
    (margin - d_negative + d_positive).max(0.0)
}

/// Mean value of one batch term and how many items contributed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Term {
    pub value: f64,
    pub count: usize,
}

impl Term {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Mean cross-entropy of `softmax(logits[row])` against `label` over the
/// given `(row, label)` pairs.
pub fn supervised_loss(logits: &Tensor, targets: &[(usize, usize)], mut grad: Option<(&mut Tensor, f64)>) -> Term {
    if targets.is_empty() {
        return Term::default();
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    for &(row, label) in targets {
        let z = logits.row(row);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        // Log-softmax form: finite even where the probability underflows.
        total += (log_norm - z[label]).min(-PROB_FLOOR.ln());
        if let Some((g, w)) = grad.as_mut() {
            let gr = g.row_mut(row);
            for (c, gv) in gr.iter_mut().enumerate() {
                let p = (z[c] - log_norm).exp();
                let t = if c == label { 1.0 } else { 0.0 };
                *gv += *w * (p - t) / n;
            }
        }
    }
    Term {
        value: total / n,
        count: targets.len(),
    }
}

/// Mean squared L2 distance between soft targets and the logits of the
/// paired rows.
pub fn unsupervised_loss(
    logits: &Tensor,
    targets: &[(usize, &SoftLabel)],
    mut grad: Option<(&mut Tensor, f64)>,
) -> Term {
    if targets.is_empty() {
        return Term::default();
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    for &(row, target) in targets {
        let h = logits.row(row);
        total += squared_distance(target.as_slice(), h);
        if let Some((g, w)) = grad.as_mut() {
            for ((gv, hv), tv) in g.row_mut(row).iter_mut().zip(h).zip(target.as_slice()) {
                *gv += *w * 2.0 * (hv - tv) / n;
            }
        }
    }
    Term {
        value: total / n,
        count: targets.len(),
    }
}

/// Output space the consistency term compares against its soft targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsistencySpace {
    /// Raw responses, as the consistency objective is written.
    #[default]
    Logits,
    /// Softmax outputs, as in the MixMatch family.
    Probabilities,
}

/// Like [`unsupervised_loss`] but on `softmax(logits[row])`; the gradient
/// is pulled back through the softmax Jacobian.
pub fn unsupervised_loss_softmax(
    logits: &Tensor,
    targets: &[(usize, &SoftLabel)],
    mut grad: Option<(&mut Tensor, f64)>,
) -> Term {
    if targets.is_empty() {
        return Term::default();
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    for &(row, target) in targets {
        let p = softmax(logits.row(row));
        total += squared_distance(target.as_slice(), &p);
        if let Some((g, w)) = grad.as_mut() {
            let d: Vec<f64> = p
                .iter()
                .zip(target.as_slice())
                .map(|(pv, tv)| 2.0 * (pv - tv) / n)
                .collect();
            let dot: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum();
            for ((gv, pv), dv) in g.row_mut(row).iter_mut().zip(&p).zip(&d) {
                *gv += *w * pv * (dv - dot);
            }
        }
    }
    Term {
        value: total / n,
        count: targets.len(),
    }
}

fn add_distance_grad(g: &mut Tensor, a: usize, b: usize, emb: &Tensor, scale: f64) {
    if a == b {
        return;
    }
    let w = emb.row_len();
    for k in 0..w {
        let d = emb.row(a)[k] - emb.row(b)[k];
        g.row_mut(a)[k] += scale * 2.0 * d;
        g.row_mut(b)[k] -= scale * 2.0 * d;
    }
}

/// Mean of `max(alpha - D(anchor, negative), 0)` over `(anchor, negative)`
/// row pairs, with `D` the squared Euclidean embedding distance.
pub fn unsup_mining_loss(
    embedding: &Tensor,
    pairs: &[(usize, usize)],
    alpha: f64,
    mut grad: Option<(&mut Tensor, f64)>,
) -> Term {
    if pairs.is_empty() {
        return Term::default();
    }
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for &(a, neg) in pairs {
        let d = squared_distance(embedding.row(a), embedding.row(neg));
        let value = hinge(alpha, d);
        total += value;
        if value > 0.0 {
            if let Some((g, w)) = grad.as_mut() {
                add_distance_grad(g, a, neg, embedding, -*w / n);
            }
        }
    }
    Term {
        value: total / n,
        count: pairs.len(),
    }
}

/// Mean of `max(beta - D(a, n) + D(a, p), 0)` over `(anchor, positive,
/// negative)` row triplets.
pub fn sup_mining_loss(
    embedding: &Tensor,
    triplets: &[(usize, usize, usize)],
    beta: f64,
    mut grad: Option<(&mut Tensor, f64)>,
) -> Term {
    if triplets.is_empty() {
        return Term::default();
    }
    let n = triplets.len() as f64;
    let mut total = 0.0;
    for &(a, pos, neg) in triplets {
        let d_pos = squared_distance(embedding.row(a), embedding.row(pos));
        let d_neg = squared_distance(embedding.row(a), embedding.row(neg));
        let value = triplet_hinge(beta, d_neg, d_pos);
        total += value;
        if value > 0.0 {
            if let Some((g, w)) = grad.as_mut() {
                add_distance_grad(g, a, pos, embedding, *w / n);
                add_distance_grad(g, a, neg, embedding, -*w / n);
            }
        }
    }
    Term {
        value: total / n,
        count: triplets.len(),
    }
}

/// Per-step objective decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub unsupervised: f64,
    pub sup_mining: f64,
    pub unsup_mining: f64,
    pub lambda: f64,
    pub mu: f64,
    pub total: f64,
    /// No labeled item reached the supervised term.
    pub degenerate: bool,
    pub unsup_mining_active: bool,
}

impl LossBreakdown {
    pub fn new(supervised: f64, unsupervised: f64, sup_mining: f64, unsup_mining: f64, lambda: f64, mu: f64) -> Self {
        Self {
            supervised,
            unsupervised,
            sup_mining,
            unsup_mining,
            lambda,
            mu,
            total: supervised + lambda * unsupervised + sup_mining + mu * unsup_mining,
            degenerate: false,
            unsup_mining_active: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.supervised,
            self.unsupervised,
            self.sup_mining,
            self.unsup_mining,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}
