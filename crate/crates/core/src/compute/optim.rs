use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// First-order optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    /// Running `beta1^t` and `beta2^t`. `powi` lowers differently across
    /// optimisation levels, which would make runs build-dependent.
    beta1_t: f64,
    beta2_t: f64,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            beta1_t: 1.0,
            beta2_t: 1.0,
            steps: 0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place. A non-finite gradient aborts without
    /// touching the parameters.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries for {} parameters",
                grad.len(),
                params.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at optimizer step {}",
                grad[i], self.steps
            )));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    self.first_moment = vec![0.0; params.len()];
                    self.second_moment = vec![0.0; params.len()];
                }
                self.beta1_t *= self.beta1;
                self.beta2_t *= self.beta2;
                let c1 = 1.0 - self.beta1_t;
                let c2 = 1.0 - self.beta2_t;
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut theta = [1.0];
        Optimizer::sgd(0.1).step(&mut theta, &[2.0]).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut opt = Optimizer::adam(0.1);
        let mut theta = [1.0, -2.0, 3.0];
        for _ in 0..5 {
            opt.step(&mut theta, &[0.0; 3]).unwrap();
        }
        assert_eq!(theta, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, -7.0, 1e3] {
            let mut theta = [0.0];
            Optimizer::adam(0.1).step(&mut theta, &[g]).unwrap();
            let expected = -0.1 * g.signum();
            assert!((theta[0] - expected).abs() < 1e-5, "g={g} theta={}", theta[0]);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut theta = [1.0, 1.0];
        let err = Optimizer::sgd(0.1).step(&mut theta, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(theta, [1.0, 1.0]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut theta = [1.0];
        assert!(Optimizer::adam(0.1).step(&mut theta, &[1.0, 2.0]).is_err());
    }
}
