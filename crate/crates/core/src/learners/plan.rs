use crate::compute::{Network, Tensor};
use crate::error::Result;
use crate::losses::{
    sup_mining_loss, supervised_loss, unsup_mining_loss, unsupervised_loss, unsupervised_loss_softmax,
    ConsistencySpace, LossBreakdown, SoftLabel,
};

/// Everything one training step needs once its random choices are made.
///
/// All inputs go through a single forward pass; each loss term references
/// rows of that pass. Soft targets are frozen when the plan is built, so the
/// objective is a deterministic function of the parameters and can be
/// checked against finite differences.
#[derive(Debug, Clone, Default)]
pub struct StepPlan {
    pub inputs: Vec<Vec<f64>>,
    /// `(row, label)` pairs for the cross-entropy term.
    pub supervised: Vec<(usize, usize)>,
    /// `(row, target)` pairs for the consistency term.
    pub unsupervised: Vec<(usize, SoftLabel)>,
    /// `(anchor, positive, negative)` rows for supervised mining.
    pub sup_triplets: Vec<(usize, usize, usize)>,
    /// `(anchor, negative)` rows for unsupervised mining.
    pub unsup_pairs: Vec<(usize, usize)>,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub consistency: ConsistencySpace,
}

impl StepPlan {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Appends an input row and returns its index.
    pub fn push_row(&mut self, x: Vec<f64>) -> usize {
        self.inputs.push(x);
        self.inputs.len() - 1
    }

    /// Loss value without retaining anything for a backward pass.
    pub fn evaluate(&self, net: &Network) -> Result<LossBreakdown> {
        if self.is_empty() {
            return Ok(self.empty_breakdown());
        }
        let out = net.forward(&Tensor::from_rows(&self.inputs)?)?;
        Ok(self.losses(&out.logits, &out.embedding, None))
    }

    /// Loss value and its gradient with respect to the network parameters.
    pub fn gradient(&self, net: &mut Network) -> Result<(LossBreakdown, Vec<f64>)> {
        if self.is_empty() {
            return Ok((self.empty_breakdown(), vec![0.0; net.num_params()]));
        }
        let out = net.forward_train(&Tensor::from_rows(&self.inputs)?)?;
        let mut d_logits = Tensor::zeros(out.logits.shape().to_vec());
        let mut d_embedding = Tensor::zeros(out.embedding.shape().to_vec());
        let breakdown = self.losses(&out.logits, &out.embedding, Some((&mut d_logits, &mut d_embedding)));
        let mining = !self.sup_triplets.is_empty() || !self.unsup_pairs.is_empty();
        let grad = net.backward(&d_logits, mining.then_some(&d_embedding))?;
        Ok((breakdown, grad))
    }

    fn empty_breakdown(&self) -> LossBreakdown {
        let mut b = LossBreakdown::new(0.0, 0.0, 0.0, 0.0, self.lambda, self.mu);
        b.degenerate = true;
        b
    }

    fn losses(&self, logits: &Tensor, embedding: &Tensor, grads: Option<(&mut Tensor, &mut Tensor)>) -> LossBreakdown {
        let (mut gl, mut ge) = match grads {
            Some((l, e)) => (Some(l), Some(e)),
            None => (None, None),
        };
        let ls = supervised_loss(logits, &self.supervised, gl.as_deref_mut().map(|g| (g, 1.0)));
        let targets: Vec<(usize, &SoftLabel)> = self.unsupervised.iter().map(|(r, t)| (*r, t)).collect();
        let lu_grad = gl.map(|g| (g, self.lambda));
        let lu = match self.consistency {
            ConsistencySpace::Logits => unsupervised_loss(logits, &targets, lu_grad),
            ConsistencySpace::Probabilities => unsupervised_loss_softmax(logits, &targets, lu_grad),
        };
        let lsm = sup_mining_loss(
            embedding,
            &self.sup_triplets,
            self.beta,
            ge.as_deref_mut().map(|g| (g, 1.0)),
        );
        let lum = unsup_mining_loss(embedding, &self.unsup_pairs, self.alpha, ge.map(|g| (g, self.mu)));
        let mut b = LossBreakdown::new(ls.value, lu.value, lsm.value, lum.value, self.lambda, self.mu);
        b.degenerate = ls.is_empty();
        b.unsup_mining_active = !lum.is_empty();
        b
    }
}
