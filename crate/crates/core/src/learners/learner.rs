use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LearnerConfig, Method, Mining};
use super::plan::StepPlan;
use crate::compute::tensor::argmax;
use crate::compute::{softmax, Network, Optimizer, Tensor};
use crate::data::{Augmentation, Batch};
use crate::error::{Error, Result};
use crate::losses::{mix, sample_zeta, sharpen, LossBreakdown, SoftLabel};
use crate::memory::{BufferItem, KnnClassifier, ReservoirBuffer};

/// One continual learner: network, optimizer, replay buffer and the
/// strategy that ties them together.
#[derive(Debug, Clone)]
pub struct Learner {
    cfg: LearnerConfig,
    net: Network,
    optimizer: Optimizer,
    buffer: ReservoirBuffer,
    augmentation: Augmentation,
    rng: ChaCha8Rng,
    task_id: usize,
    task_classes: Vec<usize>,
    seen: Vec<bool>,
    knn: Option<KnnClassifier>,
}

/// Augmented labeled items (stream first, then replay) and the augmented
/// views of the unlabeled items, `augment_count` consecutive views each.
struct Views {
    labeled: Vec<Vec<f64>>,
    labels: Vec<usize>,
    stream_labeled: usize,
    unlabeled: Vec<Vec<f64>>,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, net: Network, augmentation: Augmentation, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
        let buffer = ReservoirBuffer::new(if cfg.method.uses_buffer() { cfg.buffer_size } else { 0 });
        let seen = vec![false; net.num_classes()];
        Ok(Self {
            cfg,
            net,
            optimizer,
            buffer,
            augmentation,
            rng: ChaCha8Rng::seed_from_u64(seed),
            task_id: 0,
            task_classes: Vec::new(),
            seen,
            knn: None,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn buffer(&self) -> &ReservoirBuffer {
        &self.buffer
    }

    pub fn current_task(&self) -> usize {
        self.task_id
    }

    /// Announces a task boundary and the classes of the incoming task.
    pub fn begin_task(&mut self, task_id: usize, classes: &[usize]) -> Result<()> {
        if let Some(&c) = classes.iter().find(|&&c| c >= self.seen.len()) {
            return Err(Error::Config(format!("class {c} exceeds the network's output size")));
        }
        self.task_id = task_id;
        self.task_classes = classes.to_vec();
        for &c in classes {
            self.seen[c] = true;
        }
        self.knn = None;
        Ok(())
    }

    /// Closes the current task; CCIC fits its kNN classifier on the buffer here.
    pub fn end_task(&mut self) -> Result<()> {
        self.knn = None;
        if self.cfg.method == Method::Ccic && self.cfg.ablation.knn && !self.buffer.is_empty() {
            self.knn = Some(KnnClassifier::fit(&self.buffer, &self.net, self.cfg.knn_k)?);
        }
        Ok(())
    }

    pub fn step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        match self.cfg.method {
            Method::Finetune | Method::Joint => self.step_sgd_finetune(batch),
            Method::Er => self.step_er(batch),
            Method::PseudoEr => self.step_pseudo_er(batch),
            Method::Cic => self.step_cic(batch),
            Method::Ccic => self.step_ccic(batch),
        }
    }

    /// Cross-entropy on the labeled stream items only.
    pub fn step_sgd_finetune(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let mut plan = self.base_plan();
        for (x, &y) in batch.labeled.iter().zip(&batch.labels) {
            let row = plan.push_row(self.augmentation.apply(x, &mut self.rng));
            plan.supervised.push((row, y));
        }
        self.apply(&plan)
    }

    /// Cross-entropy on labeled stream items plus a replay minibatch; the
    /// labeled stream items are then offered to the buffer.
    pub fn step_er(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let plan = self.plan_er(batch);
        let out = self.apply(&plan)?;
        self.store_labeled(batch);
        Ok(out)
    }

    pub fn plan_er(&mut self, batch: &Batch) -> StepPlan {
        let mut plan = self.base_plan();
        let replay = self.sample_replay();
        for (x, &y) in batch.labeled.iter().zip(&batch.labels) {
            let row = plan.push_row(self.augmentation.apply(x, &mut self.rng));
            plan.supervised.push((row, y));
        }
        for item in &replay {
            let row = plan.push_row(self.augmentation.apply(&item.features, &mut self.rng));
            plan.supervised.push((row, item.label));
        }
        plan
    }

    /// ER where confident unlabeled items join the batch with a pseudo-label
    /// restricted to the current task's classes.
    pub fn step_pseudo_er(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let accepted = self.pseudo_label(&batch.unlabeled)?;
        let mut plan = self.plan_er(batch);
        for &(i, y) in &accepted {
            let row = plan.push_row(self.augmentation.apply(&batch.unlabeled[i], &mut self.rng));
            plan.supervised.push((row, y));
        }
        let out = self.apply(&plan)?;
        self.store_labeled(batch);
        for (i, y) in accepted {
            let item = BufferItem {
                features: batch.unlabeled[i].clone(),
                label: y,
                task_id: self.task_id,
            };
            self.buffer.try_insert(item, &mut self.rng);
        }
        Ok(out)
    }

    /// `(index, class)` of every unlabeled item whose two highest logits
    /// over the current task's classes differ by more than `eta`.
    pub fn pseudo_label(&self, unlabeled: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
        if self.task_classes.len() < 2 {
            return Err(Error::Config(
                "pseudo-labeling needs at least two classes per task".into(),
            ));
        }
        if unlabeled.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.net.forward(&Tensor::from_rows(unlabeled)?)?.logits;
        Ok(logits
            .iter_rows()
            .enumerate()
            .filter_map(|(i, h)| {
                let (best, gap) = top_two_gap(h, &self.task_classes);
                (gap > self.cfg.eta).then_some((i, best))
            })
            .collect())
    }

    /// Continual interpolation consistency step.
    pub fn step_cic(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let plan = self.plan_cic(batch)?;
        let out = self.apply(&plan)?;
        self.store_labeled(batch);
        Ok(out)
    }

    /// CIC plus supervised and unsupervised mining in embedding space.
    pub fn step_ccic(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let plan = self.plan_ccic(batch)?;
        let out = self.apply(&plan)?;
        self.store_labeled(batch);
        Ok(out)
    }

    pub fn plan_cic(&mut self, batch: &Batch) -> Result<StepPlan> {
        let views = self.views(batch);
        self.consistency_plan(&views)
    }

    pub fn plan_ccic(&mut self, batch: &Batch) -> Result<StepPlan> {
        let views = self.views(batch);
        let mut plan = self.consistency_plan(&views)?;
        if self.cfg.ablation.sup_mining {
            self.add_sup_mining(&mut plan, &views);
        }
        if self.cfg.ablation.unsup_mining {
            self.add_unsup_mining(&mut plan, &views);
        }
        Ok(plan)
    }

    /// Class-IL prediction: kNN over buffer embeddings for CCIC, otherwise
    /// the arg-max over every class seen so far.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let out = self.net.forward(x)?;
        if self.cfg.method == Method::Ccic && self.cfg.ablation.knn {
            match &self.knn {
                Some(knn) => return Ok(knn.predict(&out.embedding)),
                None => warn!("kNN unavailable (empty buffer or task not closed); using logits"),
            }
        }
        let any_seen = self.seen.iter().any(|&s| s);
        Ok(out
            .logits
            .iter_rows()
            .map(|h| {
                let masked: Vec<f64> = h
                    .iter()
                    .zip(&self.seen)
                    .map(|(&v, &s)| if s || !any_seen { v } else { f64::NEG_INFINITY })
                    .collect();
                argmax(&masked)
            })
            .collect())
    }

    fn base_plan(&self) -> StepPlan {
        StepPlan {
            lambda: self.cfg.lambda,
            mu: self.cfg.mu,
            alpha: self.cfg.alpha,
            beta: self.cfg.beta,
            consistency: self.cfg.consistency,
            ..StepPlan::default()
        }
    }

    fn apply(&mut self, plan: &StepPlan) -> Result<LossBreakdown> {
        if plan.is_empty() {
            return plan.evaluate(&self.net);
        }
        let (breakdown, grad) = plan.gradient(&mut self.net)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} loss diverged during task {}: {breakdown:?}",
                self.cfg.method, self.task_id
            )));
        }
        self.optimizer.step(self.net.params_mut(), &grad)?;
        Ok(breakdown)
    }

    fn sample_replay(&mut self) -> Vec<BufferItem> {
        self.buffer
            .sample_batch(self.cfg.replay_batch, &mut self.rng)
            .into_iter()
            .cloned()
            .collect()
    }

    fn store_labeled(&mut self, batch: &Batch) {
        if !self.cfg.method.uses_buffer() {
            return;
        }
        for (x, &y) in batch.labeled.iter().zip(&batch.labels) {
            let item = BufferItem {
                features: x.clone(),
                label: y,
                task_id: self.task_id,
            };
            self.buffer.try_insert(item, &mut self.rng);
        }
    }

    fn views(&mut self, batch: &Batch) -> Views {
        let replay = self.sample_replay();
        let aug = self.augmentation;
        let mut labeled = Vec::with_capacity(batch.labeled.len() + replay.len());
        let mut labels = Vec::with_capacity(labeled.capacity());
        for (x, &y) in batch.labeled.iter().zip(&batch.labels) {
            labeled.push(aug.apply(x, &mut self.rng));
            labels.push(y);
        }
        for item in &replay {
            labeled.push(aug.apply(&item.features, &mut self.rng));
            labels.push(item.label);
        }
        let k = self.cfg.augment_count;
        let mut unlabeled = Vec::with_capacity(batch.unlabeled.len() * k);
        for x in &batch.unlabeled {
            for _ in 0..k {
                unlabeled.push(aug.apply(x, &mut self.rng));
            }
        }
        Views {
            labeled,
            labels,
            stream_labeled: batch.labeled.len(),
            unlabeled,
        }
    }

    /// Sharpened soft targets from the mean logits of each item's views,
    /// repeated once per view.
    fn soft_targets(&self, unlabeled_views: &[Vec<f64>]) -> Result<Vec<SoftLabel>> {
        let k = self.cfg.augment_count;
        let logits = self.net.forward(&Tensor::from_rows(unlabeled_views)?)?.logits;
        if !logits.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} network diverged during task {}: non-finite logits for soft targets",
                self.cfg.method, self.task_id
            )));
        }
        let classes = logits.row_len();
        let mut targets = Vec::with_capacity(unlabeled_views.len());
        for item in 0..unlabeled_views.len() / k {
            let mut mean = vec![0.0; classes];
            for v in 0..k {
                for (m, h) in mean.iter_mut().zip(logits.row(item * k + v)) {
                    *m += h / k as f64;
                }
            }
            let probs = softmax(&mean);
            let target = if self.cfg.ablation.sharpen {
                sharpen(&probs, self.cfg.tau)?
            } else {
                SoftLabel::from_probabilities(probs)?
            };
            targets.extend(std::iter::repeat_n(target, k));
        }
        Ok(targets)
    }

    fn consistency_plan(&mut self, views: &Views) -> Result<StepPlan> {
        let mut plan = self.base_plan();
        let use_unlabeled = self.cfg.ablation.unsup_loss && !views.unlabeled.is_empty();
        let targets = if use_unlabeled {
            self.soft_targets(&views.unlabeled)?
        } else {
            Vec::new()
        };
        let n_s = views.labeled.len();
        let n_u = if use_unlabeled { views.unlabeled.len() } else { 0 };
        let pool = |i: usize| {
            if i < n_s {
                &views.labeled[i]
            } else {
                &views.unlabeled[i - n_s]
            }
        };
        let mut partners: Vec<usize> = (0..n_s + n_u).collect();
        partners.shuffle(&mut self.rng);

        for (i, &partner) in partners.iter().enumerate() {
            let x = pool(i);
            let row = if self.cfg.ablation.mixup {
                let zeta = sample_zeta(self.cfg.gamma, &mut self.rng)?;
                mix(x, pool(partner), zeta)?
            } else {
                x.clone()
            };
            let r = plan.push_row(row);
            if i < n_s {
                plan.supervised.push((r, views.labels[i]));
            } else {
                plan.unsupervised.push((r, targets[i - n_s].clone()));
            }
        }
        Ok(plan)
    }

    fn add_sup_mining(&mut self, plan: &mut StepPlan, views: &Views) {
        let n = views.labeled.len();
        if n < 3 {
            return;
        }
        let rows: Vec<usize> = views.labeled.iter().map(|x| plan.push_row(x.clone())).collect();
        for a in 0..n {
            let y = views.labels[a];
            let pos: Vec<usize> = (0..n).filter(|&j| j != a && views.labels[j] == y).collect();
            let neg: Vec<usize> = (0..n).filter(|&j| views.labels[j] != y).collect();
            if let (Some(&p), Some(&q)) = (pos.choose(&mut self.rng), neg.choose(&mut self.rng)) {
                plan.sup_triplets.push((rows[a], rows[p], rows[q]));
            }
        }
    }

    fn add_unsup_mining(&mut self, plan: &mut StepPlan, views: &Views) {
        let k = self.cfg.augment_count;
        let n_items = views.unlabeled.len() / k;
        if n_items == 0 {
            return;
        }
        let past: Vec<usize> = match self.cfg.mining {
            Mining::AcrossTask => (0..self.buffer.len())
                .filter(|&i| self.buffer.items()[i].task_id < self.task_id)
                .collect(),
            Mining::TaskAgnostic => (0..self.buffer.len()).collect(),
            Mining::WithinTask => Vec::new(),
        };
        let use_current = matches!(self.cfg.mining, Mining::WithinTask | Mining::TaskAgnostic);
        // Current-batch candidates: labeled stream views, then one view per unlabeled item.
        let current = if use_current { views.stream_labeled + n_items } else { 0 };
        let current_view = |c: usize| {
            if c < views.stream_labeled {
                &views.labeled[c]
            } else {
                &views.unlabeled[(c - views.stream_labeled) * k]
            }
        };

        for item in 0..n_items {
            let own = views.stream_labeled + item;
            let candidates = past.len() + current - usize::from(use_current);
            if candidates == 0 {
                continue;
            }
            let mut pick = self.rng.random_range(0..candidates);
            let negative = if pick < past.len() {
                let features = &self.buffer.items()[past[pick]].features;
                self.augmentation.apply(features, &mut self.rng)
            } else {
                pick -= past.len();
                if pick >= own {
                    pick += 1;
                }
                current_view(pick).clone()
            };
            let anchor = plan.push_row(views.unlabeled[item * k].clone());
            let neg = plan.push_row(negative);
            plan.unsup_pairs.push((anchor, neg));
        }
    }
}

/// Best class among `classes` and its logit margin over the runner-up.
fn top_two_gap(logits: &[f64], classes: &[usize]) -> (usize, f64) {
    let mut best = (classes[0], f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for &c in classes {
        let v = logits[c];
        if v > best.1 {
            second = best.1;
            best = (c, v);
        } else if v > second {
            second = v;
        }
    }
    (best.0, best.1 - second)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_two_gap_examples() {
        assert_eq!(top_two_gap(&[9.0, 4.0, 1.0, 9.5], &[1, 2]), (1, 3.0));
        assert_eq!(top_two_gap(&[2.0, 2.0], &[0, 1]).1, 0.0);
        assert_eq!(top_two_gap(&[1.0, 3.0, 2.0], &[0, 1, 2]), (1, 1.0));
    }
}
