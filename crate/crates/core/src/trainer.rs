//! Stand-in for prompt tuning: the class rows themselves are the learnable
//! parameters, trained by cross-entropy over the temperature softmax of cosine
//! similarities with mini-batch SGD (momentum, weight decay, cosine-annealed
//! learning rate). Rows are re-normalized after every step.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring::zero_shot_probs;
use crate::store::{normalize_matrix_rows, ClassHead, EmbeddingPool};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Cosine annealing from `lr` toward zero over `epochs`, stepped per epoch.
    pub cosine: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.002,
            momentum: 0.9,
            weight_decay: 0.005,
            batch_size: 32,
            cosine: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be nonnegative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine {
            0.5 * self.lr * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead<T> {
    pub head: ClassHead<T>,
    /// Mean training loss of each epoch, measured before each batch's update.
    pub loss_trace: Vec<T>,
}

/// Mean cross-entropy of `labels` over `unit_samples` and its gradient with
/// respect to the (not necessarily unit) class rows.
pub fn loss_and_gradient<T: Scalar>(
    class_rows: ArrayView2<'_, T>,
    temperature: T,
    unit_samples: ArrayView2<'_, T>,
    labels: &[usize],
) -> (T, Array2<T>) {
    let norms: Vec<T> = class_rows.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let raw_dots = unit_samples.dot(&class_rows.t());
    let inv_t = T::one() / temperature;
    let batch = T::from_usize_lossy(labels.len());

    let mut loss = T::zero();
    // Gradient of the mean loss w.r.t. each cosine, scaled by 1/T.
    let mut dcos = Array2::<T>::zeros(raw_dots.raw_dim());
    for ((dots, mut out), &y) in raw_dots.outer_iter().zip(dcos.outer_iter_mut()).zip(labels) {
        let logits: Vec<T> = dots.iter().zip(&norms).map(|(&d, &r)| d / r * inv_t).collect();
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        loss += total.ln() + max - logits[y];
        for (i, o) in out.iter_mut().enumerate() {
            let p = exps[i] / total;
            let indicator = if i == y { T::one() } else { T::zero() };
            *o = (p - indicator) * inv_t / batch;
        }
    }

    // d cos(z, t) / d t = z / |t| - cos * t / |t|^2
    let mut grad = dcos.t().dot(&unit_samples);
    for (i, mut g) in grad.outer_iter_mut().enumerate() {
        let r = norms[i];
        let weighted_cos: T = dcos
            .column(i)
            .iter()
            .zip(raw_dots.column(i).iter())
            .map(|(&w, &d)| w * d / r)
            .sum();
        let t = class_rows.row(i);
        g.iter_mut()
            .zip(t.iter())
            .for_each(|(gv, &tv)| *gv = *gv / r - weighted_cos * tv / (r * r));
    }
    (loss / batch, grad)
}

fn labeled_rows<T: Scalar>(pool: &EmbeddingPool<T>, ids: &[usize], num_classes: usize) -> Result<(Array2<T>, Vec<usize>)> {
    let mut labels = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= pool.len() {
            return Err(Error::InvalidInput(format!("sample id {id} out of range")));
        }
        let label = pool.label(id).ok_or(Error::MissingLabel { id })?;
        if label >= num_classes {
            return Err(Error::InvalidInput(format!(
                "sample {id} has label {label} but the head has {num_classes} classes"
            )));
        }
        labels.push(label);
    }
    let rows = normalize_matrix_rows(pool.vectors().select(Axis(0), ids).view())?;
    Ok((rows, labels))
}

/// Mean cross-entropy of the head over `ids`.
pub fn full_batch_loss<T: Scalar>(head: &ClassHead<T>, pool: &EmbeddingPool<T>, ids: &[usize]) -> Result<T> {
    if ids.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let (rows, labels) = labeled_rows(pool, ids, head.num_classes())?;
    Ok(loss_and_gradient(head.class_embeddings(), head.temperature(), rows.view(), &labels).0)
}

/// Trains the class rows from `init` on the labeled samples.
pub fn train_head<T: Scalar>(
    pool: &EmbeddingPool<T>,
    labeled_ids: &[usize],
    init: &ClassHead<T>,
    cfg: &TrainConfig,
) -> Result<TrainedHead<T>> {
    cfg.validate()?;
    if labeled_ids.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    if pool.dim() != init.dim() {
        return Err(Error::DimensionMismatch {
            expected: init.dim(),
            found: pool.dim(),
        });
    }
    let (rows, labels) = labeled_rows(pool, labeled_ids, init.num_classes())?;
    let temperature = init.temperature();
    let momentum = T::lit(cfg.momentum);
    let decay = T::lit(cfg.weight_decay);

    let mut params = init.class_embeddings().to_owned();
    let mut velocity = Array2::<T>::zeros(params.raw_dim());
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = T::lit(cfg.lr_at(epoch));
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = rows.select(Axis(0), chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, mut grad) = loss_and_gradient(params.view(), temperature, batch.view(), &batch_labels);
            epoch_loss += loss * T::from_usize_lossy(chunk.len());
            if lr > T::zero() {
                grad.scaled_add(decay, &params);
                velocity.mapv_inplace(|v| v * momentum);
                velocity += &grad;
                params.scaled_add(-lr, &velocity);
                params = normalize_matrix_rows(params.view())?;
            }
        }
        loss_trace.push(epoch_loss / T::from_usize_lossy(labels.len()));
    }
    Ok(TrainedHead {
        head: ClassHead::new(params, temperature)?,
        loss_trace,
    })
}

/// Top-1 accuracy of the head's argmax prediction on `eval_ids`.
pub fn evaluate<T: Scalar>(head: &ClassHead<T>, pool: &EmbeddingPool<T>, eval_ids: &[usize]) -> Result<f64> {
    if eval_ids.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    let sub = pool.subset(eval_ids)?;
    let predictions = zero_shot_probs(&sub, head)?.predictions();
    let mut correct = 0usize;
    for (&id, predicted) in eval_ids.iter().zip(predictions) {
        let label = pool.label(id).ok_or(Error::MissingLabel { id })?;
        correct += usize::from(label == predicted);
    }
    Ok(correct as f64 / eval_ids.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Labels;
    use ndarray::array;

    fn two_blobs() -> EmbeddingPool<f64> {
        let vectors = array![[1.0, 0.2], [0.9, -0.1], [0.2, 1.0], [-0.1, 0.8]];
        EmbeddingPool::new(vectors, Some(Labels::new(vec![0, 0, 1, 1], 2).unwrap())).unwrap()
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.lr, c.momentum, c.weight_decay, c.batch_size), (200, 0.002, 0.9, 0.005, 32));
        assert!(c.cosine);
        assert_eq!(c.lr_at(0), 0.002);
        assert!((c.lr_at(100) - 0.001).abs() < 1e-15);
        assert!(c.lr_at(199) > 0.0);
    }

    #[test]
    fn zero_lr_keeps_init() {
        let pool = two_blobs();
        let init = ClassHead::new(array![[2.0, 1.0], [0.0, 3.0]], 0.01).unwrap();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, ..Default::default() };
        let out = train_head(&pool, &[0, 1, 2, 3], &init, &cfg).unwrap();
        assert_eq!(out.head, init);
    }

    #[test]
    fn uniform_head_starts_at_ln_k() {
        let pool = two_blobs();
        let init = ClassHead::new(array![[1.0, 1.0], [1.0, 1.0]], 0.01).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 64, ..Default::default() };
        let out = train_head(&pool, &[0, 1, 2, 3], &init, &cfg).unwrap();
        assert!((out.loss_trace[0] - 2.0f64.ln()).abs() < 1e-12);
        assert!(out.loss_trace[1] < out.loss_trace[0]);
        for row in out.head.class_embeddings().outer_iter() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn precondition_errors() {
        let pool = two_blobs();
        let init = ClassHead::new(array![[1.0, 0.0], [0.0, 1.0]], 0.01).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train_head(&pool, &[], &init, &cfg), Err(Error::EmptyLabeledSet)));
        let unlabeled = pool.clone().with_labels(None).unwrap();
        assert!(matches!(train_head(&unlabeled, &[0], &init, &cfg), Err(Error::MissingLabel { id: 0 })));
        assert!(evaluate(&init, &pool, &[]).is_err());
        assert!(matches!(evaluate(&init, &unlabeled, &[1]), Err(Error::MissingLabel { id: 1 })));
        assert!(train_head(&pool, &[0], &init, &TrainConfig { batch_size: 0, ..cfg }).is_err());
    }

    #[test]
    fn evaluate_counts_hits() {
        let pool = two_blobs();
        let right = ClassHead::new(array![[1.0, 0.0], [0.0, 1.0]], 0.01).unwrap();
        let wrong = ClassHead::new(array![[0.0, 1.0], [1.0, 0.0]], 0.01).unwrap();
        assert_eq!(evaluate(&right, &pool, &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(evaluate(&wrong, &pool, &[0, 1, 2, 3]).unwrap(), 0.0);
        assert_eq!(evaluate(&wrong, &pool, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let pool = two_blobs();
        let init = ClassHead::new(array![[1.0, 1.0], [1.0, 0.9]], 0.01).unwrap();
        let cfg = TrainConfig { epochs: 20, batch_size: 3, seed: 4, ..Default::default() };
        let a = train_head(&pool, &[0, 1, 2, 3], &init, &cfg).unwrap();
        let b = train_head(&pool, &[0, 1, 2, 3], &init, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn renormalizing_head_keeps_predictions() {
        let pool = two_blobs();
        let head = ClassHead::new(array![[3.0, 0.5], [0.2, 7.0]], 0.01).unwrap();
        let a = zero_shot_probs(&pool, &head).unwrap().predictions();
        let b = zero_shot_probs(&pool, &head.normalized()).unwrap().predictions();
        assert_eq!(a, b);
    }
}
