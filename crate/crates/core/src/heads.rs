//! Task-specific linear heads on frozen features.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::math;
use crate::tensor::{softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.01,
            batch_size: 32,
        }
    }
}

impl HeadTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(
                "head training needs batch_size >= 1 and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Mean training loss before training and after every epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Fully connected layer `W f + b`, owned by one task.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    task_id: usize,
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(task_id: usize, classes: usize, dim: usize) -> Self {
        Self {
            task_id,
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(task_id: usize, classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * dim || bias.len() != classes {
            return Err(Error::Shape {
                context: "linear head",
                expected: vec![classes, dim],
                found: vec![bias.len(), weights.len()],
            });
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("linear head"));
        }
        Ok(Self {
            task_id,
            classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim {
            return Err(Error::Shape {
                context: "head input",
                expected: vec![self.dim],
                found: vec![features.len()],
            });
        }
        Ok(self
            .weights
            .chunks(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + b)
            .collect())
    }

    /// Argmax of the logits; ties go to the lowest class index.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let logits = self.forward(features)?;
        Ok(argmax(&logits))
    }

    /// Softmax cross-entropy of one sample and its gradient
    /// `(dL/dW, dL/db) = ((p - onehot) f^T, p - onehot)`.
    pub fn loss_and_gradient(&self, features: &[f64], label: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_label(label)?;
        let logits = self.forward(features)?;
        let loss = cross_entropy(&logits, label);
        let mut grad_b = softmax(&logits, 1.0);
        grad_b[label] -= 1.0;
        let mut grad_w = vec![0.0; self.weights.len()];
        for (row, g) in grad_w.chunks_mut(self.dim).zip(&grad_b) {
            for (r, f) in row.iter_mut().zip(features) {
                *r = g * f;
            }
        }
        Ok((loss, grad_w, grad_b))
    }

    pub fn mean_loss(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            self.check_label(label)?;
            total += cross_entropy(&self.forward(features.row(i))?, label);
        }
        Ok(total / labels.len().max(1) as f64)
    }

    /// Mini-batch gradient descent on softmax cross-entropy.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        features: &Tensor,
        labels: &[usize],
        config: &HeadTrainConfig,
        rng: &mut R,
    ) -> Result<TrainingLog> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::EmptyDataset("head training set"));
        }
        if features.shape() != [labels.len(), self.dim] {
            return Err(Error::Shape {
                context: "head training features",
                expected: vec![labels.len(), self.dim],
                found: features.shape().to_vec(),
            });
        }
        for &label in labels {
            self.check_label(label)?;
        }
        let mut log = TrainingLog {
            initial_loss: self.mean_loss(features, labels)?,
            epoch_losses: Vec::with_capacity(config.epochs),
        };
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; self.classes];
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for batch in order.chunks(config.batch_size) {
                grad_w.iter_mut().for_each(|g| *g = 0.0);
                grad_b.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    let f = features.row(i);
                    let mut p = softmax(&self.forward(f)?, 1.0);
                    p[labels[i]] -= 1.0;
                    for ((row, g), pb) in grad_w.chunks_mut(self.dim).zip(&p).zip(grad_b.iter_mut()) {
                        for (r, x) in row.iter_mut().zip(f) {
                            *r += g * x;
                        }
                        *pb += g;
                    }
                }
                let step = config.lr / batch.len() as f64;
                for (w, g) in self.weights.iter_mut().zip(&grad_w) {
                    *w -= step * g;
                }
                for (b, g) in self.bias.iter_mut().zip(&grad_b) {
                    *b -= step * g;
                }
            }
            log.epoch_losses.push(self.mean_loss(features, labels)?);
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("head parameters after training"));
        }
        Ok(log)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(logits.iter().map(|l| math::exp(l - max)).sum());
    lse - logits[label]
}

/// Append-only map from task id to its head.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadStore {
    heads: BTreeMap<usize, LinearHead>,
}

impl HeadStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, head: LinearHead) -> Result<()> {
        let id = head.task_id();
        if self.heads.contains_key(&id) {
            return Err(Error::DuplicateTask(id));
        }
        self.heads.insert(id, head);
        Ok(())
    }

    pub fn select(&self, task_id: usize) -> Result<&LinearHead> {
        self.heads.get(&task_id).ok_or(Error::UnknownTask(task_id))
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinearHead> {
        self.heads.values()
    }

    /// Labels for a batch of inputs using the head of `task_id`.
    pub fn predict(&self, extractor: &FeatureExtractor, x: &Tensor, task_id: usize) -> Result<Vec<usize>> {
        let head = self.select(task_id)?;
        let features = extractor.features(x)?;
        (0..features.shape()[0])
            .map(|i| head.predict(features.row(i)))
            .collect()
    }
}
