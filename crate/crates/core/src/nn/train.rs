use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::grad::{check_compatible, cross_entropy_grad, Gradients, Tape};
use crate::nn::model::{ModelParams, Predictor};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Minibatch training settings. The seed drives shuffling and dropout masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 64, learning_rate: 1e-3, weight_decay: 1e-4, optimizer: OptimizerKind::Adam, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig { seed, ..self.clone() }
    }
}

/// Weight positions held at zero during training; biases are never frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMask {
    pub(crate) frozen: Vec<Vec<bool>>,
}

impl FrozenMask {
    pub fn is_frozen(&self, layer: usize, index: usize) -> bool {
        self.frozen[layer][index]
    }

    pub fn count(&self) -> usize {
        self.frozen.iter().flatten().filter(|f| **f).count()
    }
}

/// SGD or Adam with coupled L2 weight decay (`g + wd·θ`).
#[derive(Debug, Clone)]
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    t: i32,
    m: Option<Gradients>,
    v: Option<Gradients>,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub(crate) fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer { kind, lr, weight_decay, t: 0, m: None, v: None }
    }

    /// Descends along `grad`.
    pub(crate) fn step(&mut self, params: &mut ModelParams, grad: &Gradients, mask: Option<&FrozenMask>) {
        self.t += 1;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for_each_param(params, grad, |p, g, _| *p -= self.lr * (g + wd * *p));
            }
            OptimizerKind::Adam => {
                let m = self.m.get_or_insert_with(|| Gradients::zeros_like(params));
                let v = self.v.get_or_insert_with(|| Gradients::zeros_like(params));
                let bc1 = 1.0 - Self::BETA1.powi(self.t);
                let bc2 = 1.0 - Self::BETA2.powi(self.t);
                let lr = self.lr;
                let mut m_it = m.iter_mut();
                let mut v_it = v.iter_mut();
                for_each_param(params, grad, |p, g, _| {
                    let g = g + wd * *p;
                    let mi = m_it.next().expect("same layout");
                    let vi = v_it.next().expect("same layout");
                    *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * g;
                    *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
                });
            }
        }
        if let Some(mask) = mask {
            apply_mask(params, mask);
        }
    }
}

/// Visits parameters and gradient entries in the canonical order (all weights, then all biases).
fn for_each_param(params: &mut ModelParams, grad: &Gradients, mut f: impl FnMut(&mut f64, f64, ())) {
    for (pl, gl) in params.weights.iter_mut().zip(&grad.weights) {
        for (p, g) in pl.iter_mut().zip(gl) {
            f(p, *g, ());
        }
    }
    for (pl, gl) in params.biases.iter_mut().zip(&grad.biases) {
        for (p, g) in pl.iter_mut().zip(gl) {
            f(p, *g, ());
        }
    }
}

pub(crate) fn apply_mask(params: &mut ModelParams, mask: &FrozenMask) {
    for (w, m) in params.weights.iter_mut().zip(&mask.frozen) {
        for (v, frozen) in w.iter_mut().zip(m) {
            if *frozen {
                *v = 0.0;
            }
        }
    }
}

/// Minibatch cross-entropy training.
///
/// Each epoch visits the rows in an order shuffled by the seeded shuffle
/// stream; the final batch may be partial. Identical inputs give
/// bit-identical outputs.
pub fn train(params: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    train_with_mask(params, data, cfg, None)
}

/// [`train`] with some weights frozen at zero.
pub fn train_with_mask(params: &ModelParams, data: &Dataset, cfg: &TrainConfig, mask: Option<&FrozenMask>) -> Result<ModelParams> {
    cfg.validate()?;
    check_compatible(params, data)?;
    let mut params = params.clone();
    if cfg.epochs == 0 {
        return Ok(params);
    }
    if let Some(mask) = mask {
        apply_mask(&mut params, mask);
    }
    let dropout = params.dropout_rates().iter().any(|&r| r > 0.0);
    let mut shuffle_rng = rng::seeded(cfg.seed, stream::SHUFFLE);
    let mut dropout_rng = rng::seeded(cfg.seed, stream::DROPOUT);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut grads = Gradients::zeros_like(&params);
    let mut tape = Tape::default();
    let mut dlogits = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                tape.run(&params, data.row(i), dropout.then_some(&mut dropout_rng));
                cross_entropy_grad(tape.logits(), data.label(i), &mut dlogits);
                tape.backward(&params, &dlogits, scale, &mut grads);
            }
            opt.step(&mut params, &grads, mask);
        }
    }
    Ok(params)
}

/// Fraction of rows whose argmax posterior (lowest index on ties) equals the label.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        if model.posterior(data.row(i))?.argmax() == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy on a subset of rows.
pub fn evaluate_on<P: Predictor + ?Sized>(model: &P, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty index set".into()));
    }
    let mut correct = 0usize;
    for &i in indices {
        if model.posterior(data.row(i))?.argmax() == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}
