use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::defense::rdp::{calibrate_sigma, RdpCurve};
use crate::error::{Error, Result};
use crate::nn::{check_compatible, cross_entropy_grad, Gradients, ModelParams, Tape, TrainConfig};
use crate::rng::{self, stream};

/// DP settings as written in an experiment config. Exactly one of
/// `noise_multiplier` and `target_epsilon` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSettings {
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Overrides the recipe's learning rate; DP-SGD uses plain SGD steps.
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

fn default_clip() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    5e-4
}

impl DpSettings {
    pub fn with_epsilon(target_epsilon: f64) -> Self {
        DpSettings {
            clip_norm: default_clip(),
            noise_multiplier: None,
            target_epsilon: Some(target_epsilon),
            delta: default_delta(),
            learning_rate: None,
        }
    }
}

/// Fully resolved DP-SGD run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub target_delta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl DpConfig {
    /// Resolves `settings` for a training set of `n` rows, calibrating the
    /// noise multiplier when a target ε is given.
    pub fn resolve(settings: &DpSettings, train: &TrainConfig, n: usize) -> Result<Self> {
        train.validate()?;
        let mut cfg = DpConfig {
            clip_norm: settings.clip_norm,
            noise_multiplier: 0.0,
            target_delta: settings.delta,
            batch_size: train.batch_size,
            epochs: train.epochs,
            learning_rate: settings.learning_rate.unwrap_or(train.learning_rate),
            seed: train.seed,
        };
        cfg.noise_multiplier = match (settings.noise_multiplier, settings.target_epsilon) {
            (Some(s), None) => s,
            (None, Some(eps)) => calibrate_sigma(eps, cfg.total_steps(n).max(1), cfg.sampling_rate(n)?, cfg.target_delta)?,
            _ => return Err(Error::config("set exactly one of noise_multiplier and target_epsilon")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::config(format!("noise multiplier must be nonnegative, got {}", self.noise_multiplier)));
        }
        if !(self.target_delta > 0.0 && self.target_delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.target_delta)));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config("batch size and learning rate must be positive"));
        }
        Ok(())
    }

    pub fn sampling_rate(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::data("DP-SGD needs a non-empty training set"));
        }
        Ok((self.batch_size as f64 / n as f64).min(1.0))
    }

    /// Steps per epoch is `ceil(n / batch_size)`.
    pub fn total_steps(&self, n: usize) -> u64 {
        (self.epochs * n.div_ceil(self.batch_size.max(1))) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpStatus {
    Ok,
    /// σ = 0: no privacy; ε is reported as infinite.
    NoNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheckpoint {
    pub epoch: usize,
    pub step: u64,
    /// `None` stands for an infinite ε.
    pub epsilon: Option<f64>,
}

/// Privacy ledger of one DP-SGD run. Every step uses the same `(q, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub clip_norm: f64,
    pub delta: f64,
    pub steps: u64,
    pub checkpoints: Vec<LedgerCheckpoint>,
}

#[derive(Debug, Clone)]
pub struct DpOutcome {
    pub params: ModelParams,
    pub epsilon: f64,
    pub ledger: PrivacyLedger,
    pub status: DpStatus,
}

/// The ledger a run with `cfg` on `n` rows produces: one checkpoint per epoch.
pub fn privacy_ledger(cfg: &DpConfig, n: usize) -> Result<PrivacyLedger> {
    cfg.validate()?;
    let q = cfg.sampling_rate(n)?;
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let curve = if cfg.noise_multiplier > 0.0 { Some(RdpCurve::new(cfg.noise_multiplier, q)?) } else { None };
    let checkpoints = (1..=cfg.epochs)
        .map(|epoch| {
            let step = epoch as u64 * steps_per_epoch;
            let epsilon = curve.as_ref().map(|c| c.epsilon(step, cfg.target_delta));
            LedgerCheckpoint { epoch, step, epsilon }
        })
        .collect();
    Ok(PrivacyLedger {
        sampling_rate: q,
        noise_multiplier: cfg.noise_multiplier,
        clip_norm: cfg.clip_norm,
        delta: cfg.target_delta,
        steps: cfg.epochs as u64 * steps_per_epoch,
        checkpoints,
    })
}

/// Called once per step with the post-clipping per-example gradient norms.
pub type ClipHook<'a> = &'a mut dyn FnMut(u64, &[f64]);

/// DP-SGD with Poisson subsampling at `q = batch_size / n`, per-example
/// clipping, Gaussian noise of std `σ·C` on the summed gradient and
/// normalization by the expected batch size `q·n`.
pub fn dp_sgd_train(init: &ModelParams, data: &Dataset, cfg: &DpConfig, mut hook: Option<ClipHook<'_>>) -> Result<DpOutcome> {
    cfg.validate()?;
    check_compatible(init, data)?;
    let n = data.len();
    let q = cfg.sampling_rate(n)?;
    let expected = q * n as f64;
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let mut params = init.clone();
    let mut sampling = rng::seeded(cfg.seed, stream::DP_SAMPLING);
    let mut noise_rng = rng::seeded(cfg.seed, stream::DP_NOISE);
    let mut dropout_rng = rng::seeded(cfg.seed, stream::DROPOUT);
    let dropout = params.dropout_rates().iter().any(|&r| r > 0.0);
    let noise = Normal::new(0.0, cfg.noise_multiplier * cfg.clip_norm).map_err(|e| Error::config(e.to_string()))?;

    let mut sum = Gradients::zeros_like(&params);
    let mut one = Gradients::zeros_like(&params);
    let mut tape = Tape::default();
    let mut dlogits = Vec::new();
    let mut norms = Vec::new();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            sum.fill_zero();
            norms.clear();
            for i in 0..n {
                if sampling.random::<f64>() >= q {
                    continue;
                }
                one.fill_zero();
                tape.run(&params, data.row(i), dropout.then_some(&mut dropout_rng));
                cross_entropy_grad(tape.logits(), data.label(i), &mut dlogits);
                tape.backward(&params, &dlogits, 1.0, &mut one);
                let pre = one.norm();
                if pre > cfg.clip_norm {
                    one.scale(cfg.clip_norm / pre);
                }
                norms.push(one.norm());
                sum.add_scaled(&one, 1.0);
            }
            if cfg.noise_multiplier > 0.0 {
                for g in sum.iter_mut() {
                    *g += noise.sample(&mut noise_rng);
                }
            }
            if let Some(h) = hook.as_mut() {
                h(step, &norms);
            }
            let lr = cfg.learning_rate / expected;
            for (w, g) in params.weights.iter_mut().zip(&sum.weights).chain(params.biases.iter_mut().zip(&sum.biases)) {
                for (v, d) in w.iter_mut().zip(g) {
                    *v -= lr * d;
                }
            }
            step += 1;
        }
    }
    let ledger = privacy_ledger(cfg, n)?;
    debug_assert_eq!(ledger.steps, step);
    let epsilon = match ledger.checkpoints.last() {
        Some(LedgerCheckpoint { epsilon: Some(e), .. }) => *e,
        Some(_) => f64::INFINITY,
        None => 0.0,
    };
    Ok(DpOutcome { params, epsilon, status: if cfg.noise_multiplier > 0.0 { DpStatus::Ok } else { DpStatus::NoNoise }, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::nn::{evaluate, init_model, per_example_gradients, Activation};

    fn cfg(sigma: f64) -> DpConfig {
        DpConfig { clip_norm: 1.0, noise_multiplier: sigma, target_delta: 5e-4, batch_size: 16, epochs: 10, learning_rate: 0.5, seed: 3 }
    }

    #[test]
    fn clipping_scales_to_bound() {
        let data = generate_blobs(3, 4, 5, 0.5, 1).unwrap();
        let p = init_model(&[4, 6, 3], Activation::Tanh, 1).unwrap();
        let mut g = per_example_gradients(&p, &data, &[0]).unwrap().remove(0);
        let n = g.norm();
        g.scale(10.0 / n);
        g.clip_to_norm(1.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
        g.scale(0.3);
        let before = g.clone();
        g.clip_to_norm(1.0);
        assert_eq!(g.max_abs_diff(&before), 0.0);
    }

    #[test]
    fn clip_invariant_holds_every_step() {
        let data = generate_blobs(3, 4, 30, 0.5, 1).unwrap();
        let p = init_model(&[4, 8, 3], Activation::Relu, 1).unwrap();
        let mut c = cfg(1.0);
        c.clip_norm = 0.05;
        let mut worst: f64 = 0.0;
        let mut steps = 0;
        let mut hook = |_: u64, norms: &[f64]| {
            steps += 1;
            for &x in norms {
                worst = worst.max(x);
            }
        };
        let out = dp_sgd_train(&p, &data, &c, Some(&mut hook)).unwrap();
        assert!(worst <= 0.05 + 1e-9);
        assert_eq!(steps as u64, out.ledger.steps);
        assert_eq!(out.ledger.checkpoints.len(), 10);
    }

    #[test]
    fn zero_noise_reports_infinite_epsilon() {
        let data = generate_blobs(3, 4, 10, 0.5, 1).unwrap();
        let p = init_model(&[4, 8, 3], Activation::Relu, 1).unwrap();
        let out = dp_sgd_train(&p, &data, &cfg(0.0), None).unwrap();
        assert_eq!(out.epsilon, f64::INFINITY);
        assert_eq!(out.status, DpStatus::NoNoise);
    }

    #[test]
    fn deterministic_per_seed() {
        let data = generate_blobs(3, 4, 10, 0.5, 1).unwrap();
        let p = init_model(&[4, 8, 3], Activation::Relu, 1).unwrap();
        let a = dp_sgd_train(&p, &data, &cfg(1.0), None).unwrap();
        let b = dp_sgd_train(&p, &data, &cfg(1.0), None).unwrap();
        assert!(a.params.bit_eq(&b.params));
        assert_eq!(a.epsilon, b.epsilon);
    }

    #[test]
    fn huge_noise_learns_nothing() {
        // a single random network can score anywhere on three blobs, so
        // compare averages over many initializations
        let all = generate_blobs(3, 4, 120, 0.3, 5).unwrap();
        let (data, test) = crate::data::split_target_shadow(&all, 0.5, 1).unwrap();
        let seeds = 0..40u64;
        let mut init_acc = 0.0;
        let mut noisy_acc = 0.0;
        for s in seeds.clone() {
            let p = init_model(&[4, 16, 3], Activation::Relu, s).unwrap();
            init_acc += evaluate(&p, &test).unwrap();
            let mut c = cfg(100.0);
            c.learning_rate = 0.05;
            c.seed = s;
            noisy_acc += evaluate(&dp_sgd_train(&p, &data, &c, None).unwrap().params, &test).unwrap();
        }
        let n = seeds.count() as f64;
        let (init_acc, noisy_acc) = (init_acc / n, noisy_acc / n);
        assert!((noisy_acc - init_acc).abs() <= 0.1, "{init_acc} vs {noisy_acc}");
        let p = init_model(&[4, 16, 3], Activation::Relu, 0).unwrap();
        let clean = dp_sgd_train(&p, &data, &cfg(0.0), None).unwrap();
        let acc = evaluate(&clean.params, &test).unwrap();
        assert!(acc >= 0.85, "{acc}");
    }

    #[test]
    fn resolve_calibrates_or_rejects() {
        let train = TrainConfig { epochs: 20, batch_size: 32, ..Default::default() };
        let c = DpConfig::resolve(&DpSettings::with_epsilon(2.0), &train, 640).unwrap();
        let e =
            crate::defense::compute_epsilon(c.noise_multiplier, c.total_steps(640), c.sampling_rate(640).unwrap(), c.target_delta).unwrap();
        assert!((1.98..=2.02).contains(&e));
        let both = DpSettings { noise_multiplier: Some(1.0), ..DpSettings::with_epsilon(2.0) };
        assert!(DpConfig::resolve(&both, &train, 640).is_err());
    }
}
