use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_membership_split, Dataset, Membership};
use crate::error::{Error, Result};
use crate::nn::{Posterior, Predictor};
use crate::rng::{self, derive_seed, stream};
use crate::unlearn::PipelineSpec;

/// Smallest standard deviation a fitted Gaussian may have.
pub const STD_FLOOR: f64 = 1e-6;

/// `ln(p / (1 - p))` of the true-label probability, clamped to `[1e-9, 1 - 1e-9]`.
pub fn phi(p: &Posterior, label: usize) -> f64 {
    let py = p.probs()[label].clamp(1e-9, 1.0 - 1e-9);
    (py / (1.0 - py)).ln()
}

/// Likelihood-ratio observation `φ(f⁻) − φ(f)`.
pub fn ulira_observation(p_orig: &Posterior, p_unl: &Posterior, label: usize) -> f64 {
    phi(p_unl, label) - phi(p_orig, label)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    /// Sample mean and Bessel-corrected std (floored). Needs two observations.
    pub fn fit(obs: &[f64]) -> Result<Self> {
        if obs.len() < 2 {
            return Err(Error::data("a Gaussian fit needs at least two observations"));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / (n - 1.0);
        Ok(Gaussian { mean, std: var.sqrt().max(STD_FLOOR) })
    }

    /// Log density up to the shared `-ln √(2π)` constant.
    pub fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -self.std.ln() - 0.5 * z * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UliraFit {
    pub forget: Gaussian,
    pub unseen: Gaussian,
    pub retain: Gaussian,
    pub num_shadow: usize,
}

/// Observations `[unseen, forget, retain]` of one shadow trial.
pub type TrialObservations = [f64; 3];

/// Runs `trials` shadow trials in parallel, trial `t` receiving seed
/// `derive_seed(seed, "ulira-trial", t)`, and fits one Gaussian per class.
pub fn ulira_fit<F>(runner: F, trials: usize, seed: u64) -> Result<UliraFit>
where
    F: Fn(u64) -> Result<TrialObservations> + Sync,
{
    if trials < 2 {
        return Err(Error::config("ULiRA needs at least two shadow trials"));
    }
    let obs: Vec<TrialObservations> =
        (0..trials).into_par_iter().map(|t| runner(derive_seed(seed, "ulira-trial", t as u64))).collect::<Result<_>>()?;
    let column = |m: Membership| obs.iter().map(|o| o[m.label()]).collect::<Vec<_>>();
    Ok(UliraFit {
        unseen: Gaussian::fit(&column(Membership::Unseen))?,
        forget: Gaussian::fit(&column(Membership::Forget))?,
        retain: Gaussian::fit(&column(Membership::Retain))?,
        num_shadow: trials,
    })
}

/// One shadow trial: train on a fresh split, unlearn a single random training
/// example, and observe it together with one retain and one unseen example.
pub fn ulira_shadow_trial(shadow: &Dataset, pipeline: &PipelineSpec, seed: u64) -> Result<TrialObservations> {
    // forget fraction small enough that the ceiling rule yields one example
    let split = make_membership_split(shadow.len(), pipeline.train_fraction, 1e-12, derive_seed(seed, "split", 0))?;
    let run = pipeline.run_on_split(shadow, split, seed)?;
    let mut rng = rng::seeded(derive_seed(seed, "ulira-pick", 0), stream::SHUFFLE);
    let unseen = run.split.unseen[sample(&mut rng, run.split.unseen.len(), 1).index(0)];
    let retain = run.split.retain[sample(&mut rng, run.split.retain.len(), 1).index(0)];
    let forget = run.split.forget[0];
    let mut out = [0.0; 3];
    for (i, m) in [(unseen, Membership::Unseen), (forget, Membership::Forget), (retain, Membership::Retain)] {
        let x = shadow.row(i);
        out[m.label()] = ulira_observation(&run.original.posterior(x)?, &run.unlearned.posterior(x)?, shadow.label(i));
    }
    Ok(out)
}

/// Maximum-density class; ties go to forget, then unseen.
pub fn ulira_classify(fit: &UliraFit, o: f64) -> Membership {
    let (lf, lu, lr) = (fit.forget.log_density(o), fit.unseen.log_density(o), fit.retain.log_density(o));
    if lf >= lu && lf >= lr {
        Membership::Forget
    } else if lu >= lr {
        Membership::Unseen
    } else {
        Membership::Retain
    }
}
