use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{ulira_classify, ulira_fit, ulira_observation, ulira_shadow_trial, UliraFit};
use crate::data::{balance_ratio_sample, Membership};
use crate::error::{Result, StageExt};
use crate::harness::{prepare_data, ExperimentConfig};
use crate::metrics::{confusion, micro_f1, per_class_f1, ConfusionMatrix};
use crate::nn::Predictor;
use crate::rng::derive_seed;

/// Example-level likelihood-ratio attack: fitted Gaussians and their score
/// on the target evaluation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UliraOutcome {
    pub fit: UliraFit,
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub micro_f1: f64,
    pub per_class_f1: [f64; 3],
}

/// Fits TC-ULiRA from `trials` single-example shadow trials and classifies
/// the target evaluation sample of `seed`.
pub fn run_ulira(cfg: &ExperimentConfig, trials: usize, seed: u64) -> Result<UliraOutcome> {
    cfg.validate()?;
    let (target, shadow) = prepare_data(cfg, seed).stage("prepare_data")?;
    let shadow_pipeline = cfg.shadow_pipeline()?;
    let fit = ulira_fit(|s| ulira_shadow_trial(&shadow, &shadow_pipeline, s), trials, derive_seed(seed, "ulira", 0)).stage("ulira_fit")?;
    let run = cfg.target_pipeline()?.run(&target, derive_seed(seed, "target", 0))?;
    let eval = balance_ratio_sample(&run.split, cfg.attack.class_ratio, derive_seed(seed, "eval", 0))?;
    let labeled = eval.labeled();
    let preds: Vec<usize> = labeled
        .par_iter()
        .map(|&(i, _)| {
            let x = target.row(i);
            let o = ulira_observation(&run.original.posterior(x)?, &run.unlearned.posterior(x)?, target.label(i));
            Ok(ulira_classify(&fit, o).label())
        })
        .collect::<Result<_>>()?;
    let truth: Vec<usize> = labeled.iter().map(|(_, m): &(usize, Membership)| m.label()).collect();
    let cm = confusion(&preds, &truth)?;
    Ok(UliraOutcome { fit, seed, micro_f1: micro_f1(&cm)?, per_class_f1: per_class_f1(&cm)?, confusion: cm })
}
