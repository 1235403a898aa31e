//! Unlearning algorithms: exact retraining, SISA, gradient ascent, sparsity
//! (prune then fine-tune) and SCRUB-style teacher/student unlearning.

mod ascent;
mod recipe;
mod scrub;
mod sisa;
mod sparsity;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MembershipSplit};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

pub use ascent::gradient_ascent_unlearn;
pub use recipe::{Deployed, PipelineRun, PipelineSpec, Recipe};
pub use scrub::{kl_divergence_softened, scrub_unlearn};
pub use sisa::{assign_shards, shard_seed, sisa_predict, sisa_train, sisa_train_with_assignment, sisa_unlearn, SisaModel};
pub use sparsity::{magnitude_prune, sparsity_unlearn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlearnMethod {
    Retrain,
    Sisa,
    Ga,
    Sparsity,
    Scrub,
}

impl UnlearnMethod {
    pub fn name(self) -> &'static str {
        match self {
            UnlearnMethod::Retrain => "retrain",
            UnlearnMethod::Sisa => "sisa",
            UnlearnMethod::Ga => "ga",
            UnlearnMethod::Sparsity => "sparsity",
            UnlearnMethod::Scrub => "scrub",
        }
    }
}

/// Hyperparameters of every unlearning method; only the selected method's fields matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    pub ga_steps: usize,
    pub ga_lr: f64,
    pub prune_ratio: f64,
    pub finetune_epochs: usize,
    pub scrub_max_epochs: usize,
    pub scrub_min_epochs: usize,
    pub scrub_temperature: f64,
    pub scrub_lr: f64,
    pub num_shards: usize,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: UnlearnMethod::Retrain,
            ga_steps: 15,
            ga_lr: 0.035,
            prune_ratio: 0.85,
            finetune_epochs: 20,
            scrub_max_epochs: 4,
            scrub_min_epochs: 5,
            scrub_temperature: 4.0,
            scrub_lr: 0.03,
            num_shards: 4,
        }
    }
}

impl UnlearnConfig {
    pub fn with_method(method: UnlearnMethod) -> Self {
        UnlearnConfig { method, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            UnlearnMethod::Retrain => {}
            UnlearnMethod::Sisa if self.num_shards == 0 => return Err(Error::config("num_shards must be positive")),
            UnlearnMethod::Sisa => {}
            UnlearnMethod::Ga if !(self.ga_lr > 0.0) => return Err(Error::config("ga_lr must be positive")),
            UnlearnMethod::Ga => {}
            UnlearnMethod::Sparsity if !(0.0..=1.0).contains(&self.prune_ratio) => {
                return Err(Error::config(format!("prune_ratio must lie in [0, 1], got {}", self.prune_ratio)))
            }
            UnlearnMethod::Sparsity => {}
            UnlearnMethod::Scrub => {
                if !(self.scrub_temperature > 0.0) || !(self.scrub_lr > 0.0) {
                    return Err(Error::config("scrub temperature and learning rate must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Exact unlearning: a fresh model trained on the retain rows only.
pub fn retrain(data: &Dataset, split: &MembershipSplit, recipe: &Recipe) -> Result<ModelParams> {
    if split.retain.is_empty() {
        return Err(Error::data("retain set is empty; nothing to retrain on"));
    }
    recipe.fit(&data.subset(&split.retain)?)
}

/// Trains the original model `f` on the training rows (a SISA ensemble when
/// the method is SISA).
pub fn fit_original(recipe: &Recipe, cfg: &UnlearnConfig, data: &Dataset, split: &MembershipSplit) -> Result<Deployed> {
    cfg.validate()?;
    match cfg.method {
        UnlearnMethod::Sisa => Ok(Deployed::Sisa(sisa_train(data, &split.train, cfg.num_shards, recipe)?)),
        _ => Ok(Deployed::Single(recipe.fit(&data.subset(&split.train)?)?)),
    }
}

/// Applies `cfg.method` to remove `split.forget` from `original`.
pub fn apply_unlearning(
    original: &Deployed,
    recipe: &Recipe,
    cfg: &UnlearnConfig,
    data: &Dataset,
    split: &MembershipSplit,
) -> Result<Deployed> {
    cfg.validate()?;
    let single =
        || original.as_single().ok_or_else(|| Error::config(format!("{} needs a single-network original model", cfg.method.name())));
    Ok(match cfg.method {
        UnlearnMethod::Retrain => Deployed::Single(retrain(data, split, recipe)?),
        UnlearnMethod::Sisa => match original {
            Deployed::Sisa(m) => Deployed::Sisa(sisa_unlearn(m, data, &split.forget)?),
            Deployed::Single(_) => return Err(Error::config("sisa unlearning needs a SISA original model")),
        },
        UnlearnMethod::Ga => Deployed::Single(gradient_ascent_unlearn(single()?, data, &split.forget, cfg.ga_steps, cfg.ga_lr)?),
        UnlearnMethod::Sparsity => {
            let ft = recipe.train.clone();
            Deployed::Single(sparsity_unlearn(single()?, data, split, cfg.prune_ratio, cfg.finetune_epochs, &ft)?)
        }
        UnlearnMethod::Scrub => Deployed::Single(scrub_unlearn(single()?, data, split, cfg, &recipe.train)?),
    })
}
