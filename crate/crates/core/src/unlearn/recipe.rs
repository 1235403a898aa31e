use serde::{Deserialize, Serialize};

use crate::data::{make_membership_split, Dataset, MembershipSplit};
use crate::defense::{dp_sgd_train, DpConfig, DpSettings};
use crate::error::{Result, StageExt};
use crate::nn::{init_model, train, Activation, ModelParams, Posterior, Predictor, TrainConfig};
use crate::rng::derive_seed;
use crate::unlearn::{apply_unlearning, fit_original, SisaModel, UnlearnConfig};

/// A learning algorithm: architecture plus how it is trained from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// One rate per entry of `layer_sizes`; empty means no dropout.
    #[serde(default)]
    pub dropout_rates: Vec<f64>,
    pub train: TrainConfig,
    /// Train with DP-SGD instead of the plain optimizer.
    #[serde(default)]
    pub dp: Option<DpSettings>,
}

impl Recipe {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, train: TrainConfig) -> Self {
        Recipe { layer_sizes, activation, dropout_rates: Vec::new(), train, dp: None }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut r = self.clone();
        r.train.seed = seed;
        r
    }

    /// Fresh parameters for this architecture, seeded by `train.seed`.
    pub fn init(&self) -> Result<ModelParams> {
        let p = init_model(&self.layer_sizes, self.activation, self.train.seed)?;
        if self.dropout_rates.is_empty() {
            Ok(p)
        } else {
            p.with_dropout(&self.dropout_rates)
        }
    }

    /// Initializes and trains on all of `data`.
    pub fn fit(&self, data: &Dataset) -> Result<ModelParams> {
        let init = self.init()?;
        match &self.dp {
            None => train(&init, data, &self.train),
            Some(settings) => {
                let cfg = DpConfig::resolve(settings, &self.train, data.len())?;
                Ok(dp_sgd_train(&init, data, &cfg, None)?.params)
            }
        }
    }
}

/// A deployed classifier: one network or a SISA ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Deployed {
    Single(ModelParams),
    Sisa(SisaModel),
}

impl Deployed {
    pub fn as_single(&self) -> Option<&ModelParams> {
        match self {
            Deployed::Single(p) => Some(p),
            Deployed::Sisa(_) => None,
        }
    }
}

impl Predictor for Deployed {
    fn input_dim(&self) -> usize {
        match self {
            Deployed::Single(p) => p.input_dim(),
            Deployed::Sisa(s) => s.input_dim(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            Deployed::Single(p) => p.num_classes(),
            Deployed::Sisa(s) => s.num_classes(),
        }
    }

    fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        match self {
            Deployed::Single(p) => p.posterior(x),
            Deployed::Sisa(s) => s.posterior(x),
        }
    }
}

/// Learning plus unlearning on one dataset: split, train `f`, unlearn to `f⁻`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Recipe for the original model.
    pub original: Recipe,
    /// Recipe used when unlearning trains anything (retraining, shards, fine-tuning).
    pub unlearning: Recipe,
    pub unlearn: UnlearnConfig,
    pub train_fraction: f64,
    pub forget_fraction: f64,
}

/// Output of [`PipelineSpec::run`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub split: MembershipSplit,
    pub original: Deployed,
    pub unlearned: Deployed,
}

impl PipelineSpec {
    /// Runs the pipeline. Both recipes share one derived training seed, so
    /// retraining repeats the original procedure minus the forget set.
    pub fn run(&self, data: &Dataset, seed: u64) -> Result<PipelineRun> {
        let split = make_membership_split(data.len(), self.train_fraction, self.forget_fraction, derive_seed(seed, "split", 0))
            .stage("make_membership_split")?;
        self.run_on_split(data, split, seed)
    }

    pub fn run_on_split(&self, data: &Dataset, split: MembershipSplit, seed: u64) -> Result<PipelineRun> {
        let train_seed = derive_seed(seed, "train", 0);
        let original_recipe = self.original.with_seed(train_seed);
        let unlearning_recipe = self.unlearning.with_seed(train_seed);
        let original = fit_original(&original_recipe, &self.unlearn, data, &split).stage("train_original")?;
        let unlearned = apply_unlearning(&original, &unlearning_recipe, &self.unlearn, data, &split).stage("unlearn")?;
        Ok(PipelineRun { split, original, unlearned })
    }
}
