use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::FeatureMode;
use crate::defense::{dropout_defense_with_rate, DpSettings, OutputPolicy, DEFENSE_DROPOUT};
use crate::error::{Error, Result};
use crate::nn::{Activation, OptimizerKind, TrainConfig};
use crate::unlearn::{PipelineSpec, Recipe, UnlearnConfig};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "UNLEARNLAB_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowRelation {
    /// Shadow rows come from the same blobs as the target, disjoint from it.
    #[default]
    Disjoint,
    /// Shadow rows come from blobs generated with `shifted_seed`.
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub seed: u64,
    /// Share of the generated rows given to the target; the rest is shadow data.
    pub target_fraction: f64,
    /// Train share of each of the target and shadow parts.
    pub train_fraction: f64,
    pub shadow_relation: ShadowRelation,
    pub shifted_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        // 6000 rows: 3000 target (2000 train / 1000 test) and 3000 shadow
        DatasetSpec {
            classes: 10,
            dim: 20,
            per_class: 600,
            spread: 0.4,
            seed: 7,
            target_fraction: 0.5,
            train_fraction: 2.0 / 3.0,
            shadow_relation: ShadowRelation::Disjoint,
            shifted_seed: 8,
        }
    }
}

/// Training schedules for the overfitting scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverfitPreset {
    /// Long training, no regularization beyond the base config.
    High,
    /// Short training with strong weight decay.
    Low,
}

impl OverfitPreset {
    pub fn apply(self, recipe: &Recipe) -> Recipe {
        let mut r = recipe.clone();
        match self {
            OverfitPreset::High => {}
            OverfitPreset::Low => {
                r.train.epochs = (recipe.train.epochs / 10).max(1);
                r.train.weight_decay = recipe.train.weight_decay.max(1e-2);
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub overfit_original: Option<OverfitPreset>,
    pub overfit_unlearned: Option<OverfitPreset>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden: vec![64, 64], activation: Activation::Relu, overfit_original: None, overfit_unlearned: None }
    }
}

/// The desk training schedule: Adam at 3e-3 for 80 epochs.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig { epochs: 80, batch_size: 64, learning_rate: 3e-3, weight_decay: 1e-4, optimizer: OptimizerKind::Adam, seed: 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub feature_mode: FeatureMode,
    /// Extra feature modes evaluated side by side with the main one.
    pub ablation_modes: Vec<FeatureMode>,
    /// Also run the two-round and U-Leak baselines.
    pub baselines: bool,
    pub separability: bool,
    /// Shadow repetitions used to build the attack training set.
    pub repetitions: usize,
    /// Evaluation sizes as multiples of the forget size, ordered unseen:forget:retain.
    pub class_ratio: [usize; 3],
    pub fpr_budget: f64,
    pub epochs: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            feature_mode: FeatureMode::Cds,
            ablation_modes: Vec::new(),
            baselines: true,
            separability: true,
            repetitions: 5,
            class_ratio: [1, 1, 1],
            fpr_budget: 0.05,
            epochs: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    LabelOnly,
    Dropout,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSpec {
    pub kind: DefenseKind,
    pub dropout_rate: f64,
    pub dp: Option<DpSettings>,
}

impl Default for DefenseSpec {
    fn default() -> Self {
        DefenseSpec { kind: DefenseKind::None, dropout_rate: DEFENSE_DROPOUT, dp: None }
    }
}

impl DefenseSpec {
    pub fn label(&self) -> String {
        match self.kind {
            DefenseKind::None => "none".into(),
            DefenseKind::LabelOnly => "label_only".into(),
            DefenseKind::Dropout => format!("dropout:{}", self.dropout_rate),
            DefenseKind::Dp => match &self.dp {
                Some(DpSettings { target_epsilon: Some(e), .. }) => format!("dp:eps={e}"),
                Some(DpSettings { noise_multiplier: Some(s), .. }) => format!("dp:sigma={s}"),
                _ => "dp".into(),
            },
        }
    }

    pub fn output_policy(&self) -> OutputPolicy {
        match self.kind {
            DefenseKind::LabelOnly => OutputPolicy::LabelOnly,
            _ => OutputPolicy::Full,
        }
    }

    /// Applies training-side defenses to a recipe.
    pub fn apply(&self, recipe: &Recipe) -> Result<Recipe> {
        match self.kind {
            DefenseKind::None | DefenseKind::LabelOnly => Ok(recipe.clone()),
            DefenseKind::Dropout => dropout_defense_with_rate(recipe, self.dropout_rate),
            DefenseKind::Dp => {
                let dp = self.dp.clone().ok_or_else(|| Error::config("defense kind dp needs a [defense.dp] section"))?;
                let mut r = recipe.clone();
                r.dp = Some(dp);
                Ok(r)
            }
        }
    }
}

/// Shadow-side overrides for transferability runs; unset fields mirror the target.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowSpec {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub unlearn: Option<UnlearnConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub forget_fraction: f64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub unlearn: UnlearnConfig,
    pub attack: AttackSpec,
    pub defense: DefenseSpec,
    pub shadow: ShadowSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seeds: vec![1, 2, 3],
            output_dir: None,
            forget_fraction: 0.02,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: desk_train_config(),
            unlearn: UnlearnConfig::default(),
            attack: AttackSpec::default(),
            defense: DefenseSpec::default(),
            shadow: ShadowSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.attack.repetitions == 0 {
            return Err(Error::config("attack.repetitions must be at least 1"));
        }
        if self.attack.class_ratio.contains(&0) {
            return Err(Error::config("attack.class_ratio entries must be positive"));
        }
        if self.defense.kind == DefenseKind::Dp && self.defense.dp.is_none() {
            return Err(Error::config("defense kind dp needs a [defense.dp] section"));
        }
        if !(0.0..=1.0).contains(&self.defense.dropout_rate) {
            return Err(Error::config("defense.dropout_rate must lie in [0, 1]"));
        }
        self.train.validate()?;
        self.unlearn.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Feature mode the attack actually uses; label-only output leaves only
    /// label-only information.
    pub fn effective_mode(&self) -> FeatureMode {
        match self.defense.kind {
            DefenseKind::LabelOnly => FeatureMode::LabelOnly,
            _ => self.attack.feature_mode,
        }
    }

    fn base_recipe(&self, hidden: &[usize], activation: Activation) -> Recipe {
        let mut sizes = vec![self.dataset.dim];
        sizes.extend_from_slice(hidden);
        sizes.push(self.dataset.classes);
        Recipe::new(sizes, activation, self.train.clone())
    }

    fn pipeline_with(&self, hidden: &[usize], activation: Activation, unlearn: &UnlearnConfig) -> Result<PipelineSpec> {
        let base = self.base_recipe(hidden, activation);
        let preset = |p: Option<OverfitPreset>| p.map(|p| p.apply(&base)).unwrap_or_else(|| base.clone());
        Ok(PipelineSpec {
            original: self.defense.apply(&preset(self.model.overfit_original))?,
            unlearning: self.defense.apply(&preset(self.model.overfit_unlearned))?,
            unlearn: unlearn.clone(),
            train_fraction: self.dataset.train_fraction,
            forget_fraction: self.forget_fraction,
        })
    }

    pub fn target_pipeline(&self) -> Result<PipelineSpec> {
        self.pipeline_with(&self.model.hidden, self.model.activation, &self.unlearn)
    }

    pub fn shadow_pipeline(&self) -> Result<PipelineSpec> {
        let hidden = self.shadow.hidden.as_deref().unwrap_or(&self.model.hidden);
        let activation = self.shadow.activation.unwrap_or(self.model.activation);
        let unlearn = self.shadow.unlearn.as_ref().unwrap_or(&self.unlearn);
        self.pipeline_with(hidden, activation, unlearn)
    }

    /// Output directory, placed under `$UNLEARNLAB_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        let dir = self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name));
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }
}
