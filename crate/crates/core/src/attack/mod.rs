//! The tri-class unlearning membership attack, its baselines, and the
//! likelihood-ratio variant.

mod baselines;
mod classifier;
mod features;
mod ulira;

pub use baselines::{two_round_attack, two_round_decision, BinaryMia, MIA_HIDDEN};
pub use classifier::{attack_train_config, infer, train_attack, uleak_attack, AttackClassifier, ATTACK_HIDDEN};
pub use features::{derive_features, FeatureMode};
pub use ulira::{phi, ulira_classify, ulira_fit, ulira_observation, ulira_shadow_trial, Gaussian, TrialObservations, UliraFit, STD_FLOOR};
