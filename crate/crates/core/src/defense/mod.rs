//! Defenses: label-only output, dropout, and DP-SGD with RDP accounting.

mod dp;
mod rdp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Posterior;
use crate::unlearn::Recipe;

pub use dp::{dp_sgd_train, privacy_ledger, ClipHook, DpConfig, DpOutcome, DpSettings, DpStatus, LedgerCheckpoint, PrivacyLedger};
pub use rdp::{calibrate_sigma, compute_epsilon, default_orders, rdp_single_step, rdp_to_epsilon, RdpCurve};

/// What the server releases for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputPolicy {
    #[default]
    Full,
    /// Only the predicted label, released as a one-hot vector.
    LabelOnly,
}

impl OutputPolicy {
    pub fn apply(self, p: Posterior) -> Posterior {
        match self {
            OutputPolicy::Full => p,
            OutputPolicy::LabelOnly => {
                let mut v = vec![0.0; p.len()];
                v[p.argmax()] = 1.0;
                Posterior::from_raw(v)
            }
        }
    }
}

/// Label-only output policy. Under it the true-label probability of either
/// model is `1[argmax = y]`, so every feature mode collapses to label-only features.
pub fn label_only_mode() -> OutputPolicy {
    OutputPolicy::LabelOnly
}

/// Dropout rate used by the dropout defense.
pub const DEFENSE_DROPOUT: f64 = 0.95;

/// Puts dropout `rate` on the input of the last fully connected layer.
pub fn dropout_defense_with_rate(recipe: &Recipe, rate: f64) -> Result<Recipe> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must lie in [0, 1], got {rate}")));
    }
    let n = recipe.layer_sizes.len();
    if n < 3 {
        return Err(Error::config("dropout defense needs at least one hidden layer"));
    }
    let mut r = recipe.clone();
    let mut rates = vec![0.0; n];
    // rates[l] applies to the input of layer l; n - 2 is the last hidden layer
    rates[n - 2] = rate;
    r.dropout_rates = rates;
    Ok(r)
}

pub fn dropout_defense(recipe: &Recipe) -> Result<Recipe> {
    dropout_defense_with_rate(recipe, DEFENSE_DROPOUT)
}
