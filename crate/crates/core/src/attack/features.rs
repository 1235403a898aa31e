use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Posterior;

/// How a pair of posteriors becomes an attack feature vector.
///
/// Text form: `cp`, `ct`, `df`, `sm`, `cds`, `label_only`, `topk:K`, `rounded:D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureMode {
    /// Both full posterior vectors.
    Cp,
    /// True-label probabilities of both models.
    Ct,
    /// Difference of the true-label probabilities.
    Df,
    /// Sum of the true-label probabilities.
    Sm,
    /// Difference and sum.
    Cds,
    /// Whether each model predicts the true label.
    LabelOnly,
    /// Top-k probabilities of each model, descending.
    TopK(usize),
    /// `Ct` rounded to the given number of decimals.
    Rounded(u32),
}

impl FeatureMode {
    pub const BASIC: [FeatureMode; 5] = [FeatureMode::Cp, FeatureMode::Ct, FeatureMode::Df, FeatureMode::Sm, FeatureMode::Cds];

    /// Feature length for `classes` output classes.
    pub fn dim(self, classes: usize) -> usize {
        match self {
            FeatureMode::Cp => 2 * classes,
            FeatureMode::Df | FeatureMode::Sm => 1,
            FeatureMode::Ct | FeatureMode::Cds | FeatureMode::LabelOnly | FeatureMode::Rounded(_) => 2,
            FeatureMode::TopK(k) => 2 * k,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Cp => f.write_str("cp"),
            FeatureMode::Ct => f.write_str("ct"),
            FeatureMode::Df => f.write_str("df"),
            FeatureMode::Sm => f.write_str("sm"),
            FeatureMode::Cds => f.write_str("cds"),
            FeatureMode::LabelOnly => f.write_str("label_only"),
            FeatureMode::TopK(k) => write!(f, "topk:{k}"),
            FeatureMode::Rounded(d) => write!(f, "rounded:{d}"),
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::config(format!("unknown feature mode {s:?}"));
        Ok(match s.as_str() {
            "cp" => FeatureMode::Cp,
            "ct" => FeatureMode::Ct,
            "df" => FeatureMode::Df,
            "sm" => FeatureMode::Sm,
            "cds" => FeatureMode::Cds,
            "label_only" | "label-only" => FeatureMode::LabelOnly,
            _ => {
                let (name, arg) = s.split_once(':').ok_or_else(bad)?;
                match name {
                    "topk" => {
                        let k: usize = arg.parse().map_err(|_| bad())?;
                        if k == 0 {
                            return Err(Error::config("topk needs k >= 1"));
                        }
                        FeatureMode::TopK(k)
                    }
                    "rounded" => FeatureMode::Rounded(arg.parse().map_err(|_| bad())?),
                    _ => return Err(bad()),
                }
            }
        })
    }
}

impl TryFrom<String> for FeatureMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureMode> for String {
    fn from(m: FeatureMode) -> String {
        m.to_string()
    }
}

fn round_to(v: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (v * f).round() / f
}

fn top_k(p: &[f64], k: usize) -> impl Iterator<Item = f64> {
    let mut v = p.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.into_iter().take(k)
}

/// Attack features of one example from the original and unlearned posteriors.
pub fn derive_features(p_orig: &Posterior, p_unl: &Posterior, true_label: usize, mode: FeatureMode) -> Result<Vec<f64>> {
    let c = p_orig.len();
    if p_unl.len() != c {
        return Err(Error::shape(format!("posterior lengths differ: {c} and {}", p_unl.len())));
    }
    if true_label >= c {
        return Err(Error::data(format!("label {true_label} out of range for {c} classes")));
    }
    let (a, b) = (p_orig.probs()[true_label], p_unl.probs()[true_label]);
    Ok(match mode {
        FeatureMode::Cp => p_orig.probs().iter().chain(p_unl.probs()).copied().collect(),
        FeatureMode::Ct => vec![a, b],
        FeatureMode::Df => vec![a - b],
        FeatureMode::Sm => vec![a + b],
        FeatureMode::Cds => vec![a - b, a + b],
        FeatureMode::LabelOnly => {
            let hit = |p: &Posterior| if p.argmax() == true_label { 1.0 } else { 0.0 };
            vec![hit(p_orig), hit(p_unl)]
        }
        FeatureMode::TopK(k) => {
            if k > c {
                return Err(Error::config(format!("topk k={k} exceeds {c} classes")));
            }
            top_k(p_orig.probs(), k).chain(top_k(p_unl.probs(), k)).collect()
        }
        FeatureMode::Rounded(d) => vec![round_to(a, d), round_to(b, d)],
    })
}
