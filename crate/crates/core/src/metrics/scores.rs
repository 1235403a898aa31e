use crate::attack::BinaryMia;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Posterior, Predictor};

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &Posterior) -> f64 {
    -p.probs().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `KL(p ‖ uniform) = ln C - H(p)`; lower values look more like outliers.
pub fn kl_to_uniform(p: &Posterior) -> f64 {
    ((p.len() as f64).ln() - entropy(p)).max(0.0)
}

/// Per-example characteristic score.
#[derive(Debug, Clone, Copy)]
pub enum ScoreKind<'a> {
    Entropy,
    Outlierness,
    /// Fraction of `ensemble` attacks that get membership right; `members[j]`
    /// is the true status of the j-th queried index.
    Vulnerability {
        ensemble: &'a [BinaryMia],
        members: &'a [bool],
    },
}

pub fn sample_scores<P: Predictor + ?Sized>(model: &P, data: &Dataset, indices: &[usize], kind: ScoreKind<'_>) -> Result<Vec<f64>> {
    if let ScoreKind::Vulnerability { ensemble, members } = kind {
        if ensemble.len() < 2 {
            return Err(Error::config("vulnerability needs an ensemble of at least two attacks"));
        }
        if members.len() != indices.len() {
            return Err(Error::shape("membership flags do not match the queried indices"));
        }
    }
    indices
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let p = model.posterior(data.row(i))?;
            Ok(match kind {
                ScoreKind::Entropy => entropy(&p),
                ScoreKind::Outlierness => kl_to_uniform(&p),
                ScoreKind::Vulnerability { ensemble, members } => {
                    let mut right = 0;
                    for a in ensemble {
                        if a.is_member(&p)? == members[j] {
                            right += 1;
                        }
                    }
                    right as f64 / ensemble.len() as f64
                }
            })
        })
        .collect()
}
