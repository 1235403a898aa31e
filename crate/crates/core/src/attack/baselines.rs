use crate::data::{Dataset, Membership, PairRecord};
use crate::error::{Error, Result};
use crate::nn::{init_model, train, Activation, ModelParams, Posterior, Predictor, TrainConfig};

/// Hidden width of the binary membership classifier.
pub const MIA_HIDDEN: usize = 64;

/// Shadow-trained member/non-member classifier on one model's posterior
/// vector, sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMia {
    pub model: ModelParams,
}

fn sorted_desc(p: &Posterior) -> Vec<f64> {
    let mut v = p.probs().to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

impl BinaryMia {
    pub fn train(members: &[Posterior], non_members: &[Posterior], cfg: &TrainConfig) -> Result<Self> {
        if members.is_empty() || non_members.is_empty() {
            return Err(Error::data("binary MIA needs both members and non-members"));
        }
        let c = members[0].len();
        let mut features = Vec::with_capacity(c * (members.len() + non_members.len()));
        let mut labels = Vec::new();
        for (set, y) in [(non_members, 0), (members, 1)] {
            for p in set {
                if p.len() != c {
                    return Err(Error::shape("posteriors of different lengths"));
                }
                features.extend(sorted_desc(p));
                labels.push(y);
            }
        }
        let data = Dataset::new(features, c, labels, 2, "mia", 0)?;
        let init = init_model(&[c, MIA_HIDDEN, 2], Activation::Relu, cfg.seed)?;
        Ok(BinaryMia { model: train(&init, &data, cfg)? })
    }

    /// Trains on the retain (member) and unseen (non-member) records, using
    /// the original model's outputs when `original` is set and the unlearned
    /// model's otherwise.
    pub fn from_pairs(pairs: &[PairRecord], original: bool, cfg: &TrainConfig) -> Result<Self> {
        let pick = |r: &PairRecord| if original { r.p_orig.clone() } else { r.p_unl.clone() };
        let members: Vec<Posterior> = pairs.iter().filter(|r| r.membership == Membership::Retain).map(pick).collect();
        let non: Vec<Posterior> = pairs.iter().filter(|r| r.membership == Membership::Unseen).map(pick).collect();
        BinaryMia::train(&members, &non, cfg)
    }

    /// Member probability.
    pub fn member_score(&self, p: &Posterior) -> Result<f64> {
        Ok(self.model.posterior(&sorted_desc(p))?.probs()[1])
    }

    pub fn is_member(&self, p: &Posterior) -> Result<bool> {
        Ok(self.model.posterior(&sorted_desc(p))?.argmax() == 1)
    }
}

/// Decision table of the two-round attack. A non-member that becomes a
/// member cannot arise from unlearning and is read as unseen.
pub fn two_round_decision(member_before: bool, member_after: bool) -> Membership {
    match (member_before, member_after) {
        (false, false) => Membership::Unseen,
        (true, false) => Membership::Forget,
        (true, true) => Membership::Retain,
        (false, true) => Membership::Unseen,
    }
}

pub fn two_round_attack(mia_orig: &BinaryMia, mia_unl: &BinaryMia, p_orig: &Posterior, p_unl: &Posterior) -> Result<Membership> {
    Ok(two_round_decision(mia_orig.is_member(p_orig)?, mia_unl.is_member(p_unl)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_table() {
        assert_eq!(two_round_decision(true, true), Membership::Retain);
        assert_eq!(two_round_decision(true, false), Membership::Forget);
        assert_eq!(two_round_decision(false, false), Membership::Unseen);
        assert_eq!(two_round_decision(false, true), Membership::Unseen);
    }

    #[test]
    fn confident_vs_flat_posteriors() {
        let members: Vec<Posterior> = (0..40)
            .map(|k| {
                let top = 0.9 + 0.002 * k as f64;
                let rest = (1.0 - top) / 2.0;
                Posterior::new(vec![rest, top, rest]).unwrap()
            })
            .collect();
        let non: Vec<Posterior> = (0..40)
            .map(|k| {
                let top = 0.4 + 0.002 * k as f64;
                let rest = (1.0 - top) / 2.0;
                Posterior::new(vec![top, rest, rest]).unwrap()
            })
            .collect();
        let cfg = TrainConfig { epochs: 200, batch_size: 16, learning_rate: 1e-2, ..Default::default() };
        let mia = BinaryMia::train(&members, &non, &cfg).unwrap();
        assert!(mia.is_member(&members[5]).unwrap());
        assert!(!mia.is_member(&non[5]).unwrap());
        let both = two_round_attack(&mia, &mia, &members[0], &non[0]).unwrap();
        assert_eq!(both, Membership::Forget);
        assert!(BinaryMia::train(&[], &non, &cfg).is_err());
    }
}
