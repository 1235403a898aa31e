use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Canonical tri-class membership encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Unseen = 0,
    Forget = 1,
    Retain = 2,
}

impl Membership {
    pub const ALL: [Membership; 3] = [Membership::Unseen, Membership::Forget, Membership::Retain];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Result<Self> {
        match label {
            0 => Ok(Membership::Unseen),
            1 => Ok(Membership::Forget),
            2 => Ok(Membership::Retain),
            other => Err(Error::data(format!("membership label {other} outside {{0,1,2}}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Membership::Unseen => "unseen",
            Membership::Forget => "forget",
            Membership::Retain => "retain",
        }
    }
}

/// Legend written into every emitted file that carries membership labels.
pub const ENCODING_LEGEND: &str = "0=unseen,1=forget,2=retain";

/// `ceil(fraction * n)` with a minimum of 1, tolerant of float noise in the product.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).max(1)
}

/// Index sets over one dataset: train/test and the forget/retain/unseen roles.
///
/// All index lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl MembershipSplit {
    /// Builds a split from train/test/forget/unseen, deriving `retain = train \ forget`.
    pub fn new(mut train: Vec<usize>, mut test: Vec<usize>, mut forget: Vec<usize>, mut unseen: Vec<usize>) -> Result<Self> {
        for v in [&mut train, &mut test, &mut forget, &mut unseen] {
            v.sort_unstable();
            if v.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::data("duplicate index in split"));
            }
        }
        if forget.iter().any(|i| train.binary_search(i).is_err()) {
            return Err(Error::data("forget set must be a subset of train"));
        }
        if unseen.iter().any(|i| test.binary_search(i).is_err()) {
            return Err(Error::data("unseen set must be a subset of test"));
        }
        if train.iter().any(|i| test.binary_search(i).is_ok()) {
            return Err(Error::data("train and test overlap"));
        }
        let retain = train.iter().copied().filter(|i| forget.binary_search(i).is_err()).collect();
        Ok(MembershipSplit { train, test, forget, retain, unseen })
    }

    /// Checks the partition algebra exactly.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = MembershipSplit::new(self.train.clone(), self.test.clone(), self.forget.clone(), self.unseen.clone())?;
        if rebuilt.retain != self.retain {
            return Err(Error::data("retain must equal train minus forget"));
        }
        Ok(())
    }

    pub fn role(&self, role: Membership) -> &[usize] {
        match role {
            Membership::Unseen => &self.unseen,
            Membership::Forget => &self.forget,
            Membership::Retain => &self.retain,
        }
    }

    /// JSON with the index lists and the label legend.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            encoding: &'static str,
            #[serde(flatten)]
            split: &'a MembershipSplit,
        }
        Ok(serde_json::to_string_pretty(&Export { encoding: ENCODING_LEGEND, split: self })?)
    }
}

/// Seeded split of `n` rows: train/test at `train_fraction`, forget is a uniform
/// sample of `ceil(forget_fraction · |train|)` train rows, unseen is the whole test part.
pub fn make_membership_split(n: usize, train_fraction: f64, forget_fraction: f64, seed: u64) -> Result<MembershipSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    if !(forget_fraction > 0.0 && forget_fraction <= 1.0) {
        return Err(Error::config(format!("forget fraction must lie in (0, 1], got {forget_fraction}")));
    }
    if n < 3 {
        return Err(Error::config("need at least three rows for a membership split"));
    }
    let n_train = ceil_count(train_fraction, n).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(seed, 0);
    order.shuffle(&mut rng);
    let train = order[..n_train].to_vec();
    let test = order[n_train..].to_vec();
    let n_forget = ceil_count(forget_fraction, n_train);
    if n_forget >= n_train {
        return Err(Error::config(format!("forget fraction {forget_fraction} leaves no retain rows out of {n_train}")));
    }
    let forget: Vec<usize> = index::sample(&mut rng, n_train, n_forget).into_iter().map(|k| train[k]).collect();
    MembershipSplit::new(train, test.clone(), forget, test)
}

/// Evaluation sample drawn from a split: one index list per membership class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTriple {
    pub unseen: Vec<usize>,
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
}

impl EvalTriple {
    pub fn role(&self, role: Membership) -> &[usize] {
        match role {
            Membership::Unseen => &self.unseen,
            Membership::Forget => &self.forget,
            Membership::Retain => &self.retain,
        }
    }

    /// Class of `index`, searching unseen, forget, retain in that order.
    pub fn role_of(&self, index: usize) -> Option<Membership> {
        Membership::ALL.into_iter().find(|&m| self.role(m).contains(&index))
    }

    /// The full unseen, forget and retain sets of a split.
    pub fn from_split(split: &MembershipSplit) -> Self {
        EvalTriple { unseen: split.unseen.clone(), forget: split.forget.clone(), retain: split.retain.clone() }
    }

    /// `(index, membership)` pairs in unseen, forget, retain order.
    pub fn labeled(&self) -> Vec<(usize, Membership)> {
        Membership::ALL.iter().flat_map(|&m| self.role(m).iter().map(move |&i| (i, m))).collect()
    }

    pub fn len(&self) -> usize {
        self.unseen.len() + self.forget.len() + self.retain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Subsamples unseen:forget:retain at `ratio`.
///
/// The unit is `|forget| / ratio.forget` (floored); each class gets
/// `ratio_k · unit` rows sampled uniformly from its pool.
pub fn balance_ratio_sample(split: &MembershipSplit, ratio: [usize; 3], seed: u64) -> Result<EvalTriple> {
    if ratio.contains(&0) {
        return Err(Error::config(format!("ratio entries must be positive, got {ratio:?}")));
    }
    let [ru, rf, rr] = ratio;
    let unit = split.forget.len() / rf;
    if unit == 0 {
        return Err(Error::config(format!("forget set of {} cannot supply ratio {ratio:?}", split.forget.len())));
    }
    let mut rng = rng::seeded(seed, 0);
    let mut draw = |pool: &[usize], k: usize, what: &str| -> Result<Vec<usize>> {
        if k > pool.len() {
            return Err(Error::config(format!("ratio {ratio:?} needs {k} {what} rows but only {} exist", pool.len())));
        }
        let mut out: Vec<usize> = index::sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        out.sort_unstable();
        Ok(out)
    };
    let unseen = draw(&split.unseen, ru * unit, "unseen")?;
    let forget = draw(&split.forget, rf * unit, "forget")?;
    let retain = draw(&split.retain, rr * unit, "retain")?;
    Ok(EvalTriple { unseen, forget, retain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_sizes() {
        let s = make_membership_split(1000, 0.8, 0.02, 3).unwrap();
        assert_eq!((s.train.len(), s.forget.len(), s.retain.len()), (800, 16, 784));
        assert_eq!(s.unseen.len(), 200);
        s.validate().unwrap();
    }

    #[test]
    fn largest_sensitivity_point() {
        let s = make_membership_split(125, 0.8, 0.4, 3).unwrap();
        assert_eq!(s.train.len(), 100);
        assert_eq!(s.forget.len(), 40);
    }

    #[test]
    fn empty_retain_is_rejected() {
        assert!(matches!(make_membership_split(100, 0.8, 1.0, 1), Err(Error::Config(_))));
        assert!(matches!(make_membership_split(100, 0.8, 0.0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn ratios() {
        let s = make_membership_split(1000, 0.8, 0.025, 3).unwrap();
        assert_eq!(s.forget.len(), 20);
        let t = balance_ratio_sample(&s, [1, 1, 1], 1).unwrap();
        assert_eq!((t.unseen.len(), t.forget.len(), t.retain.len()), (20, 20, 20));
        let s = make_membership_split(1000, 0.8, 0.0125, 3).unwrap();
        assert_eq!(s.forget.len(), 10);
        let t = balance_ratio_sample(&s, [4, 1, 2], 1).unwrap();
        assert_eq!((t.unseen.len(), t.forget.len(), t.retain.len()), (40, 10, 20));
        assert!(balance_ratio_sample(&s, [0, 1, 1], 1).is_err());
        assert!(balance_ratio_sample(&s, [100, 1, 1], 1).is_err());
    }

    #[test]
    fn json_carries_legend() {
        let s = make_membership_split(20, 0.5, 0.2, 3).unwrap();
        let j = s.to_json().unwrap();
        assert!(j.contains(ENCODING_LEGEND));
        assert!(j.contains("\"forget\""));
    }

    #[test]
    fn manual_split_checks_subsets() {
        assert!(MembershipSplit::new(vec![0, 1], vec![2], vec![2], vec![2]).is_err());
        assert!(MembershipSplit::new(vec![0, 1], vec![1, 2], vec![0], vec![2]).is_err());
        let s = MembershipSplit::new(vec![0, 1, 2], vec![3], vec![], vec![3]).unwrap();
        assert_eq!(s.retain, vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn partition_soundness(n in 10usize..400, tf in 0.3f64..0.9, ff in 0.01f64..0.5, seed in any::<u64>()) {
            if let Ok(s) = make_membership_split(n, tf, ff, seed) {
                let mut union: Vec<usize> = s.forget.iter().chain(&s.retain).copied().collect();
                union.sort_unstable();
                prop_assert_eq!(&union, &s.train);
                prop_assert!(s.forget.iter().all(|i| s.retain.binary_search(i).is_err()));
                prop_assert!(s.unseen.iter().all(|i| s.train.binary_search(i).is_err()));
                prop_assert!(!s.forget.is_empty() && !s.retain.is_empty() && !s.unseen.is_empty());
                prop_assert_eq!(make_membership_split(n, tf, ff, seed).unwrap(), s);
            }
        }
    }
}
