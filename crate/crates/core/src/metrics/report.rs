use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, SeparabilityReport};

/// Original-model accuracies plus unlearned-model accuracy on the forget (UA),
/// retain (RA) and test (TA) rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelUtility {
    pub train_acc: f64,
    pub test_acc: f64,
    pub ua: f64,
    pub ra: f64,
    pub ta: f64,
}

/// Binary-MIA accuracy on retain rows, against the original and the unlearned model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaRetainAccuracy {
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub legend: String,
    pub config_digest: String,
    pub seed: u64,
    pub method: String,
    pub feature_mode: String,
    pub defense: String,
    /// Sizes of the evaluated unseen, forget and retain samples.
    pub eval_sizes: [usize; 3],
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; 3],
    pub fpr_budget: f64,
    /// `None` where the rate is undefined.
    pub tpr_at_fpr: [Option<f64>; 3],
    pub confusion: ConfusionMatrix,
    pub utility: ModelUtility,
    pub overfitting_original: f64,
    pub overfitting_unlearned: f64,
    /// Micro F1 of the baseline attacks, keyed by name.
    pub baselines: BTreeMap<String, f64>,
    /// Micro F1 per feature mode for the ablation modes.
    pub ablation: BTreeMap<String, f64>,
    pub mia_retain_accuracy: Option<MiaRetainAccuracy>,
    pub separability: Option<SeparabilityReport>,
    /// Achieved ε of the original model's DP training, if any.
    pub epsilon: Option<f64>,
}

impl ExperimentReport {
    /// Every scalar metric under a stable dotted name.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("micro_f1".into(), self.micro_f1);
        m.insert("macro_f1".into(), self.macro_f1);
        for (k, name) in ["unseen", "forget", "retain"].iter().enumerate() {
            m.insert(format!("f1.{name}"), self.per_class_f1[k]);
            if let Some(t) = self.tpr_at_fpr[k] {
                m.insert(format!("tpr.{name}"), t);
            }
        }
        let u = &self.utility;
        for (k, v) in [("train_acc", u.train_acc), ("test_acc", u.test_acc), ("ua", u.ua), ("ra", u.ra), ("ta", u.ta)] {
            m.insert(format!("utility.{k}"), v);
        }
        m.insert("overfitting.original".into(), self.overfitting_original);
        m.insert("overfitting.unlearned".into(), self.overfitting_unlearned);
        for (k, v) in &self.baselines {
            m.insert(format!("baseline.{k}"), *v);
        }
        for (k, v) in &self.ablation {
            m.insert(format!("ablation.{k}"), *v);
        }
        if let Some(a) = self.mia_retain_accuracy {
            m.insert("mia_retain.pre".into(), a.pre);
            m.insert("mia_retain.post".into(), a.post);
        }
        if let Some(s) = &self.separability {
            for (tag, b) in [("pre", &s.pre), ("post", &s.post)] {
                m.insert(format!("sep.{tag}.gap_retain_unseen"), b.acc_gap_retain_unseen);
                m.insert(format!("sep.{tag}.gap_retain_forget"), b.acc_gap_retain_forget);
                m.insert(format!("sep.{tag}.dist_retain_unseen"), b.dist_retain_unseen);
                m.insert(format!("sep.{tag}.dist_retain_forget"), b.dist_retain_forget);
            }
        }
        if let Some(e) = self.epsilon.filter(|e| e.is_finite()) {
            m.insert("epsilon".into(), e);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::UndefinedMetric("summary of no values".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Ok(Summary { median, mean: v.iter().sum::<f64>() / n as f64 })
    }
}

/// Per-metric median and mean across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub name: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, Summary>,
}

impl AggregateReport {
    pub fn median(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|s| s.median)
    }
}

pub fn aggregate_reports(reports: &[ExperimentReport]) -> Result<AggregateReport> {
    let first = reports.first().ok_or_else(|| Error::UndefinedMetric("no reports to aggregate".into()))?;
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.scalars() {
            columns.entry(k).or_default().push(v);
        }
    }
    let metrics = columns.into_iter().map(|(k, v)| Ok((k, Summary::of(&v)?))).collect::<Result<_>>()?;
    Ok(AggregateReport {
        name: first.name.clone(),
        config_digest: first.config_digest.clone(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_median_and_mean() {
        let s = Summary::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.median, s.mean), (2.0, 2.0));
        let s = Summary::of(&[4.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert!(Summary::of(&[]).is_err());
    }
}
