//! Evaluation quantities for the tri-class attack and the models it targets.

mod report;
mod scores;
mod separability;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Membership, ENCODING_LEGEND};
use crate::error::{Error, Result};

pub use report::{aggregate_reports, AggregateReport, ExperimentReport, MiaRetainAccuracy, ModelUtility, Summary};
pub use scores::{entropy, kl_to_uniform, sample_scores, ScoreKind};
pub use separability::{separability_report, SeparabilityBlock, SeparabilityReport};

/// 3×3 counts, rows = truth, columns = prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|k| self.counts[k][k]).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# legend={ENCODING_LEGEND}")?;
        writeln!(w, "truth\\predicted,unseen,forget,retain")?;
        for m in Membership::ALL {
            let row = self.counts[m.label()];
            writeln!(w, "{},{},{},{}", m.name(), row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

pub fn confusion(preds: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("confusion matrix of zero examples".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        if p > 2 || t > 2 {
            return Err(Error::data(format!("label pair ({t}, {p}) outside {{0,1,2}}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn pooled(cm: &ConfusionMatrix) -> (u64, u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for k in 0..3 {
        tp += cm.counts[k][k];
        fp += (0..3).filter(|&t| t != k).map(|t| cm.counts[t][k]).sum::<u64>();
        fn_ += (0..3).filter(|&p| p != k).map(|p| cm.counts[k][p]).sum::<u64>();
    }
    (tp, fp, fn_)
}

/// Micro-averaged F1. In single-label classification pooled false positives
/// and false negatives coincide, so this is `trace / total`.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("micro F1 of an empty confusion matrix".into()));
    }
    let (tp, fp, fn_) = pooled(cm);
    debug_assert_eq!(fp, fn_);
    debug_assert_eq!(tp + fp, total);
    Ok(cm.trace() as f64 / total as f64)
}

/// Per-class F1 from per-class precision and recall; 0 when both are 0 or undefined.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Result<[f64; 3]> {
    if cm.total() == 0 {
        return Err(Error::UndefinedMetric("per-class F1 of an empty confusion matrix".into()));
    }
    let mut out = [0.0; 3];
    for (k, f) in out.iter_mut().enumerate() {
        let tp = cm.counts[k][k] as f64;
        let predicted: u64 = (0..3).map(|t| cm.counts[t][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        *f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    Ok(out)
}

pub fn macro_f1(per_class: &[f64; 3]) -> f64 {
    per_class.iter().sum::<f64>() / 3.0
}

/// One-vs-rest TPR for class `k` at the threshold where at most
/// `floor(budget · negatives)` negatives score strictly above it.
pub fn tpr_at_fpr(scores: &[[f64; 3]], truth: &[usize], k: usize, fpr_budget: f64) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::shape(format!("{} score rows for {} labels", scores.len(), truth.len())));
    }
    if k > 2 {
        return Err(Error::config(format!("class {k} outside {{0,1,2}}")));
    }
    if !(fpr_budget > 0.0 && fpr_budget < 1.0) {
        return Err(Error::config(format!("FPR budget must lie in (0, 1), got {fpr_budget}")));
    }
    let mut neg: Vec<f64> = Vec::new();
    let mut pos: Vec<f64> = Vec::new();
    for (s, &t) in scores.iter().zip(truth) {
        if t == k {
            pos.push(s[k]);
        } else {
            neg.push(s[k]);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(format!("class {k} has no positives or no negatives")));
    }
    neg.sort_by(f64::total_cmp);
    let allowed = (fpr_budget * neg.len() as f64 + 1e-9).floor() as usize;
    let threshold = neg[neg.len() - 1 - allowed.min(neg.len() - 1)];
    let hits = pos.iter().filter(|&&s| s > threshold).count();
    Ok(hits as f64 / pos.len() as f64)
}

pub fn overfitting_degree(train_acc: f64, test_acc: f64) -> f64 {
    train_acc - test_acc
}
