use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EvalTriple, Membership};
use crate::error::{Error, Result};
use crate::nn::Predictor;

/// Accuracy and mean-output geometry of one model on the three sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityBlock {
    pub acc_unseen: f64,
    pub acc_forget: f64,
    pub acc_retain: f64,
    pub acc_gap_retain_unseen: f64,
    pub acc_gap_retain_forget: f64,
    pub dist_retain_unseen: f64,
    pub dist_retain_forget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub pre: SeparabilityBlock,
    pub post: SeparabilityBlock,
}

fn block<P: Predictor + ?Sized>(model: &P, data: &Dataset, sets: &EvalTriple) -> Result<SeparabilityBlock> {
    let c = model.num_classes();
    let mut acc = [0.0; 3];
    let mut mean = vec![vec![0.0; c]; 3];
    for m in Membership::ALL {
        let idx = sets.role(m);
        if idx.is_empty() {
            return Err(Error::data(format!("{} set is empty", m.name())));
        }
        let mut hits = 0usize;
        for &i in idx {
            let p = model.posterior(data.row(i))?;
            if p.argmax() == data.label(i) {
                hits += 1;
            }
            for (s, v) in mean[m.label()].iter_mut().zip(p.probs()) {
                *s += v;
            }
        }
        acc[m.label()] = hits as f64 / idx.len() as f64;
        for s in mean[m.label()].iter_mut() {
            *s /= idx.len() as f64;
        }
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let (u, f, r) = (Membership::Unseen.label(), Membership::Forget.label(), Membership::Retain.label());
    Ok(SeparabilityBlock {
        acc_unseen: acc[u],
        acc_forget: acc[f],
        acc_retain: acc[r],
        acc_gap_retain_unseen: acc[r] - acc[u],
        acc_gap_retain_forget: acc[r] - acc[f],
        dist_retain_unseen: dist(&mean[r], &mean[u]),
        dist_retain_forget: dist(&mean[r], &mean[f]),
    })
}

/// Accuracy gaps and mean-posterior distances before (`f`) and after (`f_minus`) unlearning.
pub fn separability_report<P: Predictor + ?Sized>(f: &P, f_minus: &P, sets: &EvalTriple, data: &Dataset) -> Result<SeparabilityReport> {
    Ok(SeparabilityReport { pre: block(f, data, sets)?, post: block(f_minus, data, sets)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::nn::{init_model, Activation, ModelParams};

    #[test]
    fn identical_models_give_identical_blocks() {
        let data = generate_blobs(3, 4, 10, 0.5, 1).unwrap();
        let sets = EvalTriple { unseen: vec![0, 1, 2], forget: vec![10, 11], retain: vec![20, 21, 25] };
        let p = init_model(&[4, 6, 3], Activation::Relu, 2).unwrap();
        let r = separability_report(&p, &p, &sets, &data).unwrap();
        assert_eq!(r.pre, r.post);
        let flat = ModelParams::zeros(&[4, 6, 3], Activation::Relu).unwrap();
        let r = separability_report(&flat, &flat, &sets, &data).unwrap();
        assert_eq!(r.pre.dist_retain_unseen, 0.0);
        assert_eq!(r.pre.dist_retain_forget, 0.0);
        let empty = EvalTriple { unseen: vec![], ..sets };
        assert!(separability_report(&p, &p, &empty, &data).is_err());
    }
}
