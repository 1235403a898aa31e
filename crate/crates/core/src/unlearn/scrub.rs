use rand::seq::SliceRandom;

use crate::data::{Dataset, MembershipSplit};
use crate::error::{Error, Result};
use crate::nn::{check_compatible, cross_entropy_grad, raw_logits, softmax, Gradients, ModelParams, Optimizer, Tape, TrainConfig};
use crate::rng::{self, derive_seed, stream};
use crate::unlearn::UnlearnConfig;

/// `KL(softmax(s/T) ‖ softmax(t/T))` and its gradient with respect to `s`.
pub fn kl_divergence_softened(student: &[f64], teacher: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let scaled = |v: &[f64]| v.iter().map(|z| z / temperature).collect::<Vec<_>>();
    let ps = softmax(&scaled(student));
    let pt = softmax(&scaled(teacher));
    let log = |p: f64| p.max(1e-300).ln();
    let kl: f64 = ps.iter().zip(&pt).map(|(s, t)| s * (log(*s) - log(*t))).sum();
    let grad = ps.iter().zip(&pt).map(|(s, t)| s * (log(*s) - log(*t) - kl) / temperature).collect();
    (kl, grad)
}

/// Teacher/student unlearning. The student starts as a copy of `teacher`;
/// each epoch first (for the first `scrub_max_epochs` epochs) pushes the
/// student away from the teacher on the forget set, then pulls it back on the
/// retain set with distillation plus cross-entropy.
pub fn scrub_unlearn(
    teacher: &ModelParams,
    data: &Dataset,
    split: &MembershipSplit,
    cfg: &UnlearnConfig,
    train_cfg: &TrainConfig,
) -> Result<ModelParams> {
    check_compatible(teacher, data)?;
    if split.forget.is_empty() || split.retain.is_empty() {
        return Err(Error::data("scrub needs non-empty forget and retain sets"));
    }
    let t = cfg.scrub_temperature;
    let teacher_logits = |i: usize| raw_logits(teacher, data.row(i));
    let forget_t: Vec<Vec<f64>> = split.forget.iter().map(|&i| teacher_logits(i)).collect::<Result<_>>()?;
    let retain_t: Vec<Vec<f64>> = split.retain.iter().map(|&i| teacher_logits(i)).collect::<Result<_>>()?;

    let mut student = teacher.clone();
    let mut opt = Optimizer::new(train_cfg.optimizer, cfg.scrub_lr, train_cfg.weight_decay);
    let mut shuffle = rng::seeded(derive_seed(train_cfg.seed, "scrub", 0), stream::SHUFFLE);
    let mut grads = Gradients::zeros_like(&student);
    let mut tape = Tape::default();
    let mut ce = Vec::new();
    let batch = train_cfg.batch_size.max(1);
    let mut forget_order: Vec<usize> = (0..split.forget.len()).collect();
    let mut retain_order: Vec<usize> = (0..split.retain.len()).collect();

    for epoch in 0..cfg.scrub_max_epochs.max(cfg.scrub_min_epochs) {
        if epoch < cfg.scrub_max_epochs {
            forget_order.shuffle(&mut shuffle);
            for chunk in forget_order.chunks(batch) {
                grads.fill_zero();
                let scale = 1.0 / chunk.len() as f64;
                for &j in chunk {
                    tape.run(&student, data.row(split.forget[j]), None);
                    let (_, g) = kl_divergence_softened(tape.logits(), &forget_t[j], t);
                    // ascent: descend on -KL
                    tape.backward(&student, &g, -scale, &mut grads);
                }
                opt.step(&mut student, &grads, None);
            }
        }
        if epoch < cfg.scrub_min_epochs {
            retain_order.shuffle(&mut shuffle);
            for chunk in retain_order.chunks(batch) {
                grads.fill_zero();
                let scale = 1.0 / chunk.len() as f64;
                for &j in chunk {
                    let i = split.retain[j];
                    tape.run(&student, data.row(i), None);
                    let (_, mut g) = kl_divergence_softened(tape.logits(), &retain_t[j], t);
                    cross_entropy_grad(tape.logits(), data.label(i), &mut ce);
                    for (a, b) in g.iter_mut().zip(&ce) {
                        *a += b;
                    }
                    tape.backward(&student, &g, scale, &mut grads);
                }
                opt.step(&mut student, &grads, None);
            }
        }
    }
    Ok(student)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, make_membership_split};
    use crate::nn::{init_model, Activation};
    use crate::unlearn::UnlearnMethod;

    #[test]
    fn kl_gradient_matches_finite_difference() {
        let s = [0.3, -1.2, 2.0, 0.1];
        let t = [1.0, 0.0, -0.5, 0.7];
        for temp in [1.0, 4.0] {
            let (_, g) = kl_divergence_softened(&s, &t, temp);
            for k in 0..s.len() {
                let h = 1e-6;
                let mut up = s;
                up[k] += h;
                let mut dn = s;
                dn[k] -= h;
                let fd = (kl_divergence_softened(&up, &t, temp).0 - kl_divergence_softened(&dn, &t, temp).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "{fd} vs {}", g[k]);
            }
        }
        assert!(kl_divergence_softened(&s, &s, 4.0).0.abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_teacher() {
        let data = generate_blobs(3, 4, 20, 0.5, 1).unwrap();
        let split = make_membership_split(data.len(), 0.8, 0.1, 2).unwrap();
        let p = init_model(&[4, 6, 3], Activation::Relu, 1).unwrap();
        let cfg = UnlearnConfig { scrub_max_epochs: 0, scrub_min_epochs: 0, ..UnlearnConfig::with_method(UnlearnMethod::Scrub) };
        assert!(scrub_unlearn(&p, &data, &split, &cfg, &TrainConfig::default()).unwrap().bit_eq(&p));
    }

    #[test]
    fn scrub_moves_student_and_is_deterministic() {
        let data = generate_blobs(3, 4, 20, 0.5, 1).unwrap();
        let split = make_membership_split(data.len(), 0.8, 0.1, 2).unwrap();
        let p = init_model(&[4, 6, 3], Activation::Relu, 1).unwrap();
        let cfg = UnlearnConfig::with_method(UnlearnMethod::Scrub);
        let a = scrub_unlearn(&p, &data, &split, &cfg, &TrainConfig::default()).unwrap();
        let b = scrub_unlearn(&p, &data, &split, &cfg, &TrainConfig::default()).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&p));
    }
}
