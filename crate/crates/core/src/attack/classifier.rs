use crate::attack::{derive_features, FeatureMode};
use crate::data::{AttackDataset, Membership, PairRecord};
use crate::error::{Error, Result};
use crate::nn::{init_model, train, Activation, ModelParams, OptimizerKind, Posterior, Predictor, TrainConfig};

/// Hidden widths of the tri-class attack network.
pub const ATTACK_HIDDEN: [usize; 2] = [32, 16];

/// Default trainer for attack networks: Adam, lr 1e-3, 300 epochs, batch 64.
pub fn attack_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 300, batch_size: 64, learning_rate: 1e-3, weight_decay: 0.0, optimizer: OptimizerKind::Adam, seed }
}

/// The tri-class membership classifier and the feature mode it consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackClassifier {
    pub model: ModelParams,
    pub mode: FeatureMode,
}

impl AttackClassifier {
    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    /// Posterior over {unseen, forget, retain} for a feature vector.
    pub fn score(&self, features: &[f64]) -> Result<Posterior> {
        self.model.posterior(features)
    }

    pub fn infer_record(&self, r: &PairRecord) -> Result<(Membership, Posterior)> {
        infer(self, &r.p_orig, &r.p_unl, r.label)
    }
}

/// Trains the [in, 32, 16, 3] ReLU network on `set`.
pub fn train_attack(set: &AttackDataset, cfg: &TrainConfig) -> Result<AttackClassifier> {
    if let Some(m) = Membership::ALL.iter().find(|m| set.class_counts[m.label()] == 0) {
        return Err(Error::data(format!("attack training set has no {} examples", m.name())));
    }
    let data = set.to_dataset()?;
    let sizes = [data.dim(), ATTACK_HIDDEN[0], ATTACK_HIDDEN[1], 3];
    let init = init_model(&sizes, Activation::Relu, cfg.seed)?;
    Ok(AttackClassifier { model: train(&init, &data, cfg)?, mode: set.feature_mode })
}

/// Predicted membership (argmax, lowest index on ties) and the raw posterior.
pub fn infer(classifier: &AttackClassifier, p_orig: &Posterior, p_unl: &Posterior, true_label: usize) -> Result<(Membership, Posterior)> {
    let x = derive_features(p_orig, p_unl, true_label, classifier.mode)?;
    if x.len() != classifier.input_dim() {
        return Err(Error::shape(format!(
            "{} features give {} values, classifier expects {}",
            classifier.mode,
            x.len(),
            classifier.input_dim()
        )));
    }
    let post = classifier.score(&x)?;
    Ok((Membership::from_label(post.argmax())?, post))
}

/// U-Leak stand-in: the same pipeline with full posterior concatenation.
pub fn uleak_attack(pairs: &[PairRecord], cfg: &TrainConfig) -> Result<AttackClassifier> {
    train_attack(&AttackDataset::from_pairs(pairs, FeatureMode::Cp)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AttackExample;
    use crate::nn::evaluate;

    fn clustered() -> AttackDataset {
        let mut examples = Vec::new();
        for (m, centre) in [(Membership::Unseen, -2.0), (Membership::Forget, 0.0), (Membership::Retain, 2.0)] {
            for k in 0..30 {
                examples.push(AttackExample { features: vec![centre + 0.01 * k as f64], label: m });
            }
        }
        AttackDataset { examples, feature_mode: FeatureMode::Df, class_counts: [30, 30, 30] }
    }

    #[test]
    fn separable_clusters_are_learned() {
        let set = clustered();
        let cfg = TrainConfig { epochs: 200, ..attack_train_config(1) };
        let clf = train_attack(&set, &cfg).unwrap();
        assert!(evaluate(&clf.model, &set.to_dataset().unwrap()).unwrap() >= 0.99);
        assert_eq!(clf, train_attack(&set, &cfg).unwrap());
    }

    #[test]
    fn missing_class_is_an_error() {
        let mut set = clustered();
        set.examples.retain(|e| e.label != Membership::Retain);
        set.class_counts[2] = 0;
        assert!(train_attack(&set, &attack_train_config(0)).is_err());
    }

    #[test]
    fn zero_weights_infer_unseen() {
        let model = ModelParams::zeros(&[2, 32, 16, 3], Activation::Relu).unwrap();
        let clf = AttackClassifier { model, mode: FeatureMode::Cds };
        let a = Posterior::new(vec![0.7, 0.3]).unwrap();
        let (label, post) = infer(&clf, &a, &a, 0).unwrap();
        assert_eq!(label, Membership::Unseen);
        assert!((post.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let cp = AttackClassifier { mode: FeatureMode::Cp, ..clf.clone() };
        let wide = Posterior::new(vec![0.2; 5]).unwrap();
        assert!(infer(&cp, &wide, &wide, 0).is_err());
    }
}
