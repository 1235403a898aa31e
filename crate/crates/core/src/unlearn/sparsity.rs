use crate::data::{Dataset, MembershipSplit};
use crate::error::{Error, Result};
use crate::nn::{train_with_mask, FrozenMask, ModelParams, TrainConfig};

/// Zeroes the `floor(ratio · W)` smallest-magnitude weights across all layers
/// (biases exempt). Ties are broken by flat position: layer order, then row-major.
pub fn magnitude_prune(params: &ModelParams, ratio: f64) -> Result<(ModelParams, FrozenMask)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!("prune ratio must lie in [0, 1], got {ratio}")));
    }
    let mut flat: Vec<(f64, usize, usize)> = Vec::with_capacity(params.num_weights());
    for l in 0..params.num_layers() {
        for (k, w) in params.weights(l).iter().enumerate() {
            flat.push((w.abs(), l, k));
        }
    }
    let count = (ratio * flat.len() as f64 + 1e-9).floor() as usize;
    // stable sort keeps flat order among equal magnitudes
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut frozen: Vec<Vec<bool>> = (0..params.num_layers()).map(|l| vec![false; params.weights(l).len()]).collect();
    let mut pruned = params.clone();
    for &(_, l, k) in &flat[..count] {
        frozen[l][k] = true;
        pruned.weights_mut(l)[k] = 0.0;
    }
    Ok((pruned, FrozenMask { frozen }))
}

/// One-shot global magnitude pruning, then fine-tuning on the retain set
/// with pruned weights held at zero.
pub fn sparsity_unlearn(
    params: &ModelParams,
    data: &Dataset,
    split: &MembershipSplit,
    prune_ratio: f64,
    finetune_epochs: usize,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let (pruned, mask) = magnitude_prune(params, prune_ratio)?;
    if finetune_epochs == 0 {
        return Ok(pruned);
    }
    if split.retain.is_empty() {
        return Err(Error::data("cannot fine-tune on an empty retain set"));
    }
    let ft = TrainConfig { epochs: finetune_epochs, ..cfg.clone() };
    train_with_mask(&pruned, &data.subset(&split.retain)?, &ft, Some(&mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, make_membership_split};
    use crate::nn::{init_model, Activation};

    #[test]
    fn zero_ratio_no_finetune_is_identity() {
        let data = generate_blobs(2, 4, 10, 0.5, 1).unwrap();
        let split = make_membership_split(data.len(), 0.8, 0.1, 1).unwrap();
        let p = init_model(&[4, 5, 2], Activation::Relu, 3).unwrap();
        let q = sparsity_unlearn(&p, &data, &split, 0.0, 0, &TrainConfig::default()).unwrap();
        assert!(q.bit_eq(&p));
    }

    #[test]
    fn prunes_exactly_half_of_hundred() {
        // 10×5 + 5×10 = 100 weights
        let mut p = init_model(&[5, 10, 5], Activation::Relu, 3).unwrap();
        assert_eq!(p.num_weights(), 100);
        // plant ties: the first 60 flat weights share one magnitude
        for k in 0..50 {
            p.weights_mut(0)[k] = if k % 2 == 0 { 0.5 } else { -0.5 };
        }
        for k in 0..10 {
            p.weights_mut(1)[k] = 0.5;
        }
        for k in 10..50 {
            p.weights_mut(1)[k] = 1.0 + k as f64;
        }
        let (q, mask) = magnitude_prune(&p, 0.5).unwrap();
        let zeros = (0..2).flat_map(|l| q.weights(l).to_vec()).filter(|w| *w == 0.0).count();
        assert_eq!(zeros, 50);
        assert_eq!(mask.count(), 50);
        // ties resolved by flat order: all of layer 0 goes first
        assert!(q.weights(0).iter().all(|w| *w == 0.0));
        assert!(q.weights(1)[..10].iter().all(|w| *w == 0.5));
        assert_eq!(q.biases(0), p.biases(0));
    }

    #[test]
    fn pruned_positions_survive_finetuning() {
        let data = generate_blobs(3, 4, 30, 0.5, 1).unwrap();
        let split = make_membership_split(data.len(), 0.8, 0.1, 1).unwrap();
        let p = init_model(&[4, 8, 3], Activation::Relu, 3).unwrap();
        let (_, mask) = magnitude_prune(&p, 0.5).unwrap();
        let cfg = TrainConfig { batch_size: 8, ..Default::default() };
        let q = sparsity_unlearn(&p, &data, &split, 0.5, 3, &cfg).unwrap();
        for l in 0..q.num_layers() {
            for (k, w) in q.weights(l).iter().enumerate() {
                if mask.is_frozen(l, k) {
                    assert_eq!(*w, 0.0);
                }
            }
        }
        assert!(magnitude_prune(&p, 1.5).is_err());
    }
}
