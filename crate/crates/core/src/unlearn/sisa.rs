use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{ModelParams, Posterior, Predictor};
use crate::rng::{self, derive_seed};
use crate::unlearn::Recipe;

/// Shard-partitioned ensemble (SISA without slicing).
#[derive(Debug, Clone, PartialEq)]
pub struct SisaModel {
    /// Sorted dataset indices held by each shard.
    shards: Vec<Vec<usize>>,
    shard_models: Vec<ModelParams>,
    recipe: Recipe,
}

/// Seed of shard `k` under a base training seed.
pub fn shard_seed(base: u64, shard: usize) -> u64 {
    derive_seed(base, "sisa-shard", shard as u64)
}

/// Shuffles `train` with the recipe seed and deals it round-robin into `num_shards` shards.
pub fn assign_shards(train: &[usize], num_shards: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if num_shards == 0 {
        return Err(Error::config("num_shards must be at least 1"));
    }
    if num_shards > train.len() {
        return Err(Error::config(format!("{num_shards} shards for only {} training rows", train.len())));
    }
    let mut order = train.to_vec();
    order.shuffle(&mut rng::seeded(derive_seed(seed, "sisa-assign", 0), 0));
    let mut shards = vec![Vec::new(); num_shards];
    for (pos, idx) in order.into_iter().enumerate() {
        shards[pos % num_shards].push(idx);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

fn train_shard(recipe: &Recipe, data: &Dataset, shard: &[usize], k: usize) -> Result<ModelParams> {
    if shard.is_empty() {
        return Err(Error::data(format!("shard {k} is empty")));
    }
    recipe.with_seed(shard_seed(recipe.train.seed, k)).fit(&data.subset(shard)?)
}

/// Trains one model per shard of `train`.
pub fn sisa_train(data: &Dataset, train: &[usize], num_shards: usize, recipe: &Recipe) -> Result<SisaModel> {
    let shards = assign_shards(train, num_shards, recipe.train.seed)?;
    sisa_train_with_assignment(data, shards, recipe)
}

/// Trains on an explicit assignment (each inner list is one shard, sorted).
pub fn sisa_train_with_assignment(data: &Dataset, mut shards: Vec<Vec<usize>>, recipe: &Recipe) -> Result<SisaModel> {
    if shards.is_empty() {
        return Err(Error::config("num_shards must be at least 1"));
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    let shard_models = shards.par_iter().enumerate().map(|(k, shard)| train_shard(recipe, data, shard, k)).collect::<Result<Vec<_>>>()?;
    Ok(SisaModel { shards, shard_models, recipe: recipe.clone() })
}

/// Retrains only the shards that hold forgotten rows, with their original seeds.
pub fn sisa_unlearn(model: &SisaModel, data: &Dataset, forget: &[usize]) -> Result<SisaModel> {
    let assignment = model.assignment();
    for i in forget {
        if !assignment.contains_key(i) {
            return Err(Error::data(format!("forget index {i} is not a training row")));
        }
    }
    let mut forget_sorted = forget.to_vec();
    forget_sorted.sort_unstable();
    let new_shards: Vec<Vec<usize>> =
        model.shards.iter().map(|s| s.iter().copied().filter(|i| forget_sorted.binary_search(i).is_err()).collect()).collect();
    let shard_models = model
        .shard_models
        .par_iter()
        .enumerate()
        .map(|(k, old)| {
            if new_shards[k].len() == model.shards[k].len() {
                Ok(old.clone())
            } else {
                train_shard(&model.recipe, data, &new_shards[k], k)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SisaModel { shards: new_shards, shard_models, recipe: model.recipe.clone() })
}

/// Mean of the shard posteriors.
pub fn sisa_predict(model: &SisaModel, x: &[f64]) -> Result<Posterior> {
    let mut acc = vec![0.0; model.num_classes()];
    for m in &model.shard_models {
        for (a, p) in acc.iter_mut().zip(m.posterior(x)?.probs()) {
            *a += p;
        }
    }
    let n = model.shard_models.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Posterior::from_raw(acc))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    num_shards: usize,
    /// train index -> shard id
    assignment: BTreeMap<usize, usize>,
    recipe: Recipe,
    checkpoints: Vec<String>,
}

impl SisaModel {
    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn shard_models(&self) -> &[ModelParams] {
        &self.shard_models
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    /// Train index → shard id.
    pub fn assignment(&self) -> BTreeMap<usize, usize> {
        self.shards.iter().enumerate().flat_map(|(k, s)| s.iter().map(move |&i| (i, k))).collect()
    }

    /// Writes `manifest.json` plus `shard-{k}.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut checkpoints = Vec::new();
        for (k, m) in self.shard_models.iter().enumerate() {
            let name = format!("shard-{k}.ckpt");
            m.write_checkpoint(std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?))?;
            checkpoints.push(name);
        }
        let manifest = Manifest { num_shards: self.num_shards(), assignment: self.assignment(), recipe: self.recipe.clone(), checkpoints };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.checkpoints.len() != manifest.num_shards {
            return Err(Error::data("manifest lists the wrong number of checkpoints"));
        }
        let mut shards = vec![Vec::new(); manifest.num_shards];
        for (i, k) in manifest.assignment {
            shards.get_mut(k).ok_or_else(|| Error::data(format!("shard id {k} out of range")))?.push(i);
        }
        let shard_models = manifest
            .checkpoints
            .iter()
            .map(|name| ModelParams::read_checkpoint(std::io::BufReader::new(std::fs::File::open(dir.join(name))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SisaModel { shards, shard_models, recipe: manifest.recipe })
    }
}

impl Predictor for SisaModel {
    fn input_dim(&self) -> usize {
        self.shard_models[0].input_dim()
    }

    fn num_classes(&self) -> usize {
        self.shard_models[0].num_classes()
    }

    fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        sisa_predict(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::nn::{Activation, ModelParams, TrainConfig};

    fn recipe() -> Recipe {
        Recipe::new(vec![3, 6, 3], Activation::Relu, TrainConfig { epochs: 3, batch_size: 8, seed: 5, ..Default::default() })
    }

    #[test]
    fn round_robin_sizes() {
        let train: Vec<usize> = (0..800).collect();
        let shards = assign_shards(&train, 4, 1).unwrap();
        assert!(shards.iter().all(|s| s.len() == 200));
        assert!(assign_shards(&train[..3], 4, 1).is_err());
        assert!(assign_shards(&train, 0, 1).is_err());
    }

    #[test]
    fn single_shard_equals_full_training() {
        let data = generate_blobs(3, 3, 20, 0.4, 2).unwrap();
        let train: Vec<usize> = (0..60).collect();
        let r = recipe();
        let sisa = sisa_train(&data, &train, 1, &r).unwrap();
        let direct = r.with_seed(shard_seed(r.train.seed, 0)).fit(&data.subset(&train).unwrap()).unwrap();
        assert!(sisa.shard_models()[0].bit_eq(&direct));
        let x = data.row(0);
        assert_eq!(sisa.posterior(x).unwrap(), direct.posterior(x).unwrap());
    }

    #[test]
    fn locality_and_empty_forget() {
        let data = generate_blobs(3, 3, 20, 0.4, 2).unwrap();
        let train: Vec<usize> = (0..60).collect();
        let sisa = sisa_train(&data, &train, 4, &recipe()).unwrap();
        let same = sisa_unlearn(&sisa, &data, &[]).unwrap();
        assert_eq!(same, sisa);
        let victim = sisa.shards()[2][0];
        let after = sisa_unlearn(&sisa, &data, &[victim]).unwrap();
        for k in [0, 1, 3] {
            assert!(after.shard_models()[k].bit_eq(&sisa.shard_models()[k]));
        }
        assert!(!after.shard_models()[2].bit_eq(&sisa.shard_models()[2]));
        assert!(sisa_unlearn(&sisa, &data, &[999]).is_err());
    }

    #[test]
    fn averaging_rule() {
        let a = ModelParams::zeros(&[2, 2], Activation::Relu).unwrap();
        let mut b = a.clone();
        let mut c = a.clone();
        b.biases_mut(0).copy_from_slice(&[50.0, -50.0]);
        c.biases_mut(0).copy_from_slice(&[-50.0, 50.0]);
        let model = SisaModel { shards: vec![vec![0], vec![1]], shard_models: vec![b, c], recipe: recipe() };
        let p = sisa_predict(&model, &[0.0, 0.0]).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-12);
        let uniform = SisaModel { shards: vec![vec![0], vec![1]], shard_models: vec![a.clone(), a], recipe: recipe() };
        assert_eq!(sisa_predict(&uniform, &[1.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
    }

    #[test]
    fn manifest_round_trip() {
        let data = generate_blobs(3, 3, 10, 0.4, 2).unwrap();
        let train: Vec<usize> = (0..24).collect();
        let sisa = sisa_train(&data, &train, 3, &recipe()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sisa.save(dir.path()).unwrap();
        let back = SisaModel::load(dir.path()).unwrap();
        assert_eq!(back.shards(), sisa.shards());
        for (a, b) in back.shard_models().iter().zip(sisa.shard_models()) {
            assert!(a.bit_eq(b));
        }
    }
}
