use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{derive_features, FeatureMode};
use crate::data::{Dataset, Membership, ENCODING_LEGEND};
use crate::error::{Error, Result, StageExt};
use crate::nn::{Posterior, Predictor};
use crate::rng::{self, derive_seed, stream};
use crate::unlearn::PipelineSpec;

/// Outputs of the original and unlearned models on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub p_orig: Posterior,
    pub p_unl: Posterior,
    pub label: usize,
    pub membership: Membership,
}

impl PairRecord {
    pub fn query<M: Predictor + ?Sized>(original: &M, unlearned: &M, data: &Dataset, index: usize, membership: Membership) -> Result<Self> {
        Ok(PairRecord {
            index,
            p_orig: original.posterior(data.row(index))?,
            p_unl: unlearned.posterior(data.row(index))?,
            label: data.label(index),
            membership,
        })
    }

    pub fn features(&self, mode: FeatureMode) -> Result<Vec<f64>> {
        derive_features(&self.p_orig, &self.p_unl, self.label, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackExample {
    pub features: Vec<f64>,
    pub label: Membership,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub examples: Vec<AttackExample>,
    pub feature_mode: FeatureMode,
    /// Counts of unseen, forget and retain examples.
    pub class_counts: [usize; 3],
}

impl AttackDataset {
    pub fn from_pairs(pairs: &[PairRecord], mode: FeatureMode) -> Result<Self> {
        let mut class_counts = [0; 3];
        let examples = pairs
            .iter()
            .map(|p| {
                class_counts[p.membership.label()] += 1;
                Ok(AttackExample { features: p.features(mode)?, label: p.membership })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttackDataset { examples, feature_mode: mode, class_counts })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.len())
    }

    /// Features as a 3-class dataset ready for training.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let dim = self.feature_dim().ok_or_else(|| Error::data("attack dataset is empty"))?;
        let mut features = Vec::with_capacity(dim * self.len());
        for e in &self.examples {
            features.extend_from_slice(&e.features);
        }
        let labels = self.examples.iter().map(|e| e.label.label()).collect();
        Dataset::new(features, dim, labels, 3, "attack", 0)
    }

    /// CSV with `#` comment lines naming the feature mode and label legend.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# feature_mode={}", self.feature_mode)?;
        writeln!(w, "# legend={ENCODING_LEGEND}")?;
        let mut out = csv::Writer::from_writer(w);
        let dim = self.feature_dim().unwrap_or(0);
        let mut header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
        header.push("label".into());
        out.write_record(&header)?;
        for e in &self.examples {
            let mut rec: Vec<String> = e.features.iter().map(|v| format!("{v:?}")).collect();
            rec.push(e.label.label().to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut mode = None;
        let mut body = String::new();
        let mut line = String::new();
        while reader.read_line(&mut line)? > 0 {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(m) = comment.trim().strip_prefix("feature_mode=") {
                    mode = Some(m.parse::<FeatureMode>()?);
                } else if let Some(l) = comment.trim().strip_prefix("legend=") {
                    if l != ENCODING_LEGEND {
                        return Err(Error::data(format!("unsupported label legend {l:?}")));
                    }
                }
            } else {
                body.push_str(&line);
            }
            line.clear();
        }
        let mode = mode.ok_or_else(|| Error::data("attack CSV lacks a feature_mode header"))?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut class_counts = [0; 3];
        let mut examples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let n = rec.len();
            if n == 0 {
                continue;
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::data(format!("bad number {s:?}: {e}")));
            let features = rec.iter().take(n - 1).map(parse).collect::<Result<Vec<_>>>()?;
            let label = rec[n - 1].trim().parse::<usize>().map_err(|e| Error::data(e.to_string()))?;
            let label = Membership::from_label(label)?;
            class_counts[label.label()] += 1;
            examples.push(AttackExample { features, label });
        }
        Ok(AttackDataset { examples, feature_mode: mode, class_counts })
    }
}

fn shadow_repetition(shadow: &Dataset, pipeline: &PipelineSpec, rep_seed: u64) -> Result<Vec<PairRecord>> {
    let run = pipeline.run(shadow, rep_seed)?;
    let k = run.split.forget.len();
    if run.split.retain.len() < k || run.split.unseen.len() < k {
        return Err(Error::config(format!(
            "shadow set too small: need {k} retain and unseen rows, have {} and {}",
            run.split.retain.len(),
            run.split.unseen.len()
        )));
    }
    let mut rng = rng::seeded(derive_seed(rep_seed, "shadow-sample", 0), stream::SHUFFLE);
    let mut pick = |pool: &[usize]| {
        let mut v: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        v.sort_unstable();
        v
    };
    let unseen = pick(&run.split.unseen);
    let retain = pick(&run.split.retain);
    let mut out = Vec::with_capacity(3 * k);
    for (set, m) in [(&unseen, Membership::Unseen), (&run.split.forget, Membership::Forget), (&retain, Membership::Retain)] {
        for &i in set.iter() {
            out.push(PairRecord::query(&run.original, &run.unlearned, shadow, i, m)?);
        }
    }
    Ok(out)
}

/// Runs `repetitions` independent shadow pipelines (fresh split and models
/// each time) and returns equal numbers of unseen, forget and retain records
/// per repetition.
pub fn collect_shadow_pairs(shadow: &Dataset, pipeline: &PipelineSpec, repetitions: usize, seed: u64) -> Result<Vec<Vec<PairRecord>>> {
    if repetitions == 0 {
        return Err(Error::config("repetitions must be at least 1"));
    }
    (0..repetitions)
        .into_par_iter()
        .map(|r| shadow_repetition(shadow, pipeline, derive_seed(seed, "shadow-rep", r as u64)))
        .collect::<Result<Vec<_>>>()
        .stage("collect_shadow_pairs")
}

pub fn build_attack_training_set(
    shadow: &Dataset,
    pipeline: &PipelineSpec,
    repetitions: usize,
    seed: u64,
    mode: FeatureMode,
) -> Result<AttackDataset> {
    let pairs: Vec<PairRecord> = collect_shadow_pairs(shadow, pipeline, repetitions, seed)?.into_iter().flatten().collect();
    AttackDataset::from_pairs(&pairs, mode)
}
