use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::attack::{attack_train_config, infer, train_attack, two_round_attack, uleak_attack, AttackClassifier, BinaryMia, FeatureMode};
use crate::data::{
    balance_ratio_sample, collect_shadow_pairs, generate_blobs, make_membership_split, split_target_shadow, AttackDataset, Dataset,
    EvalTriple, Membership, MembershipSplit, PairRecord, ENCODING_LEGEND,
};
use crate::defense::{compute_epsilon, privacy_ledger, DpConfig, OutputPolicy, PrivacyLedger};
use crate::error::{Error, Result, StageExt};
use crate::harness::{DefenseKind, ExperimentConfig, ShadowRelation};
use crate::metrics::{
    aggregate_reports, confusion, macro_f1, micro_f1, overfitting_degree, per_class_f1, separability_report, tpr_at_fpr, AggregateReport,
    ExperimentReport, MiaRetainAccuracy, ModelUtility,
};
use crate::nn::{evaluate_on, Posterior, Predictor, TrainConfig};
use crate::rng::derive_seed;
use crate::unlearn::{Deployed, PipelineRun};

/// Target and shadow datasets of one seed.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let all = generate_blobs(d.classes, d.dim, d.per_class, d.spread, d.seed)?;
    let (target, shadow) = split_target_shadow(&all, d.target_fraction, derive_seed(seed, "target-shadow", 0))?;
    match d.shadow_relation {
        ShadowRelation::Disjoint => Ok((target, shadow)),
        ShadowRelation::Shifted => {
            let other = generate_blobs(d.classes, d.dim, d.per_class, d.spread, d.shifted_seed)?;
            let (_, shifted) = split_target_shadow(&other, d.target_fraction, derive_seed(seed, "target-shadow", 0))?;
            Ok((target, shifted))
        }
    }
}

/// The target data and its membership split for `seed`, without training.
pub fn target_split(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, MembershipSplit)> {
    let (target, _) = prepare_data(cfg, seed).stage("prepare_data")?;
    let split_seed = derive_seed(derive_seed(seed, "target", 0), "split", 0);
    let split =
        make_membership_split(target.len(), cfg.dataset.train_fraction, cfg.forget_fraction, split_seed).stage("make_membership_split")?;
    Ok((target, split))
}

/// Everything one seed of an experiment produces before scoring.
pub struct SeedRun {
    pub target: Dataset,
    pub run: PipelineRun,
    pub eval: EvalTriple,
    pub target_pairs: Vec<PairRecord>,
    pub shadow_pairs: Vec<PairRecord>,
}

fn apply_policy(mut pairs: Vec<PairRecord>, policy: OutputPolicy) -> Vec<PairRecord> {
    if policy != OutputPolicy::Full {
        for p in &mut pairs {
            p.p_orig = policy.apply(std::mem::replace(&mut p.p_orig, Posterior::uniform(1)));
            p.p_unl = policy.apply(std::mem::replace(&mut p.p_unl, Posterior::uniform(1)));
        }
    }
    pairs
}

/// Trains target and shadow pipelines and queries both models on the
/// evaluation sample and the shadow attack sample.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let (target, shadow) = prepare_data(cfg, seed).stage("prepare_data")?;
    let run = cfg.target_pipeline()?.run(&target, derive_seed(seed, "target", 0))?;
    let eval = balance_ratio_sample(&run.split, cfg.attack.class_ratio, derive_seed(seed, "eval", 0)).stage("balance_ratio_sample")?;
    let policy = cfg.defense.output_policy();
    let target_pairs = eval
        .labeled()
        .into_iter()
        .map(|(i, m)| PairRecord::query(&run.original, &run.unlearned, &target, i, m))
        .collect::<Result<Vec<_>>>()
        .stage("query_target")?;
    let shadow_pairs = collect_shadow_pairs(&shadow, &cfg.shadow_pipeline()?, cfg.attack.repetitions, derive_seed(seed, "shadow", 0))?
        .into_iter()
        .flatten()
        .collect();
    Ok(SeedRun { target, run, eval, target_pairs: apply_policy(target_pairs, policy), shadow_pairs: apply_policy(shadow_pairs, policy) })
}

/// Attack decisions on a sample, with the raw posteriors.
pub struct AttackOutcome {
    pub predictions: Vec<Membership>,
    pub scores: Vec<[f64; 3]>,
}

pub fn evaluate_attack(classifier: &AttackClassifier, pairs: &[PairRecord]) -> Result<AttackOutcome> {
    let mut predictions = Vec::with_capacity(pairs.len());
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (m, post) = infer(classifier, &p.p_orig, &p.p_unl, p.label)?;
        predictions.push(m);
        let s = post.probs();
        scores.push([s[0], s[1], s[2]]);
    }
    Ok(AttackOutcome { predictions, scores })
}

fn truth(pairs: &[PairRecord]) -> Vec<usize> {
    pairs.iter().map(|p| p.membership.label()).collect()
}

fn micro_of(preds: &[Membership], pairs: &[PairRecord]) -> Result<f64> {
    let p: Vec<usize> = preds.iter().map(|m| m.label()).collect();
    micro_f1(&confusion(&p, &truth(pairs))?)
}

fn attack_cfg(cfg: &ExperimentConfig, seed: u64, tag: &str) -> TrainConfig {
    TrainConfig { epochs: cfg.attack.epochs, ..attack_train_config(derive_seed(seed, tag, 0)) }
}

fn train_and_score(cfg: &ExperimentConfig, seed: u64, sr: &SeedRun, mode: FeatureMode) -> Result<f64> {
    let set = AttackDataset::from_pairs(&sr.shadow_pairs, mode)?;
    let clf = train_attack(&set, &attack_cfg(cfg, seed, "attack"))?;
    micro_of(&evaluate_attack(&clf, &sr.target_pairs)?.predictions, &sr.target_pairs)
}

fn accuracy(model: &Deployed, data: &Dataset, idx: &[usize]) -> Result<f64> {
    evaluate_on(model, data, idx)
}

/// Binary MIA trained on shadow outputs of the original models, then applied
/// to the target retain rows of both model versions.
pub fn mia_retain_accuracy(cfg: &ExperimentConfig, seed: u64, sr: &SeedRun) -> Result<(MiaRetainAccuracy, BinaryMia, BinaryMia)> {
    let mia_cfg = TrainConfig { epochs: cfg.attack.epochs, ..attack_train_config(derive_seed(seed, "mia", 0)) };
    let mia_orig = BinaryMia::from_pairs(&sr.shadow_pairs, true, &mia_cfg)?;
    let mia_unl = BinaryMia::from_pairs(&sr.shadow_pairs, false, &mia_cfg)?;
    let policy = cfg.defense.output_policy();
    let (mut pre, mut post) = (0usize, 0usize);
    let retain = &sr.run.split.retain;
    for &i in retain {
        let x = sr.target.row(i);
        if mia_orig.is_member(&policy.apply(sr.run.original.posterior(x)?))? {
            pre += 1;
        }
        if mia_orig.is_member(&policy.apply(sr.run.unlearned.posterior(x)?))? {
            post += 1;
        }
    }
    let n = retain.len() as f64;
    Ok((MiaRetainAccuracy { pre: pre as f64 / n, post: post as f64 / n }, mia_orig, mia_unl))
}

/// Achieved ε of the original model's DP training, with its ledger.
pub fn dp_accounting(cfg: &ExperimentConfig, train_rows: usize) -> Result<Option<(f64, PrivacyLedger)>> {
    if cfg.defense.kind != DefenseKind::Dp {
        return Ok(None);
    }
    let pipeline = cfg.target_pipeline()?;
    let settings = pipeline.original.dp.as_ref().ok_or_else(|| Error::config("dp settings missing"))?;
    let dp = DpConfig::resolve(settings, &pipeline.original.train, train_rows)?;
    let eps = compute_epsilon(dp.noise_multiplier, dp.total_steps(train_rows).max(1), dp.sampling_rate(train_rows)?, dp.target_delta)?;
    Ok(Some((eps, privacy_ledger(&dp, train_rows)?)))
}

/// Scored output of one seed.
pub struct SeedResult {
    pub report: ExperimentReport,
    pub pairs: Vec<PairRecord>,
    pub outcome: AttackOutcome,
    pub ledger: Option<PrivacyLedger>,
}

pub fn score_seed(cfg: &ExperimentConfig, seed: u64, sr: &SeedRun) -> Result<SeedResult> {
    let mode = cfg.effective_mode();
    let set = AttackDataset::from_pairs(&sr.shadow_pairs, mode)?;
    let clf = train_attack(&set, &attack_cfg(cfg, seed, "attack")).stage("train_attack")?;
    let outcome = evaluate_attack(&clf, &sr.target_pairs).stage("infer")?;
    let t = truth(&sr.target_pairs);
    let preds: Vec<usize> = outcome.predictions.iter().map(|m| m.label()).collect();
    let cm = confusion(&preds, &t)?;
    let per_class = per_class_f1(&cm)?;
    let mut tpr = [None; 3];
    for (k, slot) in tpr.iter_mut().enumerate() {
        *slot = tpr_at_fpr(&outcome.scores, &t, k, cfg.attack.fpr_budget).ok();
    }

    let split = &sr.run.split;
    let utility = ModelUtility {
        train_acc: accuracy(&sr.run.original, &sr.target, &split.train)?,
        test_acc: accuracy(&sr.run.original, &sr.target, &split.test)?,
        ua: accuracy(&sr.run.unlearned, &sr.target, &split.forget)?,
        ra: accuracy(&sr.run.unlearned, &sr.target, &split.retain)?,
        ta: accuracy(&sr.run.unlearned, &sr.target, &split.test)?,
    };

    let mut baselines = BTreeMap::new();
    let mut mia = None;
    if cfg.attack.baselines {
        let (retain_acc, mia_orig, mia_unl) = mia_retain_accuracy(cfg, seed, sr).stage("binary_mia")?;
        mia = Some(retain_acc);
        let two: Vec<Membership> =
            sr.target_pairs.iter().map(|p| two_round_attack(&mia_orig, &mia_unl, &p.p_orig, &p.p_unl)).collect::<Result<_>>()?;
        baselines.insert("two_round".to_string(), micro_of(&two, &sr.target_pairs)?);
        let uleak = uleak_attack(&sr.shadow_pairs, &attack_cfg(cfg, seed, "uleak")).stage("uleak")?;
        baselines.insert("uleak".to_string(), micro_of(&evaluate_attack(&uleak, &sr.target_pairs)?.predictions, &sr.target_pairs)?);
    }

    let mut ablation = BTreeMap::new();
    for &m in &cfg.attack.ablation_modes {
        let f1 = if m == mode { micro_f1(&cm)? } else { train_and_score(cfg, seed, sr, m).stage("ablation")? };
        ablation.insert(m.to_string(), f1);
    }

    let separability =
        if cfg.attack.separability { Some(separability_report(&sr.run.original, &sr.run.unlearned, &sr.eval, &sr.target)?) } else { None };
    let dp = dp_accounting(cfg, split.train.len())?;

    let report = ExperimentReport {
        name: cfg.name.clone(),
        legend: ENCODING_LEGEND.to_string(),
        config_digest: cfg.digest(),
        seed,
        method: cfg.unlearn.method.name().to_string(),
        feature_mode: mode.to_string(),
        defense: cfg.defense.label(),
        eval_sizes: [sr.eval.unseen.len(), sr.eval.forget.len(), sr.eval.retain.len()],
        micro_f1: micro_f1(&cm)?,
        macro_f1: macro_f1(&per_class),
        per_class_f1: per_class,
        fpr_budget: cfg.attack.fpr_budget,
        tpr_at_fpr: tpr,
        confusion: cm,
        overfitting_original: overfitting_degree(utility.train_acc, utility.test_acc),
        overfitting_unlearned: overfitting_degree(utility.ra, utility.ta),
        utility,
        baselines,
        ablation,
        mia_retain_accuracy: mia,
        separability,
        epsilon: dp.as_ref().map(|d| d.0),
    };
    Ok(SeedResult { report, pairs: sr.target_pairs.clone(), outcome, ledger: dp.map(|d| d.1) })
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let sr = prepare_seed(cfg, seed)?;
    score_seed(cfg, seed, &sr)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Per-example predictions: `index,true_set,predicted_set,p0,p1,p2`.
pub fn write_predictions<W: Write>(w: W, pairs: &[PairRecord], outcome: &AttackOutcome) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "true_set", "predicted_set", "p0", "p1", "p2"])?;
    for ((p, m), s) in pairs.iter().zip(&outcome.predictions).zip(&outcome.scores) {
        out.write_record([
            p.index.to_string(),
            p.membership.label().to_string(),
            m.label().to_string(),
            format!("{:?}", s[0]),
            format!("{:?}", s[1]),
            format!("{:?}", s[2]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_seed_outputs(dir: &Path, result: &SeedResult) -> Result<()> {
    let d = dir.join(format!("seed-{}", result.report.seed));
    fs::create_dir_all(&d)?;
    write_json(&d.join("report.json"), &result.report)?;
    write_predictions(fs::File::create(d.join("predictions.csv"))?, &result.pairs, &result.outcome)?;
    let mut cm = Vec::new();
    writeln!(cm, "# config_digest={}", result.report.config_digest)?;
    result.report.confusion.write_csv(&mut cm)?;
    fs::write(d.join("confusion.csv"), cm)?;
    if let Some(l) = &result.ledger {
        write_json(&d.join("privacy_ledger.json"), l)?;
    }
    Ok(())
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<ExperimentReport>,
    pub aggregate: AggregateReport,
}

/// Runs every seed of `cfg`; writes outputs when `out_dir` is given.
pub fn run_experiment_to(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    for &seed in &cfg.seeds {
        let result = run_seed(cfg, seed)?;
        if let Some(dir) = out_dir {
            write_seed_outputs(dir, &result)?;
        }
        reports.push(result.report);
    }
    let aggregate = aggregate_reports(&reports)?;
    if let Some(dir) = out_dir {
        write_json(&dir.join("aggregate.json"), &aggregate)?;
    }
    Ok(ExperimentOutcome { reports, aggregate })
}

/// Runs `cfg` and writes reports under its resolved output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_to(cfg, Some(&cfg.resolved_output_dir()))
}

/// Re-reads `seed-*/report.json` under `dir` and rewrites `aggregate.json`.
pub fn rerender_report(dir: &Path) -> Result<AggregateReport> {
    let mut paths: Vec<_> =
        fs::read_dir(dir)?.filter_map(|e| e.ok()).map(|e| e.path().join("report.json")).filter(|p| p.is_file()).collect();
    paths.sort();
    let mut reports: Vec<ExperimentReport> =
        paths.iter().map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?)).collect::<Result<_>>()?;
    reports.sort_by_key(|r| r.seed);
    let agg = aggregate_reports(&reports)?;
    write_json(&dir.join("aggregate.json"), &agg)?;
    Ok(agg)
}

/// The membership game against the trained tri-class attack of `seed`,
/// drawing from the full unseen, forget and retain sets of the target split.
pub fn attack_game(cfg: &ExperimentConfig, seed: u64, trials: usize) -> Result<crate::harness::GameResult> {
    let sr = prepare_seed(cfg, seed)?;
    let set = AttackDataset::from_pairs(&sr.shadow_pairs, cfg.effective_mode())?;
    let clf = train_attack(&set, &attack_cfg(cfg, seed, "attack")).stage("train_attack")?;
    let pools = EvalTriple::from_split(&sr.run.split);
    let policy = cfg.defense.output_policy();
    crate::harness::play_game(&pools, trials, derive_seed(seed, "game", 0), |z| {
        let x = sr.target.row(z);
        let (m, _) =
            infer(&clf, &policy.apply(sr.run.original.posterior(x)?), &policy.apply(sr.run.unlearned.posterior(x)?), sr.target.label(z))?;
        Ok(m)
    })
}
