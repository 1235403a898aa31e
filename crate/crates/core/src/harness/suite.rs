use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::{run_experiment_to, ExperimentConfig};
use crate::metrics::AggregateReport;

/// Column set of the suite table, in order.
pub const SUITE_COLUMNS: [&str; 25] = [
    "name",
    "method",
    "feature_mode",
    "defense",
    "seed",
    "status",
    "error",
    "micro_f1",
    "macro_f1",
    "f1_unseen",
    "f1_forget",
    "f1_retain",
    "tpr_unseen",
    "tpr_forget",
    "tpr_retain",
    "two_round",
    "uleak",
    "mia_retain_pre",
    "mia_retain_post",
    "train_acc",
    "test_acc",
    "ua",
    "ra",
    "ta",
    "epsilon",
];

const METRIC_KEYS: [&str; 18] = [
    "micro_f1",
    "macro_f1",
    "f1.unseen",
    "f1.forget",
    "f1.retain",
    "tpr.unseen",
    "tpr.forget",
    "tpr.retain",
    "baseline.two_round",
    "baseline.uleak",
    "mia_retain.pre",
    "mia_retain.post",
    "utility.train_acc",
    "utility.test_acc",
    "utility.ua",
    "utility.ra",
    "utility.ta",
    "epsilon",
];

/// One grid entry: a parsed config, or the reason it could not be parsed.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub config: std::result::Result<ExperimentConfig, String>,
}

/// Parses a grid file: a TOML document with one `[[experiment]]` table per
/// config. A malformed entry becomes an error entry instead of failing the file.
pub fn parse_grid(text: &str) -> Result<Vec<SuiteEntry>> {
    let doc: toml::Table = toml::from_str(text)?;
    let items = match doc.get("experiment") {
        Some(toml::Value::Array(a)) => a.clone(),
        _ => return Err(Error::config("grid file needs at least one [[experiment]] table")),
    };
    if items.is_empty() {
        return Err(Error::config("grid file needs at least one [[experiment]] table"));
    }
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let name = v.get("name").and_then(|n| n.as_str()).map(str::to_string).unwrap_or_else(|| format!("experiment-{k}"));
            let config = v
                .try_into::<ExperimentConfig>()
                .map_err(|e| e.to_string())
                .and_then(|c| c.validate().map(|_| c).map_err(|e| e.to_string()));
            SuiteEntry { name, config }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub cells: Vec<String>,
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn error_row(name: &str, err: &str) -> SuiteRow {
    let mut cells = vec![String::new(); SUITE_COLUMNS.len()];
    cells[0] = name.to_string();
    cells[5] = "error".into();
    cells[6] = err.replace(['\n', '\r'], " ");
    SuiteRow { cells }
}

fn rows_for(cfg: &ExperimentConfig, out: &crate::harness::ExperimentOutcome) -> Vec<SuiteRow> {
    let head = |seed: String| {
        vec![
            cfg.name.clone(),
            cfg.unlearn.method.name().into(),
            cfg.effective_mode().to_string(),
            cfg.defense.label(),
            seed,
            "ok".into(),
            String::new(),
        ]
    };
    let mut rows: Vec<SuiteRow> = out
        .reports
        .iter()
        .map(|r| {
            let s = r.scalars();
            let mut cells = head(r.seed.to_string());
            cells.extend(METRIC_KEYS.iter().map(|k| fmt(s.get(*k).copied())));
            SuiteRow { cells }
        })
        .collect();
    let agg: &AggregateReport = &out.aggregate;
    let mut cells = head("median".into());
    cells.extend(METRIC_KEYS.iter().map(|k| fmt(agg.median(k))));
    rows.push(SuiteRow { cells });
    rows
}

/// Runs every entry (in parallel, isolated from each other) and returns the
/// table rows in entry order: per-seed rows plus a median row for each
/// successful config, one error row for each failed one.
pub fn run_suite(entries: &[SuiteEntry], out_root: Option<&Path>) -> Result<Vec<SuiteRow>> {
    if entries.is_empty() {
        return Err(Error::config("a suite needs at least one config"));
    }
    let blocks: Vec<Vec<SuiteRow>> = entries
        .par_iter()
        .map(|e| match &e.config {
            Err(msg) => vec![error_row(&e.name, msg)],
            Ok(cfg) => {
                let dir = out_root.map(|r| r.join(&cfg.name));
                match run_experiment_to(cfg, dir.as_deref()) {
                    Ok(out) => rows_for(cfg, &out),
                    Err(err) => vec![error_row(&e.name, &err.to_string())],
                }
            }
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

pub fn write_suite_csv<W: Write>(w: W, rows: &[SuiteRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUITE_COLUMNS)?;
    for r in rows {
        out.write_record(&r.cells)?;
    }
    out.flush()?;
    Ok(())
}
