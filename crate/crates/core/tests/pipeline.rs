use std::fs;

use unlearnlab::harness::{parse_grid, run_experiment_to, run_suite, write_suite_csv, ExperimentConfig, SUITE_COLUMNS};
use unlearnlab::metrics::ExperimentReport;

const TINY: &str = r#"
name = "tiny"
seeds = [1]
forget_fraction = 0.05

[dataset]
classes = 3
dim = 5
per_class = 60
spread = 0.8

[model]
hidden = [16]

[train]
epochs = 15
batch_size = 16
learning_rate = 0.01

[attack]
repetitions = 2
epochs = 40
ablation_modes = ["cp"]
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).unwrap()
}

#[test]
fn runs_are_byte_identical() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment_to(&cfg, Some(a.path())).unwrap();
    run_experiment_to(&cfg, Some(b.path())).unwrap();
    for file in ["seed-1/report.json", "seed-1/predictions.csv", "seed-1/confusion.csv", "aggregate.json", "config.toml"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn report_fields_are_consistent() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment_to(&cfg, Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("seed-1/report.json")).unwrap();
    let report: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report, out.reports[0]);
    assert_eq!(report.legend, "0=unseen,1=forget,2=retain");
    assert_eq!(report.config_digest, cfg.digest());
    let total: u64 = report.confusion.counts.iter().flatten().sum();
    let trace: u64 = (0..3).map(|k| report.confusion.counts[k][k]).sum();
    assert_eq!(report.micro_f1, trace as f64 / total as f64);
    // balanced evaluation: one third per class
    for row in report.confusion.counts {
        assert_eq!(row.iter().sum::<u64>() * 3, total);
    }
    assert!(report.ablation.contains_key("cp"));
    assert!(report.baselines.contains_key("two_round"));

    let preds = fs::read_to_string(dir.path().join("seed-1/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count() as u64, total + 1);
}

#[test]
fn empty_retain_set_fails_at_split_stage() {
    let mut cfg = tiny();
    cfg.forget_fraction = 1.0;
    let err = run_experiment_to(&cfg, None).unwrap_err().to_string();
    assert!(err.contains("make_membership_split"), "{err}");
}

#[test]
fn suite_keeps_going_past_a_broken_config() {
    let mut grid = String::new();
    for (name, extra) in [("a", ""), ("b", "\n[unlearn]\nmethod = \"ga\"\n")] {
        let body = TINY.replace("name = \"tiny\"", &format!("name = \"{name}\""));
        grid.push_str("[[experiment]]\n");
        for line in body.lines().chain(extra.lines()) {
            let line = line.trim();
            if let Some(section) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                grid.push_str(&format!("[experiment.{section}]\n"));
            } else {
                grid.push_str(line);
                grid.push('\n');
            }
        }
    }
    grid.push_str("[[experiment]]\nname = \"broken\"\nforget_fraction = \"lots\"\n");
    let entries = parse_grid(&grid).unwrap();
    assert_eq!(entries.len(), 3);
    let out = tempfile::tempdir().unwrap();
    let rows = run_suite(&entries, Some(out.path())).unwrap();
    let ok: Vec<_> = rows.iter().filter(|r| r.cells[5] == "ok" && r.cells[4] != "median").collect();
    let errors: Vec<_> = rows.iter().filter(|r| r.cells[5] == "error").collect();
    assert_eq!(ok.len(), 2);
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].cells[0], "broken");
    assert_eq!(ok[1].cells[1], "ga");
    assert!(out.path().join("a/seed-1/report.json").is_file());

    let mut buf = Vec::new();
    write_suite_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), SUITE_COLUMNS.join(","));
    assert_eq!(text.lines().count(), rows.len() + 1);
}
