use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
seeds = [2]
forget_fraction = 0.05

[dataset]
classes = 3
dim = 5
per_class = 60
spread = 0.8

[model]
hidden = [16]

[train]
epochs = 10
batch_size = 16
learning_rate = 0.01

[attack]
repetitions = 2
epochs = 30
"#;

fn unlearnlab(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearnlab"))
        .env_remove("UNLEARNLAB_OUTPUT_ROOT")
        .arg("--output-root")
        .arg(root)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = unlearnlab(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let exp = dir.path().join("out/tiny");
    assert!(exp.join("seed-2/report.json").is_file());
    assert!(exp.join("aggregate.json").is_file());
    let before = fs::read(exp.join("aggregate.json")).unwrap();

    fs::remove_file(exp.join("aggregate.json")).unwrap();
    let out = unlearnlab(dir.path(), &["report", exp.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("micro_f1"));
    assert_eq!(fs::read(exp.join("aggregate.json")).unwrap(), before);
}

#[test]
fn game_adversaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let path = cfg.to_str().unwrap();
    let oracle = unlearnlab(dir.path(), &["game", path, "--adversary", "oracle", "--trials", "3000"]);
    assert!(oracle.status.success());
    assert!(stdout(&oracle).contains("rate 1.0000"), "{}", stdout(&oracle));

    let constant = unlearnlab(dir.path(), &["game", path, "--adversary", "constant", "--trials", "3000"]);
    let text = stdout(&constant);
    let rate: f64 = text.split("rate ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((rate - 1.0 / 3.0).abs() < 0.04, "{rate}");
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seeds = []\n").unwrap();
    let out = unlearnlab(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.toml", "low-overfit.toml"] {
        unlearnlab::harness::ExperimentConfig::load(&dir.join(name)).unwrap();
    }
    for name in ["defenses.toml", "methods.toml"] {
        let entries = unlearnlab::harness::parse_grid(&fs::read_to_string(dir.join(name)).unwrap()).unwrap();
        for e in entries {
            assert!(e.config.is_ok(), "{name}/{}: {:?}", e.name, e.config.err());
        }
    }
}
