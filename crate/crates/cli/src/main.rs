use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use unlearnlab::data::{EvalTriple, Membership};
use unlearnlab::harness::{
    attack_game, oracle_adversary, parse_grid, play_game, rerender_report, run_experiment, run_suite, run_ulira, target_split,
    write_suite_csv, ExperimentConfig, GameResult, OUTPUT_ROOT_ENV,
};
use unlearnlab::metrics::AggregateReport;
use unlearnlab::rng::derive_seed;

#[derive(Parser)]
#[command(name = "unlearnlab", version, about = "Membership inference against machine unlearning, at desk scale")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write per-seed reports plus an aggregate.
    Run {
        config: PathBuf,
        /// Replace the config's seeds with this one.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every [[experiment]] of a grid file and write a joined CSV.
    Suite {
        grid: PathBuf,
        /// Where to write the table; defaults to <output-root>/suite.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Play the membership game.
    Game {
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Adversary::Attack)]
        adversary: Adversary,
    },
    /// Fit the likelihood-ratio attack on shadow trials and score it on the target.
    Ulira {
        config: PathBuf,
        #[arg(long, default_value_t = 32)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-aggregate the seed reports found in an output directory.
    Report { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Adversary {
    /// The trained tri-class attack.
    Attack,
    /// Always answers "unseen".
    Constant,
    /// Reads the true membership.
    Oracle,
}

fn load(path: &Path, seed: Option<u64>, root: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(root) = root {
        let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
        if dir.is_relative() {
            cfg.output_dir = Some(std::path::absolute(root.join(dir))?);
        }
    }
    Ok(cfg)
}

fn print_aggregate(agg: &AggregateReport) {
    println!("{} (seeds {:?}, config {})", agg.name, agg.seeds, &agg.config_digest[..12.min(agg.config_digest.len())]);
    for (k, s) in &agg.metrics {
        println!("  {k:<32} median {:.4}  mean {:.4}", s.median, s.mean);
    }
}

fn print_game(g: &GameResult) {
    println!("trials {}  successes {}  rate {:.4}", g.trials, g.successes, g.success_rate());
    for m in Membership::ALL {
        println!("  {:<7} trials {:>6}  accuracy {:.4}", m.name(), g.per_class_trials[m.label()], g.per_class_accuracy[m.label()]);
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Run { config, seed } => {
            let cfg = load(&config, seed, root)?;
            let out = run_experiment(&cfg)?;
            print_aggregate(&out.aggregate);
            println!("wrote {}", cfg.resolved_output_dir().display());
        }
        Command::Suite { grid, csv, seed } => {
            let text = fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let mut entries = parse_grid(&text)?;
            if let Some(s) = seed {
                for e in &mut entries {
                    if let Ok(c) = &mut e.config {
                        c.seeds = vec![s];
                    }
                }
            }
            let out_root = root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"));
            let rows = run_suite(&entries, Some(&out_root))?;
            let path = csv.unwrap_or_else(|| out_root.join("suite.csv"));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_suite_csv(fs::File::create(&path)?, &rows)?;
            let failed = rows.iter().filter(|r| r.cells[5] == "error").count();
            println!("{} rows ({failed} failed configs) -> {}", rows.len(), path.display());
        }
        Command::Game { config, trials, seed, adversary } => {
            let cfg = load(&config, seed, root)?;
            let s = cfg.seeds[0];
            let result = match adversary {
                Adversary::Attack => attack_game(&cfg, s, trials)?,
                Adversary::Constant | Adversary::Oracle => {
                    let (_, split) = target_split(&cfg, s)?;
                    let pools = EvalTriple::from_split(&split);
                    let game_seed = derive_seed(s, "game", 0);
                    match adversary {
                        Adversary::Constant => play_game(&pools, trials, game_seed, |_| Ok(Membership::Unseen))?,
                        _ => play_game(&pools, trials, game_seed, oracle_adversary(&pools))?,
                    }
                }
            };
            print_game(&result);
        }
        Command::Ulira { config, trials, seed } => {
            let cfg = load(&config, seed, root)?;
            let out = run_ulira(&cfg, trials, cfg.seeds[0])?;
            let dir = cfg.resolved_output_dir();
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("ulira-seed-{}.json", out.seed));
            fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")?;
            println!("micro F1 {:.4}  per-class {:?}", out.micro_f1, out.per_class_f1);
            println!("wrote {}", path.display());
        }
        Command::Report { dir } => {
            if !dir.is_dir() {
                bail!("{} is not a directory", dir.display());
            }
            print_aggregate(&rerender_report(&dir)?);
        }
    }
    Ok(())
}
