//! Experiment orchestration: configs, per-seed pipelines, reports, the
//! membership game, suites and the likelihood-ratio pipeline.

mod config;
mod experiment;
mod game;
mod suite;
mod ulira;

pub use config::{
    desk_train_config, AttackSpec, DatasetSpec, DefenseKind, DefenseSpec, ExperimentConfig, ModelSpec, OverfitPreset, ShadowRelation,
    ShadowSpec, OUTPUT_ROOT_ENV,
};
pub use experiment::{
    attack_game, dp_accounting, evaluate_attack, mia_retain_accuracy, prepare_data, prepare_seed, rerender_report, run_experiment,
    run_experiment_to, run_seed, score_seed, target_split, write_predictions, write_seed_outputs, AttackOutcome, ExperimentOutcome,
    SeedResult, SeedRun,
};
pub use game::{oracle_adversary, play_game, GameResult};
pub use suite::{parse_grid, run_suite, write_suite_csv, SuiteEntry, SuiteRow, SUITE_COLUMNS};
pub use ulira::{run_ulira, UliraOutcome};
