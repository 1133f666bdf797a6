//! Experiment harness: evaluation, run configuration, sweeps and exports.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod experiment;
pub mod maps;

pub use ablate::{ablation_csv, aggregate, default_grid, heads_grid, mean_std, run_ablation, AggregateRow, Cell, SeedRow};
pub use config::{parse_range, parse_seeds, RunConfig, Strategy};
pub use eval::{evaluate, run_episode, AttemptRecord, EpisodeTrace, EvalProtocol, RunMetrics};
pub use experiment::{init_seed, online, pretrained, read_jsonl, run_seed, write_json, write_jsonl, RunDir, SeedResult};
pub use maps::{compute_maps, export_maps, MapSet};
