//! `ucbgrasp`: dataset generation, pretraining, online runs, evaluation,
//! ablation sweeps and map export.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage error, 3 missing input
//! or unreadable checkpoint, 4 I/O failure, 5 training diverged, 6 worker
//! failure during an online run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ucbgrasp::agent::Ensemble;
use ucbgrasp::critic::CriticKind;
use ucbgrasp::gridio::write_atomic;
use ucbgrasp::harness::{
    ablation_csv, compute_maps, default_grid, evaluate, export_maps, heads_grid, init_seed, online, parse_range,
    parse_seeds, pretrained, run_ablation, write_json, Cell, RunConfig, RunDir, Strategy,
};
use ucbgrasp::pipeline::{build_offline_dataset, load_dataset, pretrain, save_dataset};
use ucbgrasp::sim::{BinSim, Difficulty};
use ucbgrasp::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_MISSING: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_DIVERGED: u8 = 5;
const EXIT_WORKER: u8 = 6;

#[derive(Parser, Debug)]
#[command(name = "ucbgrasp", version, about = "Uncertainty-driven grasp learning experiments")]
struct Cli {
    /// Run seed (defaults to the first configured seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key = value run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    /// mv, qr or qr<K>.
    #[arg(long)]
    critic: Option<String>,
    /// Quantile heads of the qr critic.
    #[arg(long)]
    heads: Option<usize>,
    /// Ensemble members.
    #[arg(long)]
    members: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct StrategyFlags {
    /// none, ale, epi or all; an `-adaptive` suffix selects the cosine
    /// schedule.
    #[arg(long)]
    uncertainty: Option<String>,
    /// fixed or cosine.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and label offline scenes.
    GenOffline {
        #[arg(long)]
        scenes: Option<usize>,
        /// Objects per scene, `a..b` inclusive.
        #[arg(long)]
        objects: Option<String>,
        #[arg(long, default_value = "easy")]
        difficulty: String,
    },
    /// Pretrain an ensemble on a generated dataset.
    Pretrain {
        /// Dataset directory written by gen-offline.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Online learning run; writes a run directory.
    Online {
        /// Initial checkpoint; without it a fresh ensemble is pretrained.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Single-threaded deterministic interleaving.
        #[arg(long)]
        sync: bool,
        /// Online training steps (ensemble-wide).
        #[arg(long)]
        budget: Option<u64>,
        /// Pretraining steps when no checkpoint is given.
        #[arg(long)]
        steps: Option<u64>,
        /// Evaluate the final parameters.
        #[arg(long)]
        eval: bool,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        strategy: StrategyFlags,
    },
    /// Greedy evaluation of a checkpoint on the fixed scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma list or `a..b`.
        #[arg(long)]
        eval_seeds: Option<String>,
        #[arg(long)]
        repetitions: Option<u64>,
        /// Training step recorded with the metrics.
        #[arg(long, default_value_t = 0)]
        step: u64,
    },
    /// Sweep critics and exploration strategies over seeds.
    Ablate {
        #[arg(long)]
        seeds: Option<String>,
        /// Comma list of `critic/strategy`, e.g. `qr20/epi-adaptive`.
        #[arg(long, conflicts_with = "heads_table")]
        cells: Option<String>,
        /// Only the qr{10,20,100} epi-adaptive table.
        #[arg(long)]
        heads_table: bool,
        #[arg(long)]
        sync: bool,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Write reward, uncertainty and UCB maps of one scene.
    ExportMaps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1001)]
        scene_seed: u64,
        #[arg(long, default_value_t = 17)]
        objects: usize,
        /// Training step for adaptive schedules.
        #[arg(long, default_value_t = 0)]
        step: u64,
        #[command(flatten)]
        strategy: StrategyFlags,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Io(_) => EXIT_IO,
            Error::Checkpoint(_) => EXIT_MISSING,
            Error::Diverged(_) => EXIT_DIVERGED,
            Error::Worker(_) => EXIT_WORKER,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn other(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_OTHER,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_MISSING,
            message: format!("{what} not found: {}", path.display()),
        })
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Ensemble> {
    require(path, "checkpoint")?;
    Ok(Ensemble::load(path)?)
}

fn apply_model(cfg: &mut RunConfig, m: &ModelFlags) -> CliResult<()> {
    if let Some(c) = &m.critic {
        cfg.critic = c.parse()?;
    }
    if let Some(k) = m.heads {
        if cfg.critic == CriticKind::Mv {
            return Err(other("--heads needs a qr critic"));
        }
        cfg.set("K", &k.to_string())?;
    }
    if let Some(n) = m.members {
        cfg.members = n;
    }
    Ok(())
}

fn apply_strategy(cfg: &mut RunConfig, s: &StrategyFlags) -> CliResult<()> {
    if let Some(u) = &s.uncertainty {
        cfg.strategy = u.parse::<Strategy>()?;
    }
    if let Some(sch) = &s.schedule {
        cfg.set("schedule", sch)?;
    }
    if let Some(d) = s.delta {
        cfg.delta = d;
    }
    Ok(())
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

#[derive(Serialize)]
struct OnlineSummary {
    grasps: usize,
    updates: u64,
    ratio: f64,
    checkpoints: Vec<u64>,
    failure: Option<String>,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require(p, "config")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seeds.first().copied()).unwrap_or(1);
    let sim = BinSim::default();
    match &cli.command {
        Command::GenOffline {
            scenes,
            objects,
            difficulty,
        } => {
            if let Some(n) = scenes {
                cfg.scenes = *n;
            }
            if let Some(o) = objects {
                cfg.objects = parse_range(o)?;
            }
            let mut spec = cfg.dataset(seed);
            spec.difficulty = difficulty.parse::<Difficulty>()?;
            let samples = build_offline_dataset(&sim, &spec)?;
            let dir = out_dir(&cli, "dataset");
            save_dataset(&dir, &spec, &samples)?;
            eprintln!("wrote {} scenes to {}", samples.len(), dir.display());
        }
        Command::Pretrain { data, steps, model } => {
            apply_model(&mut cfg, model)?;
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            require(&data.join("manifest.json"), "dataset manifest")?;
            let (_, samples) = load_dataset(data, &sim)?;
            if samples.is_empty() && cfg.steps > 0 {
                return Err(other("dataset has no scenes"));
            }
            let init = Ensemble::init(init_seed(seed), cfg.critic, cfg.patch, cfg.members)?;
            let trained = pretrain(&samples, &init, cfg.steps, &cfg.train(), seed)?;
            let dir = out_dir(&cli, "pretrained");
            let path = dir.join("ckpt_0000");
            trained.save(&path)?;
            write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        Command::Online {
            init,
            sync,
            budget,
            steps,
            eval,
            model,
            strategy,
        } => {
            apply_model(&mut cfg, model)?;
            apply_strategy(&mut cfg, strategy)?;
            if let Some(b) = budget {
                cfg.budget = *b;
            }
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            cfg.sync |= *sync;
            cfg.seeds = vec![seed];
            let initial = match init {
                Some(p) => {
                    let e = load_checkpoint(p)?;
                    cfg.critic = e.kind;
                    cfg.members = e.len();
                    cfg.patch = e.patch;
                    e
                }
                None => pretrained(&sim, &cfg, cfg.critic, seed)?,
            };
            cfg.validate()?;
            let dir = RunDir::create(&out_dir(&cli, "run"), &cfg)?;
            let run = online(&sim, &cfg, &initial, cfg.strategy, seed)?;
            dir.write_run(&sim, &cfg, &run)?;
            dir.write_json(
                "summary.json",
                &OnlineSummary {
                    grasps: run.records.len(),
                    updates: run.updates,
                    ratio: run.ratio(),
                    checkpoints: run.checkpoints.iter().map(|c| c.0).collect(),
                    failure: run.failure.clone(),
                },
            )?;
            if let Some(f) = run.failure {
                return Err(Failure {
                    code: EXIT_WORKER,
                    message: format!("online run failed: {f}"),
                });
            }
            eprintln!(
                "{} grasps, {} updates (ratio {:.3}), {} checkpoints in {}",
                run.records.len(),
                run.updates,
                run.ratio(),
                run.checkpoints.len(),
                dir.root.display()
            );
            if *eval {
                let m = evaluate(&sim, &run.ensemble, &cfg.eval, run.updates)?;
                dir.write_json("eval.json", &m)?;
                println!("grasp_success_rate={} clearing_rate={}", m.grasp_success_rate, m.clearing_rate);
            }
        }
        Command::Eval {
            checkpoint,
            eval_seeds,
            repetitions,
            step,
        } => {
            let ens = load_checkpoint(checkpoint)?;
            if let Some(s) = eval_seeds {
                cfg.eval.seeds = parse_seeds(s)?;
            }
            if let Some(r) = repetitions {
                cfg.eval.repetitions = *r;
            }
            let m = evaluate(&sim, &ens, &cfg.eval, *step)?;
            let dir = out_dir(&cli, "eval");
            write_json(&dir.join("eval.json"), &m)?;
            println!("grasp_success_rate={} clearing_rate={}", m.grasp_success_rate, m.clearing_rate);
        }
        Command::Ablate {
            seeds,
            cells,
            heads_table,
            sync,
            budget,
            steps,
        } => {
            let seeds = match (seeds, cli.seed) {
                (Some(s), _) => parse_seeds(s)?,
                (None, Some(s)) => vec![s],
                (None, None) => cfg.seeds.clone(),
            };
            if let Some(b) = budget {
                cfg.budget = *b;
            }
            if let Some(s) = steps {
                cfg.steps = *s;
            }
            cfg.sync |= *sync;
            let grid = match cells {
                Some(list) => parse_cells(list)?,
                None if *heads_table => heads_grid(),
                None => default_grid(),
            };
            let rows = run_ablation(&sim, &cfg, &grid, &seeds, |r| match (&r.error, r.clearing_rate) {
                (Some(e), _) => log::warn!("{} seed {} failed: {e}", r.cell.label(), r.seed),
                (None, Some(c)) => log::info!("{} seed {} clearing {c:.3}", r.cell.label(), r.seed),
                _ => {}
            });
            let dir = out_dir(&cli, "ablation");
            let csv = ablation_csv(&rows);
            write_atomic(&dir.join("ablation.csv"), csv.as_bytes())?;
            write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
            print!("{csv}");
        }
        Command::ExportMaps {
            checkpoint,
            scene_seed,
            objects,
            step,
            strategy,
        } => {
            apply_strategy(&mut cfg, strategy)?;
            let ens = load_checkpoint(checkpoint)?;
            let scene = sim.generate_scene(*scene_seed, *objects, cfg.eval.difficulty)?;
            let maps = compute_maps(&ens, &sim.render(&scene), &cfg.ucb(), *step)?;
            let dir = out_dir(&cli, "maps");
            export_maps(&dir, &maps)?;
            eprintln!("wrote maps to {}", dir.display());
        }
    }
    Ok(())
}

fn parse_cells(list: &str) -> CliResult<Vec<Cell>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (c, s) = item
                .split_once('/')
                .ok_or_else(|| other(format!("cell '{item}' is not critic/strategy")))?;
            Ok(Cell {
                critic: c.parse()?,
                strategy: s.parse()?,
            })
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
