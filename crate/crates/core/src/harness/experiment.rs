//! One seed of the benchmark: offline data, pretraining, an online run and
//! evaluation, with optional run-directory output.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{RunConfig, Strategy};
use super::eval::{evaluate, RunMetrics};
use super::maps::{compute_maps, export_maps};
use crate::agent::Ensemble;
use crate::critic::CriticKind;
use crate::error::Result;
use crate::gridio::write_atomic;
use crate::pipeline::{build_offline_dataset, pretrain, run_async, run_sync, GraspRecord, OnlineRun};
use crate::rng::{derive_seed, Tag};
use crate::sim::BinSim;

/// Ensemble initialization seed of run `seed`.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, Tag::Init, 0)
}

/// Builds the offline dataset of `seed` and pretrains a fresh ensemble.
pub fn pretrained(sim: &BinSim, cfg: &RunConfig, critic: CriticKind, seed: u64) -> Result<Ensemble> {
    let init = Ensemble::init(init_seed(seed), critic, cfg.patch, cfg.members)?;
    if cfg.steps == 0 {
        return Ok(init);
    }
    let data = build_offline_dataset(sim, &cfg.dataset(seed))?;
    pretrain(&data, &init, cfg.steps, &cfg.train(), seed)
}

/// Online run from `initial` with the given strategy, sync or async per
/// the configuration.
pub fn online(sim: &BinSim, cfg: &RunConfig, initial: &Ensemble, strategy: Strategy, seed: u64) -> Result<OnlineRun> {
    let mut c = cfg.clone();
    c.strategy = strategy;
    let online = c.online(seed);
    if c.sync {
        run_sync(sim, initial, &online)
    } else {
        run_async(sim, initial, &online)
    }
}

/// Outcome of one configuration on one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub offline: Ensemble,
    pub run: OnlineRun,
    pub metrics: RunMetrics,
}

pub fn run_seed(sim: &BinSim, cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    let offline = pretrained(sim, cfg, cfg.critic, seed)?;
    let run = online(sim, cfg, &offline, cfg.strategy, seed)?;
    if let Some(f) = &run.failure {
        return Err(crate::Error::Worker(f.clone()));
    }
    let metrics = evaluate(sim, &run.ensemble, &cfg.eval, run.updates)?;
    Ok(SeedResult { offline, run, metrics })
}

/// Layout of a run directory:
///
/// ```text
/// config.txt
/// metrics.jsonl          one GraspRecord per line
/// checkpoints/ckpt_0500  (+ .json sidecar), ...
/// maps/step_0500/        q_mean, v_epi, v_ale, v_all, q_ucb as CSV and PGM
/// eval.json              RunMetrics of the final parameters, if evaluated
/// failure.txt            only when a worker failed
/// ```
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        write_atomic(&root.join("config.txt"), cfg.to_text().as_bytes())?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("ckpt_{step:04}"))
    }

    pub fn write_records(&self, records: &[GraspRecord]) -> Result<()> {
        write_jsonl(&self.root.join("metrics.jsonl"), records)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&self.root.join(name), value)
    }

    /// Checkpoints plus maps of each checkpoint on the first evaluation
    /// scene.
    pub fn write_run(&self, sim: &BinSim, cfg: &RunConfig, run: &OnlineRun) -> Result<()> {
        self.write_records(&run.records)?;
        let seed = cfg.eval.seeds.first().copied().unwrap_or(0);
        let obs = sim.render(&cfg.eval.scene(sim, seed, 0)?);
        for (step, ens) in &run.checkpoints {
            ens.save(&self.checkpoint_path(*step))?;
            let maps = compute_maps(ens, &obs, &cfg.ucb(), *step)?;
            export_maps(&self.root.join("maps").join(format!("step_{step:04}")), &maps)?;
        }
        if let Some(f) = &run.failure {
            write_atomic(&self.root.join("failure.txt"), f.as_bytes())?;
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
