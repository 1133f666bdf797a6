//! Fixed-scene evaluation with pure exploitation.

use serde::{Deserialize, Serialize};

use crate::agent::Ensemble;
use crate::error::{Error, Result};
use crate::explore::{FailureGuard, UcbConfig};
use crate::pipeline::online_step;
use crate::rng::{derive_seed, Tag};
use crate::sim::{clearing_rate, BinSim, Difficulty, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub seeds: Vec<u64>,
    pub n_objects: usize,
    pub max_attempts: u64,
    /// Episodes per scene seed. Repetitions share the layout but draw
    /// their sensor noise and grasp outcomes from different streams.
    pub repetitions: u64,
    pub difficulty: Difficulty,
    pub guard: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            seeds: vec![1001, 1002],
            n_objects: 17,
            max_attempts: 25,
            repetitions: 5,
            difficulty: Difficulty::Mixed,
            guard: 3,
        }
    }
}

impl EvalProtocol {
    pub fn scene(&self, sim: &BinSim, seed: u64, repetition: u64) -> Result<Scene> {
        let mut scene = sim.generate_scene(seed, self.n_objects, self.difficulty)?;
        scene.rng_seed = derive_seed(seed, Tag::Eval, repetition);
        Ok(scene)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u64,
    pub pixel: [usize; 2],
    pub action: [f64; 2],
    pub reward: u8,
    pub removed: Option<u32>,
    pub true_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scene_seed: u64,
    pub repetition: u64,
    pub initial_objects: usize,
    pub remaining_objects: usize,
    pub attempts: Vec<AttemptRecord>,
}

impl EpisodeTrace {
    pub fn successes(&self) -> usize {
        self.attempts.iter().filter(|a| a.reward == 1).count()
    }

    pub fn clearing_rate(&self) -> Result<f64> {
        clearing_rate(self.initial_objects, self.remaining_objects)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub checkpoint_step: u64,
    pub grasp_success_rate: f64,
    pub clearing_rate: f64,
    pub episodes: Vec<EpisodeTrace>,
}

impl RunMetrics {
    /// Success rate over all attempts and removed over initial objects,
    /// both pooled across episodes.
    pub fn from_episodes(checkpoint_step: u64, episodes: Vec<EpisodeTrace>) -> Result<Self> {
        let attempts: usize = episodes.iter().map(|e| e.attempts.len()).sum();
        let successes: usize = episodes.iter().map(|e| e.successes()).sum();
        let initial: usize = episodes.iter().map(|e| e.initial_objects).sum();
        let remaining: usize = episodes.iter().map(|e| e.remaining_objects).sum();
        if initial == 0 {
            return Err(Error::EmptyBin);
        }
        Ok(Self {
            checkpoint_step,
            grasp_success_rate: if attempts == 0 {
                0.0
            } else {
                successes as f64 / attempts as f64
            },
            clearing_rate: clearing_rate(initial, remaining)?,
            episodes,
        })
    }
}

/// Greedy episode: stops when the bin is clear or the budget is spent.
pub fn run_episode(sim: &BinSim, ensemble: &Ensemble, scene: Scene, max_attempts: u64, guard: usize) -> Result<EpisodeTrace> {
    let initial = scene.object_count();
    let greedy = UcbConfig::greedy();
    let mut guard = FailureGuard::new(guard);
    let mut scene = scene;
    let mut attempts = Vec::new();
    for attempt in 0..max_attempts {
        if scene.objects.is_empty() {
            break;
        }
        let out = online_step(sim, &scene, ensemble, &greedy, 0, &guard, attempt)?;
        let s = &out.selection;
        guard.record(s.row, s.col, out.outcome.reward);
        attempts.push(AttemptRecord {
            attempt,
            pixel: [s.row, s.col],
            action: [s.action.alpha, s.action.beta],
            reward: out.outcome.reward,
            removed: out.outcome.removed_object_id,
            true_p: out.outcome.true_success_prob,
        });
        scene = out.next_scene;
    }
    Ok(EpisodeTrace {
        scene_seed: 0,
        repetition: 0,
        initial_objects: initial,
        remaining_objects: scene.object_count(),
        attempts,
    })
}

pub fn evaluate(sim: &BinSim, ensemble: &Ensemble, protocol: &EvalProtocol, checkpoint_step: u64) -> Result<RunMetrics> {
    let mut episodes = Vec::with_capacity(protocol.seeds.len() * protocol.repetitions as usize);
    for &seed in &protocol.seeds {
        for rep in 0..protocol.repetitions {
            let scene = protocol.scene(sim, seed, rep)?;
            let mut trace = run_episode(sim, ensemble, scene, protocol.max_attempts, protocol.guard)?;
            trace.scene_seed = seed;
            trace.repetition = rep;
            episodes.push(trace);
        }
    }
    RunMetrics::from_episodes(checkpoint_step, episodes)
}
