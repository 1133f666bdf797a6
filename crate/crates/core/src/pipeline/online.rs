//! Online learning: grasp with the latest snapshot, learn from the shared
//! replay at a fixed number of updates per grasp.

use std::ops::RangeInclusive;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::buffers::{ParameterBuffer, ReplayBuffer, Transition, DEFAULT_REPLAY_CAPACITY};
use super::train::{learner_update, MemberTrainer, TrainConfig};
use crate::agent::{Ensemble, Member};
use crate::error::{Error, Result};
use crate::explore::{delta_schedule, select_pixel, ucb_map, FailureGuard, PixelSelection, UcbConfig};
use crate::net::{FeaturePatch, ObsFeatures};
use crate::rng::{derive_seed, Tag};
use crate::sim::{BinSim, Difficulty, GraspOutcome, Scene};

type SceneFn = dyn Fn(u64) -> Result<Scene> + Send + Sync;

/// Where fresh online scenes come from.
#[derive(Clone)]
pub enum SceneSource {
    /// Scene `k` uses a seed derived from `(seed, k)` and an object count
    /// drawn from `objects`.
    Random {
        seed: u64,
        objects: RangeInclusive<usize>,
        difficulty: Difficulty,
    },
    Custom(Arc<SceneFn>),
}

impl std::fmt::Debug for SceneSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SceneSource::Random {
                seed,
                objects,
                difficulty,
            } => write!(f, "Random({seed}, {objects:?}, {difficulty})"),
            SceneSource::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl SceneSource {
    pub fn scene(&self, sim: &BinSim, k: u64) -> Result<Scene> {
        match self {
            SceneSource::Random {
                seed,
                objects,
                difficulty,
            } => {
                use rand::Rng;
                let scene_seed = derive_seed(*seed, Tag::OnlineScene, k);
                let n = crate::rng::stream(*seed, Tag::OnlineScene, k).random_range(objects.clone());
                sim.generate_scene(scene_seed, n, *difficulty)
            }
            SceneSource::Custom(f) => f(k),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub seed: u64,
    /// Grasps to execute.
    pub budget: u64,
    /// Ensemble-wide updates per grasp.
    pub ratio: u64,
    /// Member updates between publishes.
    pub publish_every: u64,
    pub max_attempts: u64,
    pub replay_capacity: usize,
    /// Ensemble-wide updates between checkpoints.
    pub checkpoint_every: u64,
    pub ucb: UcbConfig,
    pub train: TrainConfig,
    /// Failed pixels remembered per scene; zero disables the guard.
    pub guard: usize,
    pub scenes: SceneSource,
    /// Grasp counts after which the current parameters are captured.
    pub capture_grasps: Vec<u64>,
    /// How many grasps the actor may run ahead of the learners.
    pub pace_slack: u64,
}

impl OnlineConfig {
    pub fn new(seed: u64, budget: u64) -> Self {
        Self {
            seed,
            budget,
            ratio: 6,
            publish_every: 10,
            max_attempts: 25,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            checkpoint_every: 500,
            ucb: UcbConfig {
                horizon: budget * 6,
                ..UcbConfig::default()
            },
            train: TrainConfig::default(),
            guard: 3,
            scenes: SceneSource::Random {
                seed,
                objects: 10..=17,
                difficulty: Difficulty::Mixed,
            },
            capture_grasps: Vec::new(),
            pace_slack: 1,
        }
    }

    fn validate(&self, members: usize) -> Result<()> {
        self.ucb.validate()?;
        if members == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if self.publish_every == 0 || self.checkpoint_every == 0 || self.max_attempts == 0 || self.train.batch == 0 {
            return Err(Error::InvalidArgument(
                "publish interval, checkpoint interval, attempts and batch must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Member `j`'s share of the first `ratio * grasps` ensemble-wide
    /// updates, assigned round robin.
    fn quota(&self, j: usize, members: usize, grasps: u64) -> u64 {
        let slots = self.ratio * grasps;
        (slots + members as u64 - 1 - j as u64) / members as u64
    }
}

/// Result of one grasp decision.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub selection: PixelSelection,
    pub outcome: GraspOutcome,
    pub next_scene: Scene,
    pub patch: FeaturePatch,
    pub delta: f64,
}

/// Render, predict, score, select and execute one grasp.
pub fn online_step(
    sim: &BinSim,
    scene: &Scene,
    ensemble: &Ensemble,
    ucb: &UcbConfig,
    t: u64,
    guard: &FailureGuard,
    attempt: u64,
) -> Result<StepOutcome> {
    if scene.objects.is_empty() {
        return Err(Error::EmptyBin);
    }
    let obs = sim.render(scene);
    let features = ObsFeatures::new(&obs, ensemble.patch)?;
    let pred = ensemble.predict_features(&features)?;
    let scores = ucb_map(&pred.stats.q_mean, &pred.stats, ucb, t)?;
    let mask = guard.apply(&scene.bin_mask);
    let selection = select_pixel(&scores, &mask, &pred.action_mean, &obs)?;
    let (outcome, next_scene) = sim.execute_grasp(scene, &selection.action, attempt)?;
    Ok(StepOutcome {
        patch: features.patch_at(selection.row, selection.col),
        selection,
        outcome,
        next_scene,
        delta: delta_schedule(ucb, t),
    })
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    /// Grasp index.
    pub step: u64,
    /// Ensemble-wide updates completed when the grasp was chosen.
    pub updates: u64,
    pub scene_id: u64,
    pub attempt: u64,
    pub pixel: [usize; 2],
    pub action: [f64; 2],
    pub reward: u8,
    pub removed: Option<u32>,
    pub true_p: f64,
    /// Updates per grasp so far.
    pub ratio: f64,
    pub delta: f64,
    pub ucb: f64,
    pub version: u64,
    /// Largest gap, in member updates, between a learner and the snapshot
    /// used for this grasp.
    pub staleness: u64,
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub ensemble: Ensemble,
    /// `(ensemble-wide updates, parameters)`.
    pub checkpoints: Vec<(u64, Ensemble)>,
    /// `(grasps, parameters)` for each requested capture.
    pub captures: Vec<(u64, Ensemble)>,
    pub records: Vec<GraspRecord>,
    pub updates: u64,
    pub failure: Option<String>,
}

impl OnlineRun {
    /// Updates per grasp over the whole run.
    pub fn ratio(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.updates as f64 / self.records.len() as f64
        }
    }

    /// Updates per grasp over each window of `w` consecutive grasps.
    pub fn window_ratios(&self, w: usize) -> Vec<f64> {
        let mut marks: Vec<u64> = self.records.iter().map(|r| r.updates).collect();
        marks.push(self.updates);
        if marks.len() <= w {
            return Vec::new();
        }
        (0..marks.len() - w)
            .map(|i| (marks[i + w] - marks[i]) as f64 / w as f64)
            .collect()
    }
}

/// Scene bookkeeping shared by both runners.
struct Episode {
    scene: Scene,
    id: u64,
    attempts: u64,
    guard: FailureGuard,
}

impl Episode {
    fn start(sim: &BinSim, cfg: &OnlineConfig, id: u64) -> Result<Self> {
        Ok(Self {
            scene: cfg.scenes.scene(sim, id)?,
            id,
            attempts: 0,
            guard: FailureGuard::new(cfg.guard),
        })
    }

    /// Grasps once with `ensemble` and advances to a fresh scene when the
    /// bin is clear or the attempt budget is spent.
    fn grasp(
        &mut self,
        sim: &BinSim,
        cfg: &OnlineConfig,
        ensemble: &Ensemble,
        step: u64,
        t: u64,
    ) -> Result<(Transition, StepOutcome)> {
        let out = online_step(sim, &self.scene, ensemble, &cfg.ucb, t, &self.guard, self.attempts)?;
        let s = &out.selection;
        let transition = Transition {
            patch: out.patch.clone(),
            row: s.row,
            col: s.col,
            action: [s.action.alpha, s.action.beta],
            reward: out.outcome.reward,
            step_index: step,
            scene_id: self.id,
        };
        self.guard.record(s.row, s.col, out.outcome.reward);
        self.attempts += 1;
        self.scene = out.next_scene.clone();
        if self.scene.objects.is_empty() || self.attempts >= cfg.max_attempts {
            *self = Self::start(sim, cfg, self.id + 1)?;
        }
        Ok((transition, out))
    }
}

#[allow(clippy::too_many_arguments)]
fn record(step: u64, updates: u64, scene_id: u64, attempt: u64, out: &StepOutcome, version: u64, staleness: u64) -> GraspRecord {
    let s = &out.selection;
    GraspRecord {
        step,
        updates,
        scene_id,
        attempt,
        pixel: [s.row, s.col],
        action: [s.action.alpha, s.action.beta],
        reward: out.outcome.reward,
        removed: out.outcome.removed_object_id,
        true_p: out.outcome.true_success_prob,
        ratio: if step == 0 { 0.0 } else { updates as f64 / step as f64 },
        delta: out.delta,
        ucb: s.ucb_value,
        version,
        staleness,
    }
}

fn staleness(current: &[u64], info: &[u64]) -> u64 {
    current.iter().zip(info).map(|(c, s)| c.saturating_sub(*s)).max().unwrap_or(0)
}

fn assemble(initial: &Ensemble, members: Vec<Member>) -> Ensemble {
    Ensemble {
        kind: initial.kind,
        patch: initial.patch,
        members,
    }
}

/// Single-threaded run with the exact interleaving: one grasp, then
/// `ratio` updates round robin over the members. Fully determined by the
/// configuration and the initial parameters.
pub fn run_sync(sim: &BinSim, initial: &Ensemble, cfg: &OnlineConfig) -> Result<OnlineRun> {
    cfg.validate(initial.len())?;
    let n = initial.len();
    let replay = ReplayBuffer::new(cfg.replay_capacity);
    let params = ParameterBuffer::new(initial);
    let mut trainers: Vec<MemberTrainer> = initial
        .members
        .iter()
        .enumerate()
        .map(|(j, m)| MemberTrainer::new(j, m.clone(), cfg.seed))
        .collect();
    let current = |trainers: &[MemberTrainer]| assemble(initial, trainers.iter().map(|t| t.member.clone()).collect());
    let mut run = OnlineRun {
        ensemble: initial.clone(),
        checkpoints: Vec::new(),
        captures: Vec::new(),
        records: Vec::with_capacity(cfg.budget as usize),
        updates: 0,
        failure: None,
    };
    if cfg.capture_grasps.contains(&0) {
        run.captures.push((0, initial.clone()));
    }
    if cfg.budget == 0 {
        return Ok(run);
    }
    let mut episode = Episode::start(sim, cfg, 0)?;
    for g in 0..cfg.budget {
        let (ensemble, info) = params.read()?;
        let counts: Vec<u64> = trainers.iter().map(|t| t.updates).collect();
        let (scene_id, attempt) = (episode.id, episode.attempts);
        let (transition, out) = episode.grasp(sim, cfg, &ensemble, g, run.updates)?;
        run.records.push(record(
            g,
            run.updates,
            scene_id,
            attempt,
            &out,
            info.version,
            staleness(&counts, &info.member_updates),
        ));
        replay.push(transition);
        for _ in 0..cfg.ratio {
            let j = (run.updates % n as u64) as usize;
            let tr = &mut trainers[j];
            learner_update(tr, &replay, initial.kind, &cfg.train)?;
            if tr.updates % cfg.publish_every == 0 {
                params.publish(j, tr.member.clone(), tr.updates)?;
            }
            run.updates += 1;
            if run.updates % cfg.checkpoint_every == 0 {
                run.checkpoints.push((run.updates, current(&trainers)));
            }
        }
        if cfg.capture_grasps.contains(&(g + 1)) {
            run.captures.push((g + 1, current(&trainers)));
        }
    }
    run.ensemble = current(&trainers);
    Ok(run)
}

#[derive(Debug)]
struct Pace {
    grasps: u64,
    updates: Vec<u64>,
    done: bool,
    abort: Option<String>,
}

/// Concurrent run: the calling thread acts, one thread per member learns.
/// Learners block once they have done their share of `ratio` updates per
/// appended grasp; the actor blocks when the learners fall more than
/// `pace_slack` grasps behind. Checkpoints and captures come from the
/// parameter buffer, except those at the very end, which use the final
/// learner state.
pub fn run_async(sim: &BinSim, initial: &Ensemble, cfg: &OnlineConfig) -> Result<OnlineRun> {
    cfg.validate(initial.len())?;
    let n = initial.len();
    let replay = ReplayBuffer::new(cfg.replay_capacity);
    let params = ParameterBuffer::new(initial);
    let pace = Mutex::new(Pace {
        grasps: 0,
        updates: vec![0; n],
        done: false,
        abort: None,
    });
    let cv = Condvar::new();
    let lock = || pace.lock().unwrap_or_else(|e| e.into_inner());
    let abort = |msg: String| {
        let mut p = lock();
        p.abort.get_or_insert(msg);
        cv.notify_all();
    };

    let mut run = OnlineRun {
        ensemble: initial.clone(),
        checkpoints: Vec::new(),
        captures: Vec::new(),
        records: Vec::with_capacity(cfg.budget as usize),
        updates: 0,
        failure: None,
    };
    if cfg.capture_grasps.contains(&0) {
        run.captures.push((0, initial.clone()));
    }

    let final_members: Vec<Option<Member>> = std::thread::scope(|scope| {
        let handles: Vec<_> = initial
            .members
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let (replay, params, cv, lock, abort) = (&replay, &params, &cv, &lock, &abort);
                let mut tr = MemberTrainer::new(j, m.clone(), cfg.seed);
                scope.spawn(move || {
                    let body = catch_unwind(AssertUnwindSafe(|| -> Result<()> {
                        loop {
                            {
                                let mut p = lock();
                                loop {
                                    if p.abort.is_some() {
                                        return Ok(());
                                    }
                                    let allowed = p.updates[j] < cfg.quota(j, n, p.grasps);
                                    if allowed {
                                        break;
                                    }
                                    if p.done {
                                        return Ok(());
                                    }
                                    p = cv.wait(p).unwrap_or_else(|e| e.into_inner());
                                }
                            }
                            learner_update(&mut tr, replay, initial.kind, &cfg.train)?;
                            if tr.updates % cfg.publish_every == 0 {
                                params.publish(j, tr.member.clone(), tr.updates)?;
                            }
                            let mut p = lock();
                            p.updates[j] = tr.updates;
                            cv.notify_all();
                        }
                    }));
                    match body {
                        Ok(Ok(())) => {
                            let _ = params.publish(j, tr.member.clone(), tr.updates);
                            Some(tr.member)
                        }
                        Ok(Err(e)) => {
                            abort(format!("learner {j}: {e}"));
                            None
                        }
                        Err(panic) => {
                            let msg = panic
                                .downcast_ref::<&str>()
                                .map(|s| s.to_string())
                                .or_else(|| panic.downcast_ref::<String>().cloned())
                                .unwrap_or_else(|| "panic".into());
                            abort(format!("learner {j} panicked: {msg}"));
                            None
                        }
                    }
                })
            })
            .collect();

        let acting = (|| -> Result<()> {
            if cfg.budget == 0 {
                return Ok(());
            }
            let mut episode = Episode::start(sim, cfg, 0)?;
            let mut next_ckpt = cfg.checkpoint_every;
            for g in 0..cfg.budget {
                let behind = g.saturating_sub(cfg.pace_slack);
                let counts = {
                    let mut p = lock();
                    while p.abort.is_none() && (0..n).any(|j| p.updates[j] < cfg.quota(j, n, behind)) {
                        p = cv.wait(p).unwrap_or_else(|e| e.into_inner());
                    }
                    if let Some(msg) = &p.abort {
                        return Err(Error::Worker(msg.clone()));
                    }
                    p.updates.clone()
                };
                let total: u64 = counts.iter().sum();
                let (ensemble, info) = params.read()?;
                while next_ckpt <= total && next_ckpt < cfg.ratio * cfg.budget {
                    run.checkpoints.push((next_ckpt, ensemble.clone()));
                    next_ckpt += cfg.checkpoint_every;
                }
                if cfg.capture_grasps.contains(&g) && g > 0 {
                    run.captures.push((g, ensemble.clone()));
                }
                let (scene_id, attempt) = (episode.id, episode.attempts);
                let (transition, out) = episode.grasp(sim, cfg, &ensemble, g, total)?;
                run.records.push(record(
                    g,
                    total,
                    scene_id,
                    attempt,
                    &out,
                    info.version,
                    staleness(&counts, &info.member_updates),
                ));
                replay.push(transition);
                let mut p = lock();
                p.grasps = g + 1;
                cv.notify_all();
            }
            Ok(())
        })();
        if let Err(e) = acting {
            abort(format!("actor: {e}"));
        }
        {
            let mut p = lock();
            p.done = true;
            cv.notify_all();
        }
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(None))
            .collect()
    });

    let p = lock();
    run.updates = p.updates.iter().sum();
    run.failure = p.abort.clone();
    drop(p);
    match final_members.into_iter().collect::<Option<Vec<_>>>() {
        Some(members) if run.failure.is_none() => {
            let fin = assemble(initial, members);
            let mut next = run.checkpoints.last().map_or(cfg.checkpoint_every, |c| c.0 + cfg.checkpoint_every);
            while next <= run.updates {
                run.checkpoints.push((next, fin.clone()));
                next += cfg.checkpoint_every;
            }
            if cfg.capture_grasps.contains(&cfg.budget) && cfg.budget > 0 {
                run.captures.push((cfg.budget, fin.clone()));
            }
            run.ensemble = fin;
        }
        _ => {
            if let Ok((latest, _)) = params.read() {
                run.ensemble = latest;
            }
            log::error!("online run failed: {}", run.failure.as_deref().unwrap_or("unknown"));
        }
    }
    Ok(run)
}
