//! Run configuration in a `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! seeds = 1..10            # inclusive range or comma list
//! N = 3                    # ensemble members
//! K = 20                   # quantile heads (qr critic)
//! critic_kind = qr         # mv | qr
//! uncertainty_kind = epi   # none | ale | epi | all
//! delta = 1.0
//! schedule = cosine        # fixed | cosine
//! steps = 4000             # offline pretraining steps
//! budget = 3000            # online training steps (ensemble-wide)
//! ```
//!
//! Further keys: `patch`, `scenes`, `objects`, `lr`, `batch`, `ratio`,
//! `publish_every`, `checkpoint_every`, `eval_seeds`, `repetitions`,
//! `eval_objects`, `max_attempts`, `on_std`, `sync`.

use std::fmt::{self, Write as _};
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::CriticKind;
use crate::error::{Error, Result};
use crate::explore::{Schedule, UcbConfig, UncertaintyKind};
use crate::harness::eval::EvalProtocol;
use crate::net::DEFAULT_PATCH;
use crate::pipeline::{DatasetSpec, OnlineConfig, TrainConfig};

/// Uncertainty source plus schedule, written `epi`, `epi-adaptive`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: UncertaintyKind,
    pub schedule: Schedule,
}

impl Strategy {
    pub fn new(kind: UncertaintyKind, schedule: Schedule) -> Self {
        Self { kind, schedule }
    }

    /// The five strategies of the exploration sweep.
    pub fn sweep() -> Vec<Strategy> {
        use UncertaintyKind::*;
        vec![
            Self::new(None, Schedule::Fixed),
            Self::new(Aleatoric, Schedule::Fixed),
            Self::new(Epistemic, Schedule::Fixed),
            Self::new(Total, Schedule::Fixed),
            Self::new(Epistemic, Schedule::CosineAdaptive),
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.schedule) {
            (UncertaintyKind::None, _) | (_, Schedule::Fixed) => f.write_str(self.kind.as_str()),
            (k, Schedule::CosineAdaptive) => write!(f, "{k}-adaptive"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_suffix("-adaptive") {
            Some(k) => Ok(Self::new(k.parse()?, Schedule::CosineAdaptive)),
            None => Ok(Self::new(s.parse()?, Schedule::Fixed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub members: usize,
    pub critic: CriticKind,
    pub strategy: Strategy,
    pub delta: f64,
    pub on_std: bool,
    /// Offline pretraining steps.
    pub steps: u64,
    /// Online ensemble-wide training steps; grasps = budget / ratio.
    pub budget: u64,
    pub ratio: u64,
    pub publish_every: u64,
    pub checkpoint_every: u64,
    pub patch: usize,
    /// Offline scenes per seed.
    pub scenes: usize,
    pub objects: RangeInclusive<usize>,
    pub lr: f64,
    pub batch: usize,
    pub eval: EvalProtocol,
    pub sync: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=10).collect(),
            members: 3,
            critic: CriticKind::Qr { heads: 20 },
            strategy: Strategy::new(UncertaintyKind::Epistemic, Schedule::CosineAdaptive),
            delta: 1.0,
            on_std: false,
            steps: 4000,
            budget: 3000,
            ratio: 6,
            publish_every: 10,
            checkpoint_every: 500,
            patch: DEFAULT_PATCH,
            scenes: 300,
            objects: 5..=10,
            lr: 1e-4,
            batch: 12,
            eval: EvalProtocol::default(),
            sync: false,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::InvalidArgument(format!("bad value '{value}' for key '{key}'"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

/// `a..b` (inclusive) or a single number.
pub fn parse_range(value: &str) -> Result<RangeInclusive<usize>> {
    let err = || Error::InvalidArgument(format!("bad range '{value}'"));
    let (a, b) = match value.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (value, value),
    };
    let a: usize = a.trim().parse().map_err(|_| err())?;
    let b: usize = b.trim().parse().map_err(|_| err())?;
    if a > b {
        return Err(err());
    }
    Ok(a..=b)
}

/// Comma separated seeds; each item is a seed or an inclusive `a..b`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let a: u64 = num("seeds", a.trim())?;
                let b: u64 = num("seeds", b.trim_start_matches('=').trim())?;
                if a > b {
                    return Err(bad("seeds", item));
                }
                out.extend(a..=b);
            }
            None => out.push(num("seeds", item)?),
        }
    }
    Ok(out)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn join(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key. `K` applies to the qr critic and is remembered when
    /// `critic_kind` comes later.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seeds" => self.seeds = parse_seeds(value)?,
            "N" => self.members = num(key, value)?,
            "K" => {
                let heads: usize = num(key, value)?;
                if heads == 0 {
                    return Err(bad(key, value));
                }
                self.critic = CriticKind::Qr { heads };
            }
            "critic_kind" => {
                self.critic = match (value.parse::<CriticKind>()?, self.critic) {
                    (CriticKind::Qr { .. }, CriticKind::Qr { heads }) if value == "qr" => CriticKind::Qr { heads },
                    (k, _) => k,
                }
            }
            "uncertainty_kind" => {
                let s: Strategy = value.parse()?;
                self.strategy.kind = s.kind;
                if s.schedule == Schedule::CosineAdaptive {
                    self.strategy.schedule = s.schedule;
                }
            }
            "schedule" => {
                self.strategy.schedule = match value {
                    "adaptive" => Schedule::CosineAdaptive,
                    v => v.parse()?,
                }
            }
            "delta" => self.delta = num(key, value)?,
            "on_std" => self.on_std = parse_bool(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "budget" => self.budget = num(key, value)?,
            "ratio" => self.ratio = num(key, value)?,
            "publish_every" => self.publish_every = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "scenes" => self.scenes = num(key, value)?,
            "objects" => self.objects = parse_range(value)?,
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "eval_seeds" => self.eval.seeds = parse_seeds(value)?,
            "repetitions" => self.eval.repetitions = num(key, value)?,
            "eval_objects" => self.eval.n_objects = num(key, value)?,
            "max_attempts" => self.eval.max_attempts = num(key, value)?,
            "sync" => self.sync = parse_bool(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.members == 0 {
            return fail("N must be at least 1");
        }
        if self.patch % 2 == 0 {
            return Err(Error::EvenWindow(self.patch));
        }
        if self.ratio == 0 || self.publish_every == 0 || self.checkpoint_every == 0 || self.batch == 0 {
            return fail("ratio, publish_every, checkpoint_every and batch must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.eval.max_attempts == 0 {
            return fail("max_attempts must be positive");
        }
        self.ucb().validate()
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seeds", join(&self.seeds));
        kv("N", self.members.to_string());
        if let CriticKind::Qr { heads } = self.critic {
            kv("K", heads.to_string());
        }
        kv(
            "critic_kind",
            match self.critic {
                CriticKind::Mv => "mv".into(),
                CriticKind::Qr { .. } => "qr".into(),
            },
        );
        kv("uncertainty_kind", self.strategy.kind.to_string());
        kv("schedule", self.strategy.schedule.to_string());
        kv("delta", format!("{:?}", self.delta));
        kv("on_std", self.on_std.to_string());
        kv("steps", self.steps.to_string());
        kv("budget", self.budget.to_string());
        kv("ratio", self.ratio.to_string());
        kv("publish_every", self.publish_every.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("patch", self.patch.to_string());
        kv("scenes", self.scenes.to_string());
        kv("objects", format!("{}..{}", self.objects.start(), self.objects.end()));
        kv("lr", format!("{:?}", self.lr));
        kv("batch", self.batch.to_string());
        kv("eval_seeds", join(&self.eval.seeds));
        kv("repetitions", self.eval.repetitions.to_string());
        kv("eval_objects", self.eval.n_objects.to_string());
        kv("max_attempts", self.eval.max_attempts.to_string());
        kv("sync", self.sync.to_string());
        s
    }

    /// Grasps needed for `budget` training steps.
    pub fn grasps(&self) -> u64 {
        self.budget / self.ratio
    }

    pub fn ucb(&self) -> UcbConfig {
        UcbConfig {
            delta: if self.strategy.kind == UncertaintyKind::None { 0.0 } else { self.delta },
            kind: self.strategy.kind,
            schedule: self.strategy.schedule,
            horizon: self.budget,
            on_std: self.on_std,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            ..TrainConfig::default()
        }
    }

    pub fn dataset(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            objects: self.objects.clone(),
            ..DatasetSpec::new(seed, self.scenes)
        }
    }

    pub fn online(&self, seed: u64) -> OnlineConfig {
        let mut cfg = OnlineConfig::new(seed, self.grasps());
        cfg.ratio = self.ratio;
        cfg.publish_every = self.publish_every;
        cfg.checkpoint_every = self.checkpoint_every;
        cfg.max_attempts = self.eval.max_attempts;
        cfg.ucb = self.ucb();
        cfg.train = self.train();
        cfg
    }
}
