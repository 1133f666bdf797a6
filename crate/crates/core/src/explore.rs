//! UCB score maps, the exploration schedule and pixel selection.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::critic::UncertaintyMaps;
use crate::error::{shape_err, Error, Result};
use crate::sim::{GraspAction, Observation};

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " '{}'"), s
                    ))),
                }
            }
        }
    };
}

/// Which variance map drives exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UncertaintyKind {
    Epistemic,
    Aleatoric,
    Total,
    None,
}

text_enum!(UncertaintyKind {
    Epistemic => "epi",
    Aleatoric => "ale",
    Total => "all",
    None => "none",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schedule {
    Fixed,
    /// Cosine decay from `delta` to zero over the horizon.
    CosineAdaptive,
}

text_enum!(Schedule {
    Fixed => "fixed",
    CosineAdaptive => "cosine",
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbConfig {
    pub delta: f64,
    pub kind: UncertaintyKind,
    pub schedule: Schedule,
    /// Steps until the cosine schedule reaches zero.
    pub horizon: u64,
    /// Add the standard deviation instead of the variance.
    pub on_std: bool,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            kind: UncertaintyKind::Epistemic,
            schedule: Schedule::Fixed,
            horizon: 3000,
            on_std: false,
        }
    }
}

impl UcbConfig {
    /// Pure exploitation.
    pub fn greedy() -> Self {
        Self {
            delta: 0.0,
            kind: UncertaintyKind::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if self.schedule == Schedule::CosineAdaptive && self.horizon == 0 {
            return Err(Error::InvalidArgument("cosine schedule needs a horizon of at least 1".into()));
        }
        Ok(())
    }
}

pub fn delta_schedule(config: &UcbConfig, t: u64) -> f64 {
    match config.schedule {
        Schedule::Fixed => config.delta,
        Schedule::CosineAdaptive => {
            let horizon = config.horizon.max(1);
            if t >= horizon {
                return 0.0;
            }
            let x = t as f64 / horizon as f64;
            0.5 * config.delta * (1.0 + (std::f64::consts::PI * x).cos())
        }
    }
}

/// `q_mean + delta(t) * V`, with `V` chosen by the configured kind.
pub fn ucb_map(q_mean: &Array2<f64>, stats: &UncertaintyMaps, config: &UcbConfig, t: u64) -> Result<Array2<f64>> {
    let v = match config.kind {
        UncertaintyKind::Epistemic => &stats.v_epi,
        UncertaintyKind::Aleatoric => &stats.v_ale,
        UncertaintyKind::Total => &stats.v_all,
        UncertaintyKind::None => return Ok(q_mean.clone()),
    };
    if v.dim() != q_mean.dim() {
        return Err(shape_err(format!("{:?}", q_mean.dim()), format!("{:?}", v.dim())));
    }
    let delta = delta_schedule(config, t);
    if delta == 0.0 {
        return Ok(q_mean.clone());
    }
    let bonus = if config.on_std { v.mapv(|x| x.max(0.0).sqrt()) } else { v.clone() };
    Ok(q_mean + &(bonus * delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSelection {
    pub row: usize,
    pub col: usize,
    pub action: GraspAction,
    pub ucb_value: f64,
}

/// Masked argmax of `ucb`; ties go to the lowest row-major index. NaN
/// scores are never selected.
pub fn select_pixel(
    ucb: &Array2<f64>,
    mask: &Array2<bool>,
    action_mean: &Array3<f64>,
    obs: &Observation,
) -> Result<PixelSelection> {
    let (h, w) = ucb.dim();
    if mask.dim() != (h, w) {
        return Err(shape_err(format!("{h}x{w} mask"), format!("{:?}", mask.dim())));
    }
    if action_mean.dim() != (h, w, 2) {
        return Err(shape_err(format!("{h}x{w}x2 action map"), format!("{:?}", action_mean.dim())));
    }
    if obs.dim() != (h, w) {
        return Err(shape_err(format!("{h}x{w} observation"), format!("{:?}", obs.dim())));
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for ((r, c), &v) in ucb.indexed_iter() {
        if !mask[[r, c]] || v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, _, b)| v > b) {
            best = Some((r, c, v));
        }
    }
    let (row, col, ucb_value) = best.ok_or(Error::AllMasked)?;
    let action = GraspAction {
        row,
        col,
        alpha: action_mean[[row, col, 0]],
        beta: action_mean[[row, col, 1]],
        z: obs.height[[row, col]],
    };
    Ok(PixelSelection {
        row,
        col,
        action,
        ucb_value,
    })
}

/// Masks the pixels of the most recent failed grasps in the current scene.
#[derive(Debug, Clone)]
pub struct FailureGuard {
    recent: VecDeque<(usize, usize)>,
    capacity: usize,
}

impl Default for FailureGuard {
    fn default() -> Self {
        Self::new(3)
    }
}

impl FailureGuard {
    /// A capacity of zero disables the guard.
    pub fn new(capacity: usize) -> Self {
        Self {
            recent: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn record(&mut self, row: usize, col: usize, reward: u8) {
        if reward == 0 && self.capacity > 0 {
            if self.recent.len() == self.capacity {
                self.recent.pop_front();
            }
            self.recent.push_back((row, col));
        }
    }

    /// Call when a new scene starts.
    pub fn reset(&mut self) {
        self.recent.clear();
    }

    /// `mask` with the remembered pixels removed. Falls back to `mask` when
    /// nothing else would remain.
    pub fn apply(&self, mask: &Array2<bool>) -> Array2<bool> {
        let mut out = mask.clone();
        for &(r, c) in &self.recent {
            if let Some(m) = out.get_mut((r, c)) {
                *m = false;
            }
        }
        if out.iter().any(|&m| m) {
            out
        } else {
            mask.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(q: Array2<f64>, v: Array2<f64>) -> UncertaintyMaps {
        UncertaintyMaps {
            v_ale: v.clone(),
            v_epi: v.clone(),
            v_all: &v + &v,
            q_mean: q,
        }
    }

    #[test]
    fn schedule_values() {
        let fixed = UcbConfig::default();
        assert_eq!(delta_schedule(&fixed, 0), 1.0);
        assert_eq!(delta_schedule(&fixed, 123_456), 1.0);
        let cos = UcbConfig {
            schedule: Schedule::CosineAdaptive,
            horizon: 3000,
            ..UcbConfig::default()
        };
        assert_eq!(delta_schedule(&cos, 0), 1.0);
        assert_eq!(delta_schedule(&cos, 3000), 0.0);
        assert_eq!(delta_schedule(&cos, 9000), 0.0);
        assert!((delta_schedule(&cos, 1500) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ucb_adds_variance() {
        let q = Array2::from_elem((1, 1), 0.5);
        let s = stats(q.clone(), Array2::from_elem((1, 1), 0.2));
        let u = ucb_map(&q, &s, &UcbConfig::default(), 0).unwrap();
        assert!((u[[0, 0]] - 0.7).abs() < 1e-15);
        let none = UcbConfig {
            kind: UncertaintyKind::None,
            ..UcbConfig::default()
        };
        assert_eq!(ucb_map(&q, &s, &none, 0).unwrap(), q);
        let zero = UcbConfig {
            delta: 0.0,
            ..UcbConfig::default()
        };
        assert_eq!(ucb_map(&q, &s, &zero, 0).unwrap(), q);
    }

    #[test]
    fn selection_rules() {
        let obs = Observation::floor(4, 5);
        let a = Array3::zeros((4, 5, 2));
        let mut mask = Array2::from_elem((4, 5), false);
        mask[[2, 3]] = true;
        let u = Array2::from_shape_fn((4, 5), |(r, c)| (r * 5 + c) as f64);
        assert_eq!(select_pixel(&u, &mask, &a, &obs).unwrap().row, 2);
        mask[[1, 1]] = true;
        mask[[3, 0]] = true;
        let flat = Array2::from_elem((4, 5), 0.3);
        let s = select_pixel(&flat, &mask, &a, &obs).unwrap();
        assert_eq!((s.row, s.col), (1, 1));
        let none = Array2::from_elem((4, 5), false);
        assert!(matches!(select_pixel(&flat, &none, &a, &obs), Err(Error::AllMasked)));
    }

    #[test]
    fn guard_masks_recent_failures() {
        let mut g = FailureGuard::default();
        let mask = Array2::from_elem((3, 3), true);
        for p in [(0, 0), (0, 1), (0, 2), (1, 0)] {
            g.record(p.0, p.1, 0);
        }
        g.record(2, 2, 1);
        let m = g.apply(&mask);
        assert!(m[[0, 0]] && !m[[0, 1]] && !m[[0, 2]] && !m[[1, 0]] && m[[2, 2]]);
        g.reset();
        assert_eq!(g.apply(&mask), mask);
        assert_eq!(FailureGuard::new(0).apply(&mask), mask);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("epi".parse::<UncertaintyKind>().unwrap(), UncertaintyKind::Epistemic);
        assert_eq!("cosine".parse::<Schedule>().unwrap(), Schedule::CosineAdaptive);
        assert!("x".parse::<Schedule>().is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance(vals in prop::collection::vec(-5.0f64..5.0, 12), k in -10.0f64..10.0) {
            let obs = Observation::floor(3, 4);
            let a = Array3::zeros((3, 4, 2));
            let mask = Array2::from_shape_fn((3, 4), |(r, c)| (r + c) % 3 != 0);
            let u = Array2::from_shape_vec((3, 4), vals).unwrap();
            let s1 = select_pixel(&u, &mask, &a, &obs).unwrap();
            let s2 = select_pixel(&(&u + k), &mask, &a, &obs).unwrap();
            prop_assert_eq!((s1.row, s1.col), (s2.row, s2.col));
        }

        #[test]
        fn schedule_is_monotone(t in 0u64..5000, horizon in 1u64..4000) {
            let c = UcbConfig { schedule: Schedule::CosineAdaptive, horizon, ..UcbConfig::default() };
            let d = delta_schedule(&c, t);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!(delta_schedule(&c, t + 1) <= d);
        }
    }
}
