use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::SimParams;
use crate::error::{Error, Result};
use crate::rng::{stream, Tag};

/// Largest approach tilt per axis.
pub const MAX_TILT: f64 = FRAC_PI_4;

/// A suction grasp at pixel `(row, col)` with approach tilts `alpha`
/// (about the row axis) and `beta` (about the column axis). `z` is read from
/// the observed height map and is informational only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspAction {
    pub row: usize,
    pub col: usize,
    pub alpha: f64,
    pub beta: f64,
    pub z: f64,
}

impl GraspAction {
    pub fn new(row: usize, col: usize, alpha: f64, beta: f64) -> Self {
        Self {
            row,
            col,
            alpha,
            beta,
            z: 0.0,
        }
    }

    /// Unit tool axis `(t_row, t_col, t_z)`; the gripper approaches along
    /// `-t`. Zero tilt is straight down.
    pub fn tool_axis(&self) -> [f64; 3] {
        tool_axis(self.alpha, self.beta)
    }

    pub fn angles_in_bounds(&self) -> bool {
        self.alpha.abs() <= MAX_TILT && self.beta.abs() <= MAX_TILT
    }
}

pub fn tool_axis(alpha: f64, beta: f64) -> [f64; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    [sb, -sa * cb, ca * cb]
}

/// Inverse of [`tool_axis`] for a unit vector with positive z, clamped to
/// the tilt bounds.
pub fn tilt_from_axis(axis: [f64; 3]) -> (f64, f64) {
    let beta = axis[0].clamp(-1.0, 1.0).asin();
    let alpha = (-axis[1]).atan2(axis[2]);
    (alpha.clamp(-MAX_TILT, MAX_TILT), beta.clamp(-MAX_TILT, MAX_TILT))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub reward: u8,
    pub removed_object_id: Option<u32>,
    /// Diagnostic only; learners never see it.
    pub true_success_prob: f64,
}

pub(crate) fn true_success_prob(params: &SimParams, scene: &Scene, action: &GraspAction) -> f64 {
    let (h, w) = scene.grid_size;
    if action.row >= h || action.col >= w {
        return 0.0;
    }
    let (owner, _, normal) = scene.true_surface(action.row, action.col);
    let Some(idx) = owner else {
        return 0.0;
    };
    let k = params.window;
    let mut normals = Vec::with_capacity((2 * k + 1).pow(2));
    for r in action.row.saturating_sub(k)..=(action.row + k).min(h - 1) {
        for c in action.col.saturating_sub(k)..=(action.col + k).min(w - 1) {
            normals.push(scene.true_surface(r, c).2);
        }
    }
    let s = normal_std(&normals);
    let flatness = (-params.flatness_gain * s * s).exp();
    let t = action.tool_axis();
    let cos = t[0] * normal[0] + t[1] * normal[1] + t[2] * normal[2];
    let alignment = cos.max(0.0).powf(params.alignment_power);
    scene.objects[idx].base_graspability * flatness * alignment
}

/// Standard deviation of a set of unit vectors:
/// `sqrt(mean |n_i - mean(n)|^2)`.
pub fn normal_std(normals: &[[f64; 3]]) -> f64 {
    if normals.is_empty() {
        return 0.0;
    }
    let m = normals.len() as f64;
    let mut mean = [0.0; 3];
    for n in normals {
        for k in 0..3 {
            mean[k] += n[k];
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    let ss: f64 = normals
        .iter()
        .map(|n| (0..3).map(|k| (n[k] - mean[k]).powi(2)).sum::<f64>())
        .sum();
    (ss / m).sqrt()
}

pub(crate) fn execute_grasp(
    params: &SimParams,
    scene: &Scene,
    action: &GraspAction,
    attempt_index: u64,
) -> Result<(GraspOutcome, Scene)> {
    if !scene.in_bin(action.row, action.col) {
        return Err(Error::InvalidArgument(format!(
            "grasp at ({}, {}) is outside the bin",
            action.row, action.col
        )));
    }
    let p = true_success_prob(params, scene, action);
    let u: f64 = stream(scene.rng_seed, Tag::Grasp, attempt_index).random();
    if u < p {
        let idx = scene
            .object_at(action.row, action.col)
            .expect("positive success probability implies an object");
        let mut next = scene.clone();
        let removed = next.objects.remove(idx);
        Ok((
            GraspOutcome {
                reward: 1,
                removed_object_id: Some(removed.id),
                true_success_prob: p,
            },
            next,
        ))
    } else {
        Ok((
            GraspOutcome {
                reward: 0,
                removed_object_id: None,
                true_success_prob: p,
            },
            scene.clone(),
        ))
    }
}

/// Fraction of the initial objects that were removed.
pub fn clearing_rate(initial_count: usize, remaining_count: usize) -> Result<f64> {
    if initial_count == 0 {
        return Err(Error::EmptyBin);
    }
    if remaining_count > initial_count {
        return Err(Error::InvalidArgument(format!(
            "remaining {remaining_count} exceeds initial {initial_count}"
        )));
    }
    Ok((initial_count - remaining_count) as f64 / initial_count as f64)
}
