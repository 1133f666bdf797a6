//! Deterministic synthetic bin-picking environment.
//!
//! A [`Scene`] is a set of non-overlapping objects in a rectangular bin. It
//! renders to a top-down [`Observation`] (height, normals, intensity) in which
//! some materials are corrupted, and it scores grasps against a hidden
//! success model that always uses the true, uncorrupted geometry.

mod io;
mod physics;
mod render;
mod scene;

pub use io::{
    parse_scene, read_scene, scene_to_string, write_observation_csv, write_observation_pgm,
    write_scene, SCENE_FORMAT_VERSION,
};
pub use physics::{clearing_rate, normal_std, tilt_from_axis, tool_axis, GraspAction, GraspOutcome, MAX_TILT};
pub use render::{Observation, FLOOR_INTENSITY};
pub use scene::{Difficulty, Material, ObjectSpec, Scene, Shape};

use crate::error::Result;

/// Constants of the hidden success model and of the sensor corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Grid rows and columns.
    pub grid: (usize, usize),
    /// Width of the bin wall in cells; the wall is excluded from the bin mask.
    pub wall: usize,
    /// Flatness gain `c_f` in `exp(-c_f * s^2)`.
    pub flatness_gain: f64,
    /// Alignment exponent `c_a` in `max(0, cos θ)^c_a`.
    pub alignment_power: f64,
    /// Half-width of the normal-std window.
    pub window: usize,
    pub holes_transparent: f64,
    pub holes_semi_transparent: f64,
    /// Depth noise sigma as a fraction of the object height.
    pub depth_noise_ratio: f64,
    /// Placement attempts per object before giving up.
    pub placement_retries: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            grid: (64, 64),
            wall: 2,
            flatness_gain: 40.0,
            alignment_power: 4.0,
            window: 2,
            holes_transparent: 0.4,
            holes_semi_transparent: 0.2,
            depth_noise_ratio: 0.15,
            placement_retries: 1000,
        }
    }
}

/// The simulator: a parameter set plus the scene operations.
#[derive(Debug, Clone, Default)]
pub struct BinSim {
    pub params: SimParams,
}

impl BinSim {
    pub fn new(params: SimParams) -> Self {
        Self { params }
    }

    pub fn generate_scene(&self, seed: u64, n_objects: usize, difficulty: Difficulty) -> Result<Scene> {
        scene::generate(&self.params, seed, n_objects, difficulty)
    }

    pub fn render(&self, scene: &Scene) -> Observation {
        render::render(&self.params, scene)
    }

    pub fn true_success_prob(&self, scene: &Scene, action: &GraspAction) -> f64 {
        physics::true_success_prob(&self.params, scene, action)
    }

    pub fn execute_grasp(
        &self,
        scene: &Scene,
        action: &GraspAction,
        attempt_index: u64,
    ) -> Result<(GraspOutcome, Scene)> {
        physics::execute_grasp(&self.params, scene, action, attempt_index)
    }
}

/// [`BinSim::generate_scene`] with default parameters.
pub fn generate_scene(seed: u64, n_objects: usize, difficulty: Difficulty) -> Result<Scene> {
    BinSim::default().generate_scene(seed, n_objects, difficulty)
}

/// [`BinSim::render`] with default parameters.
pub fn render(scene: &Scene) -> Observation {
    BinSim::default().render(scene)
}

/// [`BinSim::true_success_prob`] with default parameters.
pub fn true_success_prob(scene: &Scene, action: &GraspAction) -> f64 {
    BinSim::default().true_success_prob(scene, action)
}

/// [`BinSim::execute_grasp`] with default parameters.
pub fn execute_grasp(
    scene: &Scene,
    action: &GraspAction,
    attempt_index: u64,
) -> Result<(GraspOutcome, Scene)> {
    BinSim::default().execute_grasp(scene, action, attempt_index)
}
