//! Offline dataset: rendered scenes with approximate reward and action
//! labels derived from the observation alone.

use std::ops::RangeInclusive;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridio::write_atomic;
use crate::rng::{stream, Tag};
use crate::sim::{normal_std, read_scene, tilt_from_axis, write_scene, BinSim, Difficulty, Observation, Scene};

/// Constants of the label heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Pixels higher than this are objects.
    pub floor_threshold: f64,
    /// Half-width of the normal-std window.
    pub window: usize,
    /// `q = 1 / (1 + c_q * s)`.
    pub c_q: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            floor_threshold: 0.5,
            window: 2,
            c_q: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OfflineSample {
    pub scene: Scene,
    pub observation: Observation,
    pub target_q: Array2<f64>,
    pub target_action: Array3<f64>,
    pub valid_mask: Array2<bool>,
}

impl OfflineSample {
    pub fn from_scene(sim: &BinSim, scene: Scene, labels: &LabelConfig) -> Self {
        let observation = sim.render(&scene);
        let (target_q, target_action, valid_mask) = offline_labels(&observation, labels);
        Self {
            scene,
            observation,
            target_q,
            target_action,
            valid_mask,
        }
    }
}

/// Windowed standard deviation of the observed normals at every pixel.
pub fn observed_normal_std(obs: &Observation, window: usize) -> Array2<f64> {
    let (h, w) = obs.dim();
    let mut out = Array2::zeros((h, w));
    let mut buf = Vec::with_capacity((2 * window + 1).pow(2));
    for r in 0..h {
        for c in 0..w {
            buf.clear();
            for rr in r.saturating_sub(window)..=(r + window).min(h - 1) {
                for cc in c.saturating_sub(window)..=(c + window).min(w - 1) {
                    buf.push(obs.normal(rr, cc));
                }
            }
            out[[r, c]] = normal_std(&buf);
        }
    }
    out
}

/// `(target_q, target_action, valid_mask)`. Object pixels come from
/// background subtraction; their reward label falls with the local normal
/// spread and their action points the tool along the observed normal.
pub fn offline_labels(obs: &Observation, cfg: &LabelConfig) -> (Array2<f64>, Array3<f64>, Array2<bool>) {
    let (h, w) = obs.dim();
    let valid = obs.height.mapv(|z| z > cfg.floor_threshold);
    let s = observed_normal_std(obs, cfg.window);
    let mut q = Array2::zeros((h, w));
    let mut a = Array3::zeros((h, w, 2));
    for ((r, c), &v) in valid.indexed_iter() {
        if v {
            q[[r, c]] = 1.0 / (1.0 + cfg.c_q * s[[r, c]]);
            let (alpha, beta) = tilt_from_axis(obs.normal(r, c));
            a[[r, c, 0]] = alpha;
            a[[r, c, 1]] = beta;
        }
    }
    (q, a, valid)
}

/// Settings of one dataset build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seeds: Vec<u64>,
    /// Scenes per seed.
    pub n_scenes: usize,
    pub objects: RangeInclusive<usize>,
    pub difficulty: Difficulty,
    pub labels: LabelConfig,
}

impl DatasetSpec {
    pub fn new(seed: u64, n_scenes: usize) -> Self {
        Self {
            seeds: vec![seed],
            n_scenes,
            objects: 5..=10,
            difficulty: Difficulty::Easy,
            labels: LabelConfig::default(),
        }
    }

    /// Scene seed and object count of scene `i` under base seed `seed`.
    fn scene_plan(&self, seed: u64, i: usize) -> (u64, usize) {
        let mut rng = stream(seed, Tag::Dataset, i as u64);
        let scene_seed = rng.next_u64();
        (scene_seed, rng.random_range(self.objects.clone()))
    }

    pub fn scenes(&self, sim: &BinSim) -> Result<Vec<Scene>> {
        if self.objects.is_empty() {
            return Err(Error::InvalidArgument("empty object count range".into()));
        }
        let mut out = Vec::with_capacity(self.seeds.len() * self.n_scenes);
        for &seed in &self.seeds {
            for i in 0..self.n_scenes {
                let (scene_seed, n) = self.scene_plan(seed, i);
                out.push(sim.generate_scene(scene_seed, n, self.difficulty)?);
            }
        }
        Ok(out)
    }
}

/// Generates, renders and labels every scene of `spec`.
pub fn build_offline_dataset(sim: &BinSim, spec: &DatasetSpec) -> Result<Vec<OfflineSample>> {
    Ok(spec
        .scenes(sim)?
        .into_iter()
        .map(|s| OfflineSample::from_scene(sim, s, &spec.labels))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    spec: DatasetSpec,
    samples: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    seed: u64,
    objects: usize,
}

/// Writes `manifest.json` and one scene file per sample under
/// `dir/scenes/`. Labels are recomputed on load.
pub fn save_dataset(dir: &Path, spec: &DatasetSpec, samples: &[OfflineSample]) -> Result<()> {
    std::fs::create_dir_all(dir.join("scenes"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let file = format!("scenes/scene_{i:05}.txt");
        write_scene(&dir.join(&file), &s.scene)?;
        entries.push(ManifestEntry {
            file,
            seed: s.scene.rng_seed,
            objects: s.scene.object_count(),
        });
    }
    let manifest = Manifest {
        format: 1,
        spec: spec.clone(),
        samples: entries,
    };
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_dataset(dir: &Path, sim: &BinSim) -> Result<(DatasetSpec, Vec<OfflineSample>)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != 1 {
        return Err(Error::InvalidArgument(format!("unsupported dataset format {}", manifest.format)));
    }
    let samples = manifest
        .samples
        .iter()
        .map(|e| Ok(OfflineSample::from_scene(sim, read_scene(&dir.join(&e.file))?, &manifest.spec.labels)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest.spec, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Material, ObjectSpec, Shape};

    #[test]
    fn empty_scene_has_no_labels() {
        let sim = BinSim::default();
        let s = OfflineSample::from_scene(&sim, Scene::empty((32, 32), 2, 1).unwrap(), &LabelConfig::default());
        assert!(s.valid_mask.iter().all(|&v| !v));
        assert!(s.target_q.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn flat_box_top_saturates() {
        let mut scene = Scene::empty((32, 32), 2, 1).unwrap();
        scene.objects.push(ObjectSpec {
            id: 0,
            shape: Shape::Box,
            pose: (15.0, 15.0, 0.0),
            extent: (9.0, 9.0, 4.0),
            material: Material::Opaque,
            base_graspability: 1.0,
        });
        let s = OfflineSample::from_scene(&BinSim::default(), scene, &LabelConfig::default());
        assert_eq!(s.target_q[[15, 15]], 1.0);
        assert_eq!(s.target_action[[15, 15, 0]], 0.0);
        assert_eq!(s.target_action[[15, 15, 1]], 0.0);
        assert!(s.valid_mask[[15, 15]] && !s.valid_mask[[3, 3]]);
    }

    #[test]
    fn labels_fall_with_normal_spread() {
        let sim = BinSim::default();
        let spec = DatasetSpec {
            difficulty: Difficulty::Mixed,
            ..DatasetSpec::new(3, 3)
        };
        for s in build_offline_dataset(&sim, &spec).unwrap() {
            let std = observed_normal_std(&s.observation, 2);
            let mut pairs: Vec<(f64, f64)> = s
                .valid_mask
                .indexed_iter()
                .filter(|(_, &v)| v)
                .map(|(i, _)| (std[i], s.target_q[i]))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(pairs.windows(2).all(|p| p[1].1 <= p[0].1));
            assert!(pairs.iter().all(|p| (0.0..=1.0).contains(&p.1)));
        }
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let sim = BinSim::default();
        let spec = DatasetSpec::new(1, 4);
        let a = build_offline_dataset(&sim, &spec).unwrap();
        let b = build_offline_dataset(&sim, &spec).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scene, y.scene);
            assert!((5..=10).contains(&x.scene.object_count()));
        }
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &spec, &a).unwrap();
        let (spec2, back) = load_dataset(dir.path(), &sim).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(back[2].target_q, a[2].target_q);
    }
}
