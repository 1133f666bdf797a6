use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::scene::{Material, Scene};
use super::SimParams;
use crate::rng::{stream, Tag};

/// Intensity of the bin floor.
pub const FLOOR_INTENSITY: f64 = 0.2;

/// Top-down sensed grids. Normals are `(n_row, n_col, n_z)` unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub height: Array2<f64>,
    pub normals: Array3<f64>,
    pub intensity: Array2<f64>,
}

impl Observation {
    /// A flat, empty floor.
    pub fn floor(rows: usize, cols: usize) -> Self {
        let mut normals = Array3::zeros((rows, cols, 3));
        normals.slice_mut(ndarray::s![.., .., 2]).fill(1.0);
        Self {
            height: Array2::zeros((rows, cols)),
            normals,
            intensity: Array2::from_elem((rows, cols), FLOOR_INTENSITY),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.height.dim()
    }

    pub fn normal(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.normals[[row, col, 0]],
            self.normals[[row, col, 1]],
            self.normals[[row, col, 2]],
        ]
    }
}

fn material_intensity(material: Material) -> Option<f64> {
    match material {
        Material::Opaque => None,
        Material::Transparent => Some(0.28),
        Material::SemiTransparent => Some(0.38),
        Material::CurvedGlossy => Some(0.97),
    }
}

pub(crate) fn render(params: &SimParams, scene: &Scene) -> Observation {
    let (h, w) = scene.grid_size;
    let mut obs = Observation::floor(h, w);
    let seed = scene.rng_seed;
    // Per-pixel flag: depth reading corrupted (needs normals from depth).
    let mut noisy = Array2::from_elem((h, w), false);
    let owner = scene.owner_map();

    for (idx, obj) in scene.objects.iter().enumerate() {
        let tint: f64 = stream(seed, Tag::Tint, obj.id as u64).random_range(0.45..0.85);
        let holes = match obj.material {
            Material::Transparent => params.holes_transparent,
            Material::SemiTransparent => params.holes_semi_transparent,
            _ => 0.0,
        };
        let sigma = params.depth_noise_ratio * obj.extent.2;
        for (r, c) in obj.footprint(h, w) {
            debug_assert_eq!(owner[[r, c]], idx as i32);
            let (z, n) = obj
                .surface(r as f64, c as f64)
                .expect("footprint cell lies on the surface");
            let pixel = (r * w + c) as u64;
            obs.intensity[[r, c]] =
                material_intensity(obj.material).unwrap_or(tint * (0.7 + 0.3 * n[2]));
            match obj.material {
                Material::Opaque => {
                    obs.height[[r, c]] = z;
                    for k in 0..3 {
                        obs.normals[[r, c, k]] = n[k];
                    }
                }
                Material::CurvedGlossy => {
                    // Saturated specular return: flat plateau at the peak.
                    obs.height[[r, c]] = obj.extent.2;
                }
                Material::Transparent | Material::SemiTransparent => {
                    let u: f64 = stream(seed, Tag::Holes, pixel).random();
                    if u < holes {
                        continue; // reads the floor
                    }
                    let e: f64 = stream(seed, Tag::Depth, pixel).sample(StandardNormal);
                    obs.height[[r, c]] = (z + sigma * e).max(0.0);
                    noisy[[r, c]] = true;
                }
            }
        }
    }

    // Normals of corrupted pixels come from the corrupted depth, using
    // neighbours on the same object that are not holes.
    for r in 0..h {
        for c in 0..w {
            if !noisy[[r, c]] {
                continue;
            }
            let me = owner[[r, c]];
            let z0 = obs.height[[r, c]];
            let usable = |rr: usize, cc: usize| owner[[rr, cc]] == me && noisy[[rr, cc]];
            let diff = |minus: Option<(usize, usize)>, plus: Option<(usize, usize)>| {
                let zm = minus.filter(|&(a, b)| usable(a, b)).map(|(a, b)| obs.height[[a, b]]);
                let zp = plus.filter(|&(a, b)| usable(a, b)).map(|(a, b)| obs.height[[a, b]]);
                match (zm, zp) {
                    (Some(m), Some(p)) => (p - m) / 2.0,
                    (Some(m), None) => z0 - m,
                    (None, Some(p)) => p - z0,
                    (None, None) => 0.0,
                }
            };
            let gr = diff(
                r.checked_sub(1).map(|a| (a, c)),
                (r + 1 < h).then_some((r + 1, c)),
            );
            let gc = diff(
                c.checked_sub(1).map(|b| (r, b)),
                (c + 1 < w).then_some((r, c + 1)),
            );
            let norm = (gr * gr + gc * gc + 1.0).sqrt();
            obs.normals[[r, c, 0]] = -gr / norm;
            obs.normals[[r, c, 1]] = -gc / norm;
            obs.normals[[r, c, 2]] = 1.0 / norm;
        }
    }
    obs
}
