use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimParams;
use crate::error::{Error, Result};
use crate::rng::{stream, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Oriented rectangle with a flat top.
    Box,
    /// Upright cylinder: elliptic disc footprint with a flat top.
    Cylinder,
    /// Elliptic paraboloid cap, `z = h (1 - rho^2)`.
    Dome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Opaque,
    Transparent,
    SemiTransparent,
    /// Specular curved surface. The sensor saturates and reports a flat
    /// plateau at the peak height, hiding the curvature.
    CurvedGlossy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
    Mixed,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $name:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"),
                        other
                    ))),
                }
            }
        }
    };
}

text_enum!(Shape { Box => "box", Cylinder => "cylinder", Dome => "dome" });
text_enum!(Material {
    Opaque => "opaque",
    Transparent => "transparent",
    SemiTransparent => "semi_transparent",
    CurvedGlossy => "curved_glossy",
});
text_enum!(Difficulty { Easy => "easy", Hard => "hard", Mixed => "mixed" });

impl Material {
    /// Materials whose depth reading is corrupted by holes and noise.
    pub fn is_transparent(self) -> bool {
        matches!(self, Material::Transparent | Material::SemiTransparent)
    }
}

/// One object in the bin. Pose is in (fractional) grid cells; cell `(r, c)`
/// has its center at `(r, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub shape: Shape,
    /// `(row, col, yaw)`.
    pub pose: (f64, f64, f64),
    /// `(length, width, height)`; length runs along the yaw direction.
    pub extent: (f64, f64, f64),
    pub material: Material,
    pub base_graspability: f64,
}

impl ObjectSpec {
    /// Coordinates of a point in the object frame.
    fn local(&self, r: f64, c: f64) -> (f64, f64) {
        let (pr, pc, yaw) = self.pose;
        let (s, co) = yaw.sin_cos();
        let (dr, dc) = (r - pr, c - pc);
        (co * dr + s * dc, -s * dr + co * dc)
    }

    fn half_axes(&self) -> (f64, f64) {
        (self.extent.0 / 2.0, self.extent.1 / 2.0)
    }

    /// Whether the cell center `(r, c)` belongs to the footprint.
    pub fn contains(&self, r: f64, c: f64) -> bool {
        let (u, v) = self.local(r, c);
        let (a, b) = self.half_axes();
        match self.shape {
            Shape::Box => u.abs() <= a && v.abs() <= b,
            Shape::Cylinder | Shape::Dome => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
        }
    }

    /// True top surface at `(r, c)`: height and unit normal
    /// `(n_row, n_col, n_z)`. `None` outside the footprint.
    pub fn surface(&self, r: f64, c: f64) -> Option<(f64, [f64; 3])> {
        if !self.contains(r, c) {
            return None;
        }
        let h = self.extent.2;
        match self.shape {
            Shape::Box | Shape::Cylinder => Some((h, [0.0, 0.0, 1.0])),
            Shape::Dome => {
                let (u, v) = self.local(r, c);
                let (a, b) = self.half_axes();
                let rho2 = (u / a).powi(2) + (v / b).powi(2);
                let dz_du = -2.0 * h * u / (a * a);
                let dz_dv = -2.0 * h * v / (b * b);
                let (s, co) = self.pose.2.sin_cos();
                let dz_dr = dz_du * co - dz_dv * s;
                let dz_dc = dz_du * s + dz_dv * co;
                let norm = (dz_dr * dz_dr + dz_dc * dz_dc + 1.0).sqrt();
                Some((h * (1.0 - rho2), [-dz_dr / norm, -dz_dc / norm, 1.0 / norm]))
            }
        }
    }

    /// Inclusive cell ranges `(r0, r1, c0, c1)` that may intersect the
    /// footprint, clipped to the grid.
    pub(crate) fn cell_bounds(&self, rows: usize, cols: usize) -> Option<(usize, usize, usize, usize)> {
        let (a, b) = self.half_axes();
        let radius = (a * a + b * b).sqrt();
        let (pr, pc, _) = self.pose;
        let r0 = (pr - radius).floor().max(0.0);
        let c0 = (pc - radius).floor().max(0.0);
        let r1 = (pr + radius).ceil().min(rows as f64 - 1.0);
        let c1 = (pc + radius).ceil().min(cols as f64 - 1.0);
        if r1 < r0 || c1 < c0 {
            return None;
        }
        Some((r0 as usize, r1 as usize, c0 as usize, c1 as usize))
    }

    /// Footprint cells, row-major.
    pub fn footprint(&self, rows: usize, cols: usize) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        if let Some((r0, r1, c0, c1)) = self.cell_bounds(rows, cols) {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if self.contains(r as f64, c as f64) {
                        cells.push((r, c));
                    }
                }
            }
        }
        cells
    }
}

/// Bin contents. Immutable: grasps return a new scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid_size: (usize, usize),
    pub objects: Vec<ObjectSpec>,
    pub bin_mask: Array2<bool>,
    pub rng_seed: u64,
}

impl Scene {
    /// An empty bin whose mask excludes a wall of `wall` cells.
    pub fn empty(grid_size: (usize, usize), wall: usize, rng_seed: u64) -> Result<Self> {
        let (h, w) = grid_size;
        if h < 16 || w < 16 {
            return Err(Error::InvalidArgument(format!("grid {h}x{w} is smaller than 16x16")));
        }
        if 2 * wall >= h.min(w) {
            return Err(Error::InvalidArgument(format!("wall {wall} leaves no bin interior")));
        }
        let bin_mask = Array2::from_shape_fn((h, w), |(r, c)| {
            r >= wall && r < h - wall && c >= wall && c < w - wall
        });
        Ok(Self {
            grid_size,
            objects: Vec::new(),
            bin_mask,
            rng_seed,
        })
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    /// Index into `objects` of the object whose footprint holds `(row, col)`.
    pub fn object_at(&self, row: usize, col: usize) -> Option<usize> {
        // Footprints are disjoint, so the first hit is the topmost.
        self.objects
            .iter()
            .position(|o| o.contains(row as f64, col as f64))
    }

    /// Per-pixel owning object index, or -1 on the floor.
    pub fn owner_map(&self) -> Array2<i32> {
        let (h, w) = self.grid_size;
        let mut owner = Array2::from_elem((h, w), -1);
        for (i, obj) in self.objects.iter().enumerate() {
            for (r, c) in obj.footprint(h, w) {
                owner[[r, c]] = i as i32;
            }
        }
        owner
    }

    /// True height and normal at a pixel (floor: `0`, `(0, 0, 1)`).
    pub fn true_surface(&self, row: usize, col: usize) -> (Option<usize>, f64, [f64; 3]) {
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some((z, n)) = obj.surface(row as f64, col as f64) {
                return (Some(i), z, n);
            }
        }
        (None, 0.0, [0.0, 0.0, 1.0])
    }

    pub fn in_bin(&self, row: usize, col: usize) -> bool {
        row < self.grid_size.0 && col < self.grid_size.1 && self.bin_mask[[row, col]]
    }

    /// Checks the structural invariants: extents, graspability range, unique
    /// ids, footprints inside the bin and pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.grid_size;
        if h < 16 || w < 16 || self.bin_mask.dim() != (h, w) {
            return Err(Error::InvalidArgument("bad grid size or mask shape".into()));
        }
        let mut owner = Array2::from_elem((h, w), -1i64);
        let mut ids = std::collections::HashSet::new();
        for obj in &self.objects {
            let (l, wd, ht) = obj.extent;
            if l < 1.0 || wd < 1.0 || ht < 1.0 {
                return Err(Error::InvalidArgument(format!("object {} extent below one cell", obj.id)));
            }
            if !(0.0..=1.0).contains(&obj.base_graspability) {
                return Err(Error::InvalidArgument(format!("object {} graspability out of range", obj.id)));
            }
            if !ids.insert(obj.id) {
                return Err(Error::InvalidArgument(format!("duplicate object id {}", obj.id)));
            }
            for (r, c) in obj.footprint(h, w) {
                if !self.bin_mask[[r, c]] {
                    return Err(Error::InvalidArgument(format!("object {} leaves the bin", obj.id)));
                }
                if owner[[r, c]] >= 0 {
                    return Err(Error::InvalidArgument(format!(
                        "objects {} and {} overlap",
                        owner[[r, c]],
                        obj.id
                    )));
                }
                owner[[r, c]] = obj.id as i64;
            }
        }
        Ok(())
    }
}

fn pick_kind(rng: &mut impl Rng, difficulty: Difficulty) -> (Shape, Material) {
    let hard = match difficulty {
        Difficulty::Easy => false,
        Difficulty::Hard => true,
        Difficulty::Mixed => rng.random_bool(0.5),
    };
    if !hard {
        let x: f64 = rng.random();
        let shape = if x < 0.45 {
            Shape::Box
        } else if x < 0.8 {
            Shape::Cylinder
        } else {
            Shape::Dome
        };
        return (shape, Material::Opaque);
    }
    match rng.random_range(0..3u32) {
        0 | 1 => {
            let material = if rng.random_bool(0.5) {
                Material::Transparent
            } else {
                Material::SemiTransparent
            };
            let shape = if rng.random_bool(0.5) { Shape::Box } else { Shape::Cylinder };
            (shape, material)
        }
        _ => (Shape::Dome, Material::CurvedGlossy),
    }
}

fn pick_extent(rng: &mut impl Rng, shape: Shape, material: Material) -> (f64, f64, f64) {
    match shape {
        Shape::Box => {
            let a = rng.random_range(6.0..11.0);
            let b = rng.random_range(5.0..9.0);
            (f64::max(a, b), f64::min(a, b), rng.random_range(2.0..7.0))
        }
        Shape::Cylinder => {
            let d = rng.random_range(5.0..9.0);
            (d, d, rng.random_range(3.0..8.0))
        }
        Shape::Dome => {
            let a = rng.random_range(7.0..12.0);
            let b = rng.random_range(7.0..12.0);
            let h = match material {
                Material::CurvedGlossy => rng.random_range(2.5..4.0),
                _ => rng.random_range(1.5..3.5),
            };
            (f64::max(a, b), f64::min(a, b), h)
        }
    }
}

fn pick_graspability(rng: &mut impl Rng, material: Material) -> f64 {
    match material {
        Material::Opaque => rng.random_range(0.9..1.0),
        Material::Transparent | Material::SemiTransparent => rng.random_range(0.85..0.95),
        Material::CurvedGlossy => rng.random_range(0.7..0.9),
    }
}

pub(crate) fn generate(
    params: &SimParams,
    seed: u64,
    n_objects: usize,
    difficulty: Difficulty,
) -> Result<Scene> {
    if n_objects > 30 {
        return Err(Error::InvalidArgument(format!("n_objects {n_objects} exceeds 30")));
    }
    let mut scene = Scene::empty(params.grid, params.wall, seed)?;
    let (h, w) = params.grid;
    let mut rng = stream(seed, Tag::Scene, 0);
    // Occupied cells dilated by one, so objects never touch.
    let mut blocked = Array2::from_elem((h, w), false);
    let lo = params.wall as f64;
    for i in 0..n_objects {
        let (shape, material) = pick_kind(&mut rng, difficulty);
        let extent = pick_extent(&mut rng, shape, material);
        let base_graspability = pick_graspability(&mut rng, material);
        let mut placed = None;
        for _ in 0..params.placement_retries {
            let yaw = if shape == Shape::Cylinder { 0.0 } else { rng.random_range(0.0..PI) };
            let pose = (
                rng.random_range(lo..(h as f64 - lo)),
                rng.random_range(lo..(w as f64 - lo)),
                yaw,
            );
            let candidate = ObjectSpec {
                id: i as u32,
                shape,
                pose,
                extent,
                material,
                base_graspability,
            };
            let cells = candidate.footprint(h, w);
            if cells.is_empty() {
                continue;
            }
            if cells.iter().all(|&(r, c)| scene.bin_mask[[r, c]] && !blocked[[r, c]]) {
                placed = Some((candidate, cells));
                break;
            }
        }
        let Some((obj, cells)) = placed else {
            return Err(Error::SceneOverflow {
                placed: i,
                requested: n_objects,
                retries: params.placement_retries,
            });
        };
        for (r, c) in cells {
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    blocked[[rr, cc]] = true;
                }
            }
        }
        scene.objects.push(obj);
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_has_no_objects() {
        let s = generate(&SimParams::default(), 7, 0, Difficulty::Easy).unwrap();
        assert!(s.objects.is_empty());
        s.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let p = SimParams::default();
        let a = generate(&p, 7, 5, Difficulty::Easy).unwrap();
        let b = generate(&p, 7, 5, Difficulty::Easy).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!(x.pose.0.to_bits(), y.pose.0.to_bits());
            assert_eq!(x.extent.2.to_bits(), y.extent.2.to_bits());
        }
    }

    #[test]
    fn seventeen_mixed_objects_are_disjoint() {
        let s = generate(&SimParams::default(), 7, 17, Difficulty::Mixed).unwrap();
        assert_eq!(s.objects.len(), 17);
        // brute force pairwise footprint intersection
        let fps: Vec<_> = s.objects.iter().map(|o| o.footprint(64, 64)).collect();
        for i in 0..fps.len() {
            assert!(!fps[i].is_empty());
            for j in (i + 1)..fps.len() {
                for cell in &fps[i] {
                    assert!(!fps[j].contains(cell), "objects {i} and {j} share {cell:?}");
                }
            }
            for &(r, c) in &fps[i] {
                assert!(s.bin_mask[[r, c]]);
            }
        }
    }

    #[test]
    fn too_many_objects_is_rejected() {
        assert!(generate(&SimParams::default(), 1, 31, Difficulty::Easy).is_err());
        let small = SimParams {
            grid: (16, 16),
            placement_retries: 50,
            ..SimParams::default()
        };
        match generate(&small, 1, 30, Difficulty::Easy) {
            Err(Error::SceneOverflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn easy_scenes_are_opaque() {
        let s = generate(&SimParams::default(), 3, 12, Difficulty::Easy).unwrap();
        assert!(s.objects.iter().all(|o| o.material == Material::Opaque));
        let s = generate(&SimParams::default(), 3, 12, Difficulty::Hard).unwrap();
        assert!(s.objects.iter().all(|o| o.material != Material::Opaque));
    }

    #[test]
    fn dome_normal_tilt_matches_slope() {
        let dome = ObjectSpec {
            id: 0,
            shape: Shape::Dome,
            pose: (30.0, 30.0, 0.7),
            extent: (10.0, 8.0, 3.0),
            material: Material::Opaque,
            base_graspability: 1.0,
        };
        for &(r, c) in &[(30.0, 30.0), (31.0, 32.0), (28.0, 29.0), (33.0, 30.0)] {
            let (_, n) = dome.surface(r, c).unwrap();
            // slope from a central difference of the analytic height
            let eps = 1e-6;
            let z = |r: f64, c: f64| {
                let (u, v) = dome.local(r, c);
                3.0 * (1.0 - (u / 5.0).powi(2) - (v / 4.0).powi(2))
            };
            let gr = (z(r + eps, c) - z(r - eps, c)) / (2.0 * eps);
            let gc = (z(r, c + eps) - z(r, c - eps)) / (2.0 * eps);
            let slope = (gr * gr + gc * gc).sqrt().atan();
            let tilt = n[2].acos();
            assert!((slope - tilt).abs() < 1e-6, "slope {slope} tilt {tilt}");
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
