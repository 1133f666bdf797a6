//! Scene text format and observation export.
//!
//! Scene format, version 1. `#` starts a comment line.
//!
//! ```text
//! ucbgrasp-scene 1
//! grid <rows> <cols>
//! seed <u64>
//! mask
//! <rows lines of '0'/'1', one char per column>
//! objects <n>
//! <id> <shape> <row> <col> <yaw> <length> <width> <height> <material> <base_graspability>
//! ```
//!
//! Reals are written in shortest round-trip form, so a parsed scene is
//! bitwise equal to the one that was written.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::render::Observation;
use super::scene::{ObjectSpec, Scene};
use crate::error::{Error, Result};
use crate::gridio;

pub const SCENE_FORMAT_VERSION: u32 = 1;

pub fn scene_to_string(scene: &Scene) -> String {
    let (h, w) = scene.grid_size;
    let mut s = String::new();
    let _ = writeln!(s, "ucbgrasp-scene {SCENE_FORMAT_VERSION}");
    let _ = writeln!(s, "grid {h} {w}");
    let _ = writeln!(s, "seed {}", scene.rng_seed);
    s.push_str("mask\n");
    for row in scene.bin_mask.rows() {
        for &m in row {
            s.push(if m { '1' } else { '0' });
        }
        s.push('\n');
    }
    let _ = writeln!(s, "objects {}", scene.objects.len());
    for o in &scene.objects {
        let _ = writeln!(
            s,
            "{} {} {:?} {:?} {:?} {:?} {:?} {:?} {} {:?}",
            o.id,
            o.shape,
            o.pose.0,
            o.pose.1,
            o.pose.2,
            o.extent.0,
            o.extent.1,
            o.extent.2,
            o.material,
            o.base_graspability
        );
    }
    s
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("unexpected end of file, expected {what}"),
        })
    };
    let err = |line: usize, message: String| Error::Parse { line, message };

    let (ln, header) = next("header")?;
    if header != format!("ucbgrasp-scene {SCENE_FORMAT_VERSION}") {
        return Err(err(ln, format!("unsupported header '{header}'")));
    }
    let (ln, grid) = next("grid")?;
    let dims: Vec<usize> = grid
        .strip_prefix("grid ")
        .ok_or_else(|| err(ln, "expected 'grid'".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(ln, format!("bad grid size '{t}'"))))
        .collect::<Result<_>>()?;
    let [h, w] = dims[..] else {
        return Err(err(ln, "grid needs two sizes".into()));
    };
    let (ln, seed) = next("seed")?;
    let rng_seed: u64 = seed
        .strip_prefix("seed ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| err(ln, "bad seed line".into()))?;
    let (ln, mask) = next("mask")?;
    if mask != "mask" {
        return Err(err(ln, "expected 'mask'".into()));
    }
    let mut bin_mask = Array2::from_elem((h, w), false);
    for r in 0..h {
        let (ln, row) = next("mask row")?;
        if row.len() != w {
            return Err(err(ln, format!("mask row has {} cells, expected {w}", row.len())));
        }
        for (c, ch) in row.chars().enumerate() {
            bin_mask[[r, c]] = match ch {
                '1' => true,
                '0' => false,
                other => return Err(err(ln, format!("bad mask cell '{other}'"))),
            };
        }
    }
    let (ln, count) = next("objects")?;
    let n: usize = count
        .strip_prefix("objects ")
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| err(ln, "bad objects line".into()))?;
    let mut objects = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, rec) = next("object record")?;
        let t: Vec<&str> = rec.split_whitespace().collect();
        if t.len() != 10 {
            return Err(err(ln, format!("object record has {} fields, expected 10", t.len())));
        }
        let f = |i: usize| -> Result<f64> {
            t[i].parse().map_err(|_| err(ln, format!("bad number '{}'", t[i])))
        };
        objects.push(ObjectSpec {
            id: t[0].parse().map_err(|_| err(ln, format!("bad id '{}'", t[0])))?,
            shape: t[1].parse()?,
            pose: (f(2)?, f(3)?, f(4)?),
            extent: (f(5)?, f(6)?, f(7)?),
            material: t[8].parse()?,
            base_graspability: f(9)?,
        });
    }
    let scene = Scene {
        grid_size: (h, w),
        objects,
        bin_mask,
        rng_seed,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    gridio::write_atomic(path, scene_to_string(scene).as_bytes())
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    parse_scene(&std::fs::read_to_string(path)?)
}

/// Writes `height.csv`, `normals.csv` and `intensity.csv` into `dir`.
/// `normals.csv` interleaves channels: each row holds
/// `n_row, n_col, n_z` for column 0, then column 1, and so on.
pub fn write_observation_csv(dir: &Path, obs: &Observation) -> Result<()> {
    let (h, w) = obs.dim();
    gridio::write_csv(&dir.join("height.csv"), obs.height.view())?;
    let interleaved = obs
        .normals
        .to_shape((h, w * 3))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    gridio::write_csv(&dir.join("normals.csv"), interleaved.view())?;
    gridio::write_csv(&dir.join("intensity.csv"), obs.intensity.view())
}

/// Writes 16-bit PGMs: `height.pgm` scaled from 0 to the maximum height,
/// `intensity.pgm` over `[0, 1]` and `normal_{row,col,z}.pgm` over `[-1, 1]`.
/// Each file has a sidecar with its scale.
pub fn write_observation_pgm(dir: &Path, obs: &Observation) -> Result<()> {
    let top = obs.height.iter().cloned().fold(0.0, f64::max);
    gridio::write_pgm_range(&dir.join("height.pgm"), obs.height.view(), 0.0, top)?;
    gridio::write_pgm_range(&dir.join("intensity.pgm"), obs.intensity.view(), 0.0, 1.0)?;
    for (k, name) in ["normal_row", "normal_col", "normal_z"].iter().enumerate() {
        let ch = obs.normals.index_axis(ndarray::Axis(2), k);
        gridio::write_pgm_range(&dir.join(format!("{name}.pgm")), ch, -1.0, 1.0)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, render, Difficulty};

    #[test]
    fn scene_text_round_trip() {
        let s = generate_scene(9, 12, Difficulty::Mixed).unwrap();
        let text = scene_to_string(&s);
        let back = parse_scene(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(scene_to_string(&back), text);
    }

    #[test]
    fn rejects_bad_header_and_overlap() {
        assert!(parse_scene("ucbgrasp-scene 9\n").is_err());
        let s = generate_scene(9, 2, Difficulty::Easy).unwrap();
        let mut t = s.clone();
        t.objects[1].pose = t.objects[0].pose;
        assert!(parse_scene(&scene_to_string(&t)).is_err());
    }

    #[test]
    fn observation_csv_round_trip() {
        let s = generate_scene(4, 6, Difficulty::Mixed).unwrap();
        let obs = render(&s);
        let dir = tempfile::tempdir().unwrap();
        write_observation_csv(dir.path(), &obs).unwrap();
        let h = gridio::read_csv(&dir.path().join("height.csv")).unwrap();
        assert_eq!(h, obs.height);
        let n = gridio::read_csv(&dir.path().join("normals.csv")).unwrap();
        assert_eq!(n.dim(), (64, 192));
        assert_eq!(n[[10, 3 * 7 + 2]], obs.normals[[10, 7, 2]]);
        write_observation_pgm(dir.path(), &obs).unwrap();
        assert!(dir.path().join("normal_z.pgm.txt").exists());
    }
}
