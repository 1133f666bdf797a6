use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::sim::Observation;

/// Channels per cell: scaled height, normal row/col/z, intensity.
pub const CHANNELS: usize = 5;
/// Default patch side.
pub const DEFAULT_PATCH: usize = 5;
/// Height is multiplied by this before entering the network.
pub const HEIGHT_SCALE: f64 = 0.1;

/// A `P x P x CHANNELS` neighbourhood flattened row-major, channel-last:
/// index `((dr * P) + dc) * CHANNELS + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePatch(pub Vec<f64>);

impl FeaturePatch {
    pub fn width(p: usize) -> usize {
        p * p * CHANNELS
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The patch followed by extra inputs (the critic appends the action).
    pub fn with_suffix(&self, extra: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.0.len() + extra.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(extra);
        v
    }
}

fn cell_features(obs: &Observation, r: usize, c: usize) -> [f64; CHANNELS] {
    [
        obs.height[[r, c]] * HEIGHT_SCALE,
        obs.normals[[r, c, 0]],
        obs.normals[[r, c, 1]],
        obs.normals[[r, c, 2]],
        obs.intensity[[r, c]],
    ]
}

fn check_window(p: usize) -> Result<()> {
    if p % 2 == 0 {
        return Err(Error::EvenWindow(p));
    }
    Ok(())
}

/// Patch centered on `(row, col)`; cells outside the grid replicate the
/// nearest edge pixel.
pub fn extract_patch(obs: &Observation, row: usize, col: usize, p: usize) -> Result<FeaturePatch> {
    extract_patch_transformed(obs, row, col, p, &GridTransform::identity())
}

/// Patch at `(row, col)` of the transformed observation, without
/// materializing the transformed grids.
pub fn extract_patch_transformed(
    obs: &Observation,
    row: usize,
    col: usize,
    p: usize,
    transform: &GridTransform,
) -> Result<FeaturePatch> {
    check_window(p)?;
    let (h, w) = obs.dim();
    let (th, tw) = transform.output_dims(h, w)?;
    if row >= th || col >= tw {
        return Err(Error::InvalidArgument(format!("pixel ({row}, {col}) outside {th}x{tw}")));
    }
    let half = (p / 2) as isize;
    let mut values = Vec::with_capacity(FeaturePatch::width(p));
    for dr in -half..=half {
        for dc in -half..=half {
            let rr = (row as isize + dr).clamp(0, th as isize - 1) as usize;
            let cc = (col as isize + dc).clamp(0, tw as isize - 1) as usize;
            let (sr, sc) = transform.source(rr, cc, h, w);
            let mut f = cell_features(obs, sr, sc);
            let (a, b) = transform.rotate_vector(f[1], f[2]);
            f[1] = a;
            f[2] = b;
            values.extend_from_slice(&f);
        }
    }
    Ok(FeaturePatch(values))
}

/// 90-degree rotation followed by an integer translation with edge
/// replication. Odd rotations require a square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridTransform {
    /// Number of counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    pub shift: (i32, i32),
}

impl GridTransform {
    pub fn identity() -> Self {
        Self {
            quarter_turns: 0,
            shift: (0, 0),
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.quarter_turns % 2 == 1 && h != w {
            return Err(Error::InvalidArgument("odd rotations need a square grid".into()));
        }
        Ok((h, w))
    }

    /// Source pixel feeding output pixel `(r, c)`.
    pub fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        let r = (r as i64 - self.shift.0 as i64).clamp(0, h as i64 - 1) as usize;
        let c = (c as i64 - self.shift.1 as i64).clamp(0, w as i64 - 1) as usize;
        let (mut r, mut c) = (r, c);
        for _ in 0..self.quarter_turns % 4 {
            // inverse of (r, c) -> (w - 1 - c, r)
            let (nr, nc) = (c, w - 1 - r);
            r = nr;
            c = nc;
        }
        (r, c)
    }

    /// Output pixel of source pixel `(r, c)`, if it lands inside the grid.
    pub fn forward(&self, r: usize, c: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let (mut r, mut c) = (r, c);
        for _ in 0..self.quarter_turns % 4 {
            let (nr, nc) = (w - 1 - c, r);
            r = nr;
            c = nc;
        }
        let r = r as i64 + self.shift.0 as i64;
        let c = c as i64 + self.shift.1 as i64;
        (r >= 0 && c >= 0 && r < h as i64 && c < w as i64).then_some((r as usize, c as usize))
    }

    /// Rotates the in-plane `(row, col)` components of a vector.
    pub fn rotate_vector(&self, a: f64, b: f64) -> (f64, f64) {
        let (mut a, mut b) = (a, b);
        for _ in 0..self.quarter_turns % 4 {
            let (na, nb) = (-b, a);
            a = na;
            b = nb;
        }
        (a, b)
    }
}

/// Patch features of every pixel, one row per pixel in row-major order.
#[derive(Debug, Clone)]
pub struct ObsFeatures {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub data: Array2<f64>,
}

impl ObsFeatures {
    pub fn new(obs: &Observation, p: usize) -> Result<Self> {
        check_window(p)?;
        let (h, w) = obs.dim();
        let mut cells = Array3::zeros((h, w, CHANNELS));
        for r in 0..h {
            for c in 0..w {
                for (k, v) in cell_features(obs, r, c).into_iter().enumerate() {
                    cells[[r, c, k]] = v;
                }
            }
        }
        let width = FeaturePatch::width(p);
        let half = (p / 2) as isize;
        let mut data = Array2::zeros((h * w, width));
        for r in 0..h {
            for c in 0..w {
                let mut row = data.row_mut(r * w + c);
                let mut i = 0;
                for dr in -half..=half {
                    let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                    for dc in -half..=half {
                        let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                        for k in 0..CHANNELS {
                            row[i] = cells[[rr, cc, k]];
                            i += 1;
                        }
                    }
                }
            }
        }
        Ok(Self {
            rows: h,
            cols: w,
            patch: p,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn patch_at(&self, row: usize, col: usize) -> FeaturePatch {
        FeaturePatch(self.data.row(row * self.cols + col).to_vec())
    }
}
