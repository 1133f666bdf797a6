//! Ensemble critics.
//!
//! Both families share the per-pixel input: the patch features followed by
//! the pixel's action `(alpha, beta)`. Raw head outputs pass through a
//! sigmoid so every reward estimate lies in `(0, 1)`.

pub mod mv;
pub mod qr;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};

use crate::error::{shape_err, Error, Result};
use crate::net::{Architecture, FeaturePatch, Mlp, ObsFeatures};

/// Action inputs per pixel.
pub const ACTION_DIM: usize = 2;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Critic family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriticKind {
    /// Mean-variance: a reward head and a log-variance head.
    Mv,
    /// Quantile regression with `heads` quantile heads.
    Qr { heads: usize },
}

impl CriticKind {
    pub fn head_count(self) -> usize {
        match self {
            CriticKind::Mv => 2,
            CriticKind::Qr { heads } => heads,
        }
    }

    pub fn architecture(self, patch: usize) -> Architecture {
        Architecture::standard(FeaturePatch::width(patch) + ACTION_DIM, self.head_count())
    }

    /// Reward estimate from raw head outputs and its gradient with respect
    /// to them.
    pub fn expected_reward(self, raw: &[f64]) -> (f64, Vec<f64>) {
        match self {
            CriticKind::Mv => {
                let q = sigmoid(raw[0]);
                (q, vec![q * (1.0 - q), 0.0])
            }
            CriticKind::Qr { heads } => {
                let k = heads as f64;
                let mut grad = Vec::with_capacity(heads);
                let mut q = 0.0;
                for &r in raw {
                    let s = sigmoid(r);
                    q += s / k;
                    grad.push(s * (1.0 - s) / k);
                }
                (q, grad)
            }
        }
    }

    /// Training loss against `target` and its gradient with respect to the
    /// raw heads. MV uses the Gaussian NLL, QR the mean quantile Huber loss
    /// over heads.
    pub fn head_loss(self, raw: &[f64], target: f64, kappa: f64) -> (f64, Vec<f64>) {
        match self {
            CriticKind::Mv => mv::head_loss(raw, target),
            CriticKind::Qr { .. } => qr::head_loss(raw, target, kappa),
        }
    }
}

impl fmt::Display for CriticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriticKind::Mv => f.write_str("mv"),
            CriticKind::Qr { heads } => write!(f, "qr{heads}"),
        }
    }
}

impl serde::Serialize for CriticKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CriticKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for CriticKind {
    type Err = Error;

    /// `mv`, `qr` (20 heads) or `qr<K>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mv" => Ok(CriticKind::Mv),
            "qr" => Ok(CriticKind::Qr { heads: 20 }),
            _ => s
                .strip_prefix("qr")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 1)
                .map(|heads| CriticKind::Qr { heads })
                .ok_or_else(|| Error::InvalidArgument(format!("unknown critic '{s}'"))),
        }
    }
}

/// Aggregated ensemble maps used for exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMaps {
    pub q_mean: Array2<f64>,
    pub v_ale: Array2<f64>,
    pub v_epi: Array2<f64>,
    pub v_all: Array2<f64>,
}

/// Critic network inputs for every pixel: patch features with the action
/// map appended, one row per pixel.
#[derive(Debug, Clone)]
pub struct CriticInputs {
    pub rows: usize,
    pub cols: usize,
    pub data: Array2<f64>,
}

impl CriticInputs {
    pub fn new(features: &ObsFeatures, action_map: &Array3<f64>) -> Result<Self> {
        let (h, w) = (features.rows, features.cols);
        if action_map.dim() != (h, w, ACTION_DIM) {
            return Err(shape_err(format!("{h}x{w}x{ACTION_DIM} action map"), format!("{:?}", action_map.dim())));
        }
        let f = features.width();
        let mut data = Array2::zeros((h * w, f + ACTION_DIM));
        data.slice_mut(ndarray::s![.., ..f]).assign(&features.data);
        let actions = action_map
            .view()
            .into_shape_with_order((h * w, ACTION_DIM))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        data.slice_mut(ndarray::s![.., f..]).assign(&actions);
        Ok(Self { rows: h, cols: w, data })
    }

    /// Raw head outputs for every pixel, reshaped to `H x W x heads`.
    pub fn evaluate(&self, params: &Mlp) -> Result<Array3<f64>> {
        let out = params.forward_batch(self.data.view())?;
        let heads = out.ncols();
        out.into_shape_with_order((self.rows, self.cols, heads))
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

pub(crate) fn check_same_dims<'a>(mut dims: impl Iterator<Item = (usize, usize)>) -> Result<(usize, usize)> {
    let first = dims.next().ok_or(Error::EmptyEnsemble)?;
    for d in dims {
        if d != first {
            return Err(shape_err(format!("{first:?}"), format!("{d:?}")));
        }
    }
    Ok(first)
}

pub(crate) fn mean_axis0(stack: &Array3<f64>) -> Array2<f64> {
    stack.mean_axis(Axis(0)).expect("non-empty stack")
}
