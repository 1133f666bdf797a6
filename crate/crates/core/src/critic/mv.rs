//! Mean-variance critic: head 0 is the reward logit, head 1 the log variance.

use ndarray::{Array2, Array3, Axis};

use super::{check_same_dims, mean_axis0, sigmoid, CriticInputs, UncertaintyMaps};
use crate::error::Result;
use crate::net::{Mlp, ObsFeatures};
use crate::sim::Observation;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;

/// Per-pixel mean and log variance of one critic.
#[derive(Debug, Clone, PartialEq)]
pub struct MvPrediction {
    pub q: Array2<f64>,
    pub log_var: Array2<f64>,
}

fn split_heads(raw: &Array3<f64>) -> MvPrediction {
    MvPrediction {
        q: raw.index_axis(Axis(2), 0).mapv(sigmoid),
        log_var: raw
            .index_axis(Axis(2), 1)
            .mapv(|s| s.clamp(LOG_VAR_MIN, LOG_VAR_MAX)),
    }
}

/// Critic maps at every pixel for the given `H x W x 2` action map.
pub fn mv_predict(params: &Mlp, obs: &Observation, action_map: &Array3<f64>, patch: usize) -> Result<MvPrediction> {
    let features = ObsFeatures::new(obs, patch)?;
    mv_predict_inputs(params, &CriticInputs::new(&features, action_map)?)
}

pub fn mv_predict_inputs(params: &Mlp, inputs: &CriticInputs) -> Result<MvPrediction> {
    Ok(split_heads(&inputs.evaluate(params)?))
}

/// Gaussian negative log likelihood without its constant and its partial
/// derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllTerms {
    pub loss: f64,
    pub d_q: f64,
    pub d_log_var: f64,
}

pub fn mv_nll_loss(q: f64, log_var: f64, target: f64) -> NllTerms {
    let inv = (-log_var).exp();
    let e = target - q;
    NllTerms {
        loss: 0.5 * inv * e * e + 0.5 * log_var,
        d_q: -inv * e,
        d_log_var: -0.5 * inv * e * e + 0.5,
    }
}

/// NLL and its gradient with respect to the two raw heads. The clamp on
/// the variance head passes no gradient outside its range.
pub(crate) fn head_loss(raw: &[f64], target: f64) -> (f64, Vec<f64>) {
    let q = sigmoid(raw[0]);
    let s = raw[1].clamp(LOG_VAR_MIN, LOG_VAR_MAX);
    let t = mv_nll_loss(q, s, target);
    let ds = if raw[1] > LOG_VAR_MIN && raw[1] < LOG_VAR_MAX {
        t.d_log_var
    } else {
        0.0
    };
    (t.loss, vec![t.d_q * q * (1.0 - q), ds])
}

/// Ensemble mean, mean predicted variance (aleatoric), spread of the means
/// (epistemic, population variance) and their sum.
pub fn mv_ensemble_stats(preds: &[MvPrediction]) -> Result<UncertaintyMaps> {
    let (h, w) = check_same_dims(preds.iter().map(|p| p.q.dim()))?;
    let n = preds.len();
    let mut qs = Array3::zeros((n, h, w));
    let mut vars = Array3::zeros((n, h, w));
    for (j, p) in preds.iter().enumerate() {
        qs.index_axis_mut(Axis(0), j).assign(&p.q);
        vars.index_axis_mut(Axis(0), j).assign(&p.log_var.mapv(f64::exp));
    }
    let q_mean = mean_axis0(&qs);
    let v_ale = mean_axis0(&vars);
    let v_epi = qs.var_axis(Axis(0), 0.0);
    let v_all = &v_ale + &v_epi;
    Ok(UncertaintyMaps {
        q_mean,
        v_ale,
        v_epi,
        v_all,
    })
}
