//! Per-pixel Gaussian actor.
//!
//! Heads 0 and 1 give the pre-squash means of `(alpha, beta)`, heads 2 and 3
//! the pre-softplus standard deviations.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::net::{Architecture, FeaturePatch, Mlp, ObsFeatures};
use crate::sim::{Observation, MAX_TILT};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = MAX_TILT;
pub const DEFAULT_ENTROPY_COEFF: f64 = 0.01;

pub fn actor_architecture(patch: usize) -> Architecture {
    Architecture::standard(FeaturePatch::width(patch), 4)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Squashed head outputs at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    /// `d mu / d raw` for heads 0 and 1.
    pub d_mu: [f64; 2],
    /// `d sigma / d raw` for heads 2 and 3 (zero where clamped).
    pub d_sigma: [f64; 2],
}

pub fn gaussian_head(raw: &[f64]) -> GaussianHead {
    let mut h = GaussianHead {
        mu: [0.0; 2],
        sigma: [0.0; 2],
        d_mu: [0.0; 2],
        d_sigma: [0.0; 2],
    };
    for i in 0..2 {
        let t = raw[i].tanh();
        h.mu[i] = MAX_TILT * t;
        h.d_mu[i] = MAX_TILT * (1.0 - t * t);
        let s = SIGMA_MIN + softplus(raw[2 + i]);
        if s < SIGMA_MAX {
            h.sigma[i] = s;
            h.d_sigma[i] = crate::critic::sigmoid(raw[2 + i]);
        } else {
            h.sigma[i] = SIGMA_MAX;
        }
    }
    h
}

/// Mean and standard deviation maps, both `H x W x 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMaps {
    pub mu: Array3<f64>,
    pub sigma: Array3<f64>,
}

pub fn actor_predict(params: &Mlp, obs: &Observation, patch: usize) -> Result<ActionMaps> {
    actor_predict_features(params, &ObsFeatures::new(obs, patch)?)
}

pub fn actor_predict_features(params: &Mlp, features: &ObsFeatures) -> Result<ActionMaps> {
    let out = params.forward_batch(features.data.view())?;
    if out.ncols() != 4 {
        return Err(crate::error::shape_err("4 actor heads", format!("{}", out.ncols())));
    }
    let (h, w) = (features.rows, features.cols);
    let mut mu = Array3::zeros((h, w, 2));
    let mut sigma = Array3::zeros((h, w, 2));
    for (i, row) in out.rows().into_iter().enumerate() {
        let g = gaussian_head(row.as_slice().expect("standard layout"));
        let (r, c) = (i / w, i % w);
        for k in 0..2 {
            mu[[r, c, k]] = g.mu[k];
            sigma[[r, c, k]] = g.sigma[k];
        }
    }
    Ok(ActionMaps { mu, sigma })
}

/// Elementwise mean of the members' mean maps.
pub fn ensemble_action_mean(maps: &[ActionMaps]) -> Result<Array3<f64>> {
    let first = maps.first().ok_or(Error::EmptyEnsemble)?;
    let mut sum = Array3::zeros(first.mu.dim());
    for m in maps {
        if m.mu.dim() != first.mu.dim() {
            return Err(crate::error::shape_err(format!("{:?}", first.mu.dim()), format!("{:?}", m.mu.dim())));
        }
        sum += &m.mu;
    }
    Ok(sum / maps.len() as f64)
}

/// Reparameterized sample `a = mu + sigma * eps` and its log density.
/// With `eps` held fixed, the log density does not depend on `mu` and its
/// derivative with respect to `sigma` is `-1 / sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamSample {
    pub action: [f64; 2],
    pub log_prob: f64,
    pub d_log_prob_d_sigma: [f64; 2],
}

pub fn gaussian_log_prob(action: [f64; 2], mu: [f64; 2], sigma: [f64; 2]) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    (0..2)
        .map(|i| {
            let z = (action[i] - mu[i]) / sigma[i];
            -0.5 * z * z - sigma[i].ln() - 0.5 * ln_2pi
        })
        .sum()
}

pub fn reparam_sample(mu: [f64; 2], sigma: [f64; 2], eps: [f64; 2]) -> ReparamSample {
    let action = [mu[0] + sigma[0] * eps[0], mu[1] + sigma[1] * eps[1]];
    ReparamSample {
        action,
        log_prob: gaussian_log_prob(action, mu, sigma),
        d_log_prob_d_sigma: [-1.0 / sigma[0], -1.0 / sigma[1]],
    }
}

/// `entropy_coeff * log_prob - q` with its partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorLossTerms {
    pub loss: f64,
    pub d_q: f64,
    pub d_log_prob: f64,
}

pub fn actor_loss(critic_q: f64, log_prob: f64, entropy_coeff: f64) -> ActorLossTerms {
    ActorLossTerms {
        loss: entropy_coeff * log_prob - critic_q,
        d_q: -1.0,
        d_log_prob: entropy_coeff,
    }
}

/// Gradient of the actor loss with respect to the four raw heads, given the
/// critic's slope `dq_da` at the sampled action.
pub fn actor_head_gradient(head: &GaussianHead, eps: [f64; 2], dq_da: [f64; 2], entropy_coeff: f64) -> [f64; 4] {
    let terms = actor_loss(0.0, 0.0, entropy_coeff);
    let mut g = [0.0; 4];
    for i in 0..2 {
        let d_mu = terms.d_q * dq_da[i];
        let d_sigma = terms.d_q * dq_da[i] * eps[i] + terms.d_log_prob * (-1.0 / head.sigma[i]);
        g[i] = d_mu * head.d_mu[i];
        g[2 + i] = d_sigma * head.d_sigma[i];
    }
    g
}
