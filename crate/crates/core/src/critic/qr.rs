//! Quantile critic: `K` heads estimate the reward quantiles at midpoints
//! `tau_k = (2k - 1) / 2K`.

use ndarray::{Array2, Array3, Axis};

use super::{check_same_dims, sigmoid, CriticInputs, UncertaintyMaps};
use crate::error::{Error, Result};
use crate::net::{Mlp, ObsFeatures};
use crate::sim::Observation;

pub const DEFAULT_HEADS: usize = 20;
pub const DEFAULT_KAPPA: f64 = 1.0;

pub fn taus(k: usize) -> Vec<f64> {
    (1..=k).map(|i| (2 * i - 1) as f64 / (2 * k) as f64).collect()
}

/// Quantile estimates of one critic, `H x W x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTensor {
    pub values: Array3<f64>,
}

impl QuantileTensor {
    pub fn heads(&self) -> usize {
        self.values.dim().2
    }

    pub fn grid(&self) -> (usize, usize) {
        let (h, w, _) = self.values.dim();
        (h, w)
    }
}

pub fn qr_predict(params: &Mlp, obs: &Observation, action_map: &Array3<f64>, patch: usize) -> Result<QuantileTensor> {
    let features = ObsFeatures::new(obs, patch)?;
    qr_predict_inputs(params, &CriticInputs::new(&features, action_map)?)
}

pub fn qr_predict_inputs(params: &Mlp, inputs: &CriticInputs) -> Result<QuantileTensor> {
    Ok(QuantileTensor {
        values: inputs.evaluate(params)?.mapv(sigmoid),
    })
}

/// Asymmetric Huber loss of one quantile estimate, normalized by `kappa`,
/// and its derivative with respect to the estimate.
pub fn quantile_huber_loss(pred: f64, target: f64, tau: f64, kappa: f64) -> (f64, f64) {
    let u = target - pred;
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    let (huber, d_huber) = if u.abs() <= kappa {
        (0.5 * u * u, u)
    } else {
        (kappa * (u.abs() - 0.5 * kappa), kappa * u.signum())
    };
    (weight * huber / kappa, -weight * d_huber / kappa)
}

/// Mean loss over heads and its gradient with respect to the raw heads.
pub(crate) fn head_loss(raw: &[f64], target: f64, kappa: f64) -> (f64, Vec<f64>) {
    let k = raw.len();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(k);
    for (&r, tau) in raw.iter().zip(taus(k)) {
        let s = sigmoid(r);
        let (l, d) = quantile_huber_loss(s, target, tau, kappa);
        loss += l / k as f64;
        grad.push(d * s * (1.0 - s) / k as f64);
    }
    (loss, grad)
}

fn stack(ensemble: &[QuantileTensor]) -> Result<(usize, usize, usize)> {
    let (h, w) = check_same_dims(ensemble.iter().map(|t| t.grid()))?;
    let k = ensemble[0].heads();
    if ensemble.iter().any(|t| t.heads() != k) {
        return Err(Error::InvalidArgument("members disagree on head count".into()));
    }
    Ok((h, w, k))
}

/// Expected reward: the mean over all heads of all members.
pub fn qr_q_map(ensemble: &[QuantileTensor]) -> Result<Array2<f64>> {
    let (h, w, k) = stack(ensemble)?;
    let mut q = Array2::zeros((h, w));
    for t in ensemble {
        q += &t.values.sum_axis(Axis(2));
    }
    Ok(q / (k * ensemble.len()) as f64)
}

/// `v_epi`: spread of each quantile across members, averaged over heads.
/// `v_ale`: spread of the member-averaged quantiles around the mean.
/// Together they are the variance of all `K * N` estimates.
pub fn qr_ensemble_stats(ensemble: &[QuantileTensor]) -> Result<UncertaintyMaps> {
    let (h, w, k) = stack(ensemble)?;
    let n = ensemble.len() as f64;
    let mut avg = Array3::<f64>::zeros((h, w, k));
    for t in ensemble {
        avg += &t.values;
    }
    avg /= n;
    let q_mean = avg.mean_axis(Axis(2)).expect("k >= 1");
    let mut v_epi = Array2::<f64>::zeros((h, w));
    for t in ensemble {
        let d = &t.values - &avg;
        v_epi += &(&d * &d).sum_axis(Axis(2));
    }
    v_epi /= k as f64 * n;
    let centered = &avg - &q_mean.view().insert_axis(Axis(2));
    let v_ale = (&centered * &centered).mean_axis(Axis(2)).expect("k >= 1");
    let v_all = &v_ale + &v_epi;
    Ok(UncertaintyMaps {
        q_mean,
        v_ale,
        v_epi,
        v_all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;

    fn member(values: &[f64]) -> QuantileTensor {
        QuantileTensor {
            values: Array::from_shape_vec((1, 1, values.len()), values.to_vec()).unwrap(),
        }
    }

    #[test]
    fn midpoint_taus() {
        assert_eq!(taus(2), vec![0.25, 0.75]);
        let t = taus(20);
        assert!((t[0] - 0.025).abs() < 1e-15 && (t[19] - 0.975).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_example() {
        let e = [member(&[0.2, 0.8]), member(&[0.4, 0.6])];
        let s = qr_ensemble_stats(&e).unwrap();
        assert!((s.q_mean[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((s.v_epi[[0, 0]] - 0.01).abs() < 1e-12);
        assert!((s.v_ale[[0, 0]] - 0.04).abs() < 1e-12);
        assert!((qr_q_map(&e).unwrap()[[0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn huber_regions() {
        // quadratic inside kappa, linear outside, asymmetric weights
        let (l, d) = quantile_huber_loss(0.0, 0.5, 0.25, 1.0);
        assert!((l - 0.25 * 0.125).abs() < 1e-15 && (d + 0.125).abs() < 1e-15);
        let (l, d) = quantile_huber_loss(3.0, 0.0, 0.25, 1.0);
        assert!((l - 0.75 * 2.5).abs() < 1e-15 && (d - 0.75).abs() < 1e-15);
    }

    #[test]
    fn mismatched_heads_are_rejected() {
        assert!(qr_q_map(&[member(&[0.1]), member(&[0.1, 0.2])]).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_is_total_variance(
            values in prop::collection::vec(0.0f64..1.0, 12)
        ) {
            // three members with four heads
            let e: Vec<_> = values.chunks(4).map(member).collect();
            let s = qr_ensemble_stats(&e).unwrap();
            let m = values.iter().sum::<f64>() / 12.0;
            let total = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 12.0;
            prop_assert!(s.v_epi[[0, 0]] >= 0.0 && s.v_ale[[0, 0]] >= 0.0);
            prop_assert!((s.v_all[[0, 0]] - total).abs() < 1e-12);
            prop_assert!((s.q_mean[[0, 0]] - m).abs() < 1e-12);
        }

        #[test]
        fn loss_is_nonnegative(p in -2.0f64..2.0, y in -2.0f64..2.0, tau in 0.01f64..0.99, kappa in 0.01f64..2.0) {
            prop_assert!(quantile_huber_loss(p, y, tau, kappa).0 >= 0.0);
        }
    }
}
