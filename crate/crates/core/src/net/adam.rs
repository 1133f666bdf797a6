use super::mlp::{Gradients, Layer, Mlp};
use crate::error::{Error, Result};

/// Adam hyperparameters (defaults: 0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Mlp) -> Self {
        let zeros = params.zero_gradients().layers;
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Pure Adam update: returns new parameters and state.
pub fn adam_step(
    params: &Mlp,
    grads: &Gradients,
    lr: f64,
    state: &AdamState,
    config: &AdamConfig,
) -> Result<(Mlp, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    apply(&mut p, grads, lr, &mut s, config)?;
    Ok((p, s))
}

fn apply(
    params: &mut Mlp,
    grads: &Gradients,
    lr: f64,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.layers.len() != params.layers.len()
        || grads
            .layers
            .iter()
            .zip(&params.layers)
            .any(|(g, p)| g.weights.dim() != p.weights.dim() || g.bias.len() != p.bias.len())
    {
        return Err(crate::error::shape_err("gradients matching parameters", "other shapes"));
    }
    if !grads.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let pairs = p
            .weights
            .iter_mut()
            .zip(g.weights.iter())
            .zip(m.weights.iter_mut().zip(v.weights.iter_mut()))
            .chain(
                p.bias
                    .iter_mut()
                    .zip(g.bias.iter())
                    .zip(m.bias.iter_mut().zip(v.bias.iter_mut())),
            );
        for ((w, &gi), (mi, vi)) in pairs {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Adam optimizer owning its state; updates parameters in place.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: &Mlp) -> Self {
        Self {
            config: AdamConfig::default(),
            state: AdamState::new(params),
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients, lr: f64) -> Result<()> {
        apply(params, grads, lr, &mut self.state, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Architecture};
    use ndarray::{Array1, Array2};

    fn scalar(w: f64) -> Mlp {
        Mlp::from_layers(vec![Layer {
            weights: Array2::from_elem((1, 1), w),
            bias: Array1::zeros(1),
        }])
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = scalar(1.0);
        let mut g = p.zero_gradients();
        g.layers[0].weights[[0, 0]] = 1.0;
        let (q, s) = adam_step(&p, &g, 0.1, &AdamState::new(&p), &AdamConfig::default()).unwrap();
        assert!((q.layers[0].weights[[0, 0]] - 0.9).abs() < 1e-6);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let p = init_params(1, &Architecture::standard(4, 2));
        let g = p.zero_gradients();
        let (q, _) = adam_step(&p, &g, 0.1, &AdamState::new(&p), &AdamConfig::default()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn update_is_pure() {
        let p = init_params(1, &Architecture::standard(4, 2));
        let g = p.backward(&[0.1, 0.2, 0.3, 0.4], &[1.0, -1.0]).unwrap();
        let s = AdamState::new(&p);
        let a = adam_step(&p, &g, 0.01, &s, &AdamConfig::default()).unwrap();
        let b = adam_step(&p, &g, 0.01, &s, &AdamConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let p = scalar(1.0);
        let mut g = p.zero_gradients();
        g.layers[0].bias[0] = f64::NAN;
        let r = adam_step(&p, &g, 0.1, &AdamState::new(&p), &AdamConfig::default());
        assert!(matches!(r, Err(Error::Diverged(_))));
    }
}
