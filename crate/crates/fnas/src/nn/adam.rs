//! Adam updates over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// In-place Adam step with bias correction.
pub fn step_in_place(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if cfg.learning_rate <= 0.0 {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if grads.layout != params.layout || state.m.len() != params.len() {
        return Err(Error::Dimension {
            segment: "adam".to_string(),
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for k in 0..params.data.len() {
        let g = grads.data[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params.data[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Functional Adam step: returns updated copies, inputs untouched.
pub fn apply_update(
    params: &Params,
    grads: &Params,
    state: &AdamState,
    cfg: &AdamConfig,
) -> Result<(Params, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    step_in_place(&mut p, grads, &mut s, cfg)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;
    use crate::nn::tape;

    fn theta(values: &[f64]) -> Params {
        let mut p = Params::zeros(Layout::builder().vector("theta", values.len()).build());
        p.data.copy_from_slice(values);
        p
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params_unchanged() {
        let p = theta(&[1.0, -2.0]);
        let g = Params::zeros(p.layout.clone());
        let s = AdamState::new(2);
        let (p2, s2) = apply_update(&p, &g, &s, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p2.data, p.data);
        assert_eq!(s2.t, 1);
        assert_eq!(s2.m, vec![0.0, 0.0]);
    }

    #[test]
    fn step_moves_toward_quadratic_minimum() {
        // loss = (theta - 3)^2, theta0 = 0: gradient is -6, so theta must rise.
        let p = theta(&[0.0]);
        let g = theta(&[-6.0]);
        let (p2, _) =
            apply_update(&p, &g, &AdamState::new(1), &AdamConfig::with_lr(0.01)).unwrap();
        assert!(p2.data[0] > 0.0 && p2.data[0] < 3.0, "{}", p2.data[0]);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut p = theta(&[5.0, -4.0, 2.5]);
        let target = [1.0, 2.0, -3.0];
        let mut state = AdamState::new(3);
        let cfg = AdamConfig::with_lr(0.05);
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let (loss, grads) = tape::value_and_grad(&p, |t, leaves| {
                let th = leaves.get("theta");
                let c = t.constant(&target);
                let d = t.sub(th, c);
                let sq = t.mul(d, d);
                Ok(t.sum_elems(sq))
            })
            .unwrap();
            last = loss;
            step_in_place(&mut p, &grads, &mut state, &cfg).unwrap();
        }
        assert!(last < 1e-6, "final loss {last}");
    }

    #[test]
    fn non_positive_learning_rate_is_a_config_error() {
        let p = theta(&[0.0]);
        let g = Params::zeros(p.layout.clone());
        let err = apply_update(&p, &g, &AdamState::new(1), &AdamConfig::with_lr(0.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn functional_update_does_not_mutate_inputs() {
        let p = theta(&[1.0]);
        let g = theta(&[2.0]);
        let s = AdamState::new(1);
        let _ = apply_update(&p, &g, &s, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.data, vec![1.0]);
        assert_eq!(s.t, 0);
    }
}
