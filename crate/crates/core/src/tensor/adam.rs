use serde::{Deserialize, Serialize};

use super::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> Moments<T> {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay
/// (`p ← p·(1 − lr·wd)` before the moment step).
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut Moments<T>, cfg: &AdamConfig) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let decay = T::lit(1.0 - cfg.lr * cfg.weight_decay);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(t)));
    let bc2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        let m = b1 * state.m[i] + c1 * g;
        let v = b2 * state.v[i] + c2 * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let mhat = m * bc1;
        let vhat = v * bc2;
        param[i] = param[i] * decay - lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = AdamConfig::new(1e-3, 0.0);
        let mut p = vec![1.0f64, 1.0, 1.0];
        let mut st = Moments::zeros(3);
        adam_step(&mut p, &[0.3, -2.0, 1e-3], &mut st, &cfg);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-9);
        assert!((p[2] - (1.0 - 1e-3)).abs() < 1e-8);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let cfg = AdamConfig::new(0.1, 0.5);
        let mut p = vec![2.0f64];
        let mut st = Moments::zeros(1);
        adam_step(&mut p, &[0.0], &mut st, &cfg);
        assert!((p[0] - 2.0 * 0.95).abs() < 1e-12);
    }
}
