//! AdamW with decoupled weight decay and bias correction folded into the
//! step size:
//!
//! ```text
//! m⁺ = β₁m + (1−β₁)g
//! v⁺ = β₂v + (1−β₂)g²
//! θ⁺ = a_t·θ − b_t·m⁺ / (√v⁺ + ε)
//! a_t = 1 − lr·wd,   b_t = lr·√(1−β₂ᵗ) / (1−β₁ᵗ)
//! ```
//!
//! Every operation is elementwise with shared scalars, so the update
//! commutes exactly with coordinate permutations and sign flips.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Number of completed steps.
    pub t: u64,
}

impl AdamWState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

impl AdamWConfig {
    /// `(a_t, b_t)` for step `t ≥ 1`.
    pub fn coefficients(&self, t: u64) -> (f32, f32) {
        let (lr, b1, b2) = (
            f64::from(self.lr),
            f64::from(self.beta1),
            f64::from(self.beta2),
        );
        let t = t.min(i32::MAX as u64) as i32;
        let a = 1.0 - lr * f64::from(self.weight_decay);
        let b = lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        (a as f32, b as f32)
    }
}

/// One in-place AdamW update.
pub fn adamw_step(
    state: &mut AdamWState,
    params: &mut [f32],
    grads: &[f32],
    cfg: &AdamWConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if grads.len() != n {
                grads.len()
            } else {
                state.m.len().min(state.v.len())
            },
        });
    }
    let step = state.t + 1;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step });
    }
    let (a, b) = cfg.coefficients(step);
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
    for i in 0..n {
        let g = grads[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * (g * g);
        state.m[i] = m;
        state.v[i] = v;
        params[i] = a * params[i] - b * (m / (v.sqrt() + eps));
    }
    state.t = step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AdamWConfig {
        AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let c = AdamWConfig {
            weight_decay: 0.0,
            ..cfg()
        };
        let mut st = AdamWState::new(3);
        let mut p = vec![0.5, -1.25, 3.0];
        let before = p.clone();
        adamw_step(&mut st, &mut p, &[0.0; 3], &c).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // t = 1: m = 0.1g, v = 0.001g², b = lr·√0.001/0.1.
        let c = AdamWConfig {
            weight_decay: 0.0,
            eps: 0.0,
            ..cfg()
        };
        let mut st = AdamWState::new(1);
        let mut p = vec![1.0f32];
        adamw_step(&mut st, &mut p, &[2.0], &c).unwrap();
        let m = 0.1 * 2.0;
        let v = 0.001 * 4.0f64;
        let b = 0.01 * 0.001f64.sqrt() / 0.1;
        let expected = 1.0 - b * m / v.sqrt();
        assert!((f64::from(p[0]) - expected).abs() < 1e-6);
        // The bias-corrected first step moves by lr·sign(g).
        assert!((f64::from(p[0]) - 0.99).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let mut st = AdamWState::new(2);
        let mut p = vec![0.0; 2];
        adamw_step(&mut st, &mut p, &[1.0, 1.0], &cfg()).unwrap();
        match adamw_step(&mut st, &mut p, &[f32::NAN, 0.0], &cfg()) {
            Err(Error::NonFiniteGradient { step }) => assert_eq!(step, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = AdamWState::new(16);
        let mut p: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..50 {
            let g: Vec<f32> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
            adamw_step(&mut st, &mut p, &g, &cfg()).unwrap();
            assert!(st.v.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn length_mismatch() {
        let mut st = AdamWState::new(2);
        let mut p = vec![0.0; 2];
        assert!(adamw_step(&mut st, &mut p, &[1.0], &cfg()).is_err());
    }
}
