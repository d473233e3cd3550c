use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("adam parameters", self.m.len(), params.len())?;
        check_len("adam gradients", self.m.len(), grads.len())?;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Classical momentum: `v ← μ v − η g`, `p ← p + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumState {
    pub fn new(len: usize, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: &[f64]) -> Result<()> {
        check_len("momentum velocity", self.velocity.len(), velocity.len())?;
        self.velocity.copy_from_slice(velocity);
        Ok(())
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("momentum parameters", self.velocity.len(), params.len())?;
        check_len("momentum gradients", self.velocity.len(), grads.len())?;
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v - self.learning_rate * g;
            *p += *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written from the textbook recurrences.
    fn scalar_adam(p0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        let mut out = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut state = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        state.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        for g in [1e-3, 0.7, -25.0] {
            let mut state = AdamState::new(1, 0.01);
            let mut p = vec![0.0];
            state.update(&mut p, &[g]).unwrap();
            // m̂ = g, v̂ = g², so Δ = −η g / (|g| + ε)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let grads = [0.3, 0.3, -1.2, 4.0, 0.0, 0.01];
        let oracle = scalar_adam(0.25, &grads, 1e-3);
        let mut state = AdamState::new(1, 1e-3);
        let mut p = vec![0.25];
        let mut prev = 0.25;
        for (k, (&g, &o)) in grads.iter().zip(&oracle).enumerate() {
            state.update(&mut p, &[g]).unwrap();
            assert!((p[0] - o).abs() < 1e-15);
            if k == 1 {
                // constant gradient: the second step is no larger than the first
                assert!((p[0] - prev).abs() <= (prev - 0.25).abs() + 1e-12);
            }
            prev = p[0];
        }
        assert_eq!(state.step_count(), grads.len() as u64);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut state = AdamState::new(2, 1e-3);
        assert!(state.update(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(state.update(&mut [0.0; 2], &[0.0; 1]).is_err());
    }

    #[test]
    fn zero_momentum_is_sgd() {
        let mut state = MomentumState::new(2, 0.1, 0.0);
        let mut p = vec![1.0, 1.0];
        state.update(&mut p, &[2.0, -4.0]).unwrap();
        assert_eq!(p, vec![1.0 - 0.2, 1.0 + 0.4]);
    }

    #[test]
    fn velocity_approaches_geometric_limit() {
        let (lr, mu, g) = (0.05, 0.9, 1.5);
        let mut state = MomentumState::new(1, lr, mu);
        let mut p = vec![0.0];
        for k in 1..=200 {
            state.update(&mut p, &[g]).unwrap();
            // partial geometric sum −η g (1 − μᵏ) / (1 − μ)
            let expected = -lr * g * (1.0 - mu.powi(k)) / (1.0 - mu);
            assert!((state.velocity()[0] - expected).abs() < 1e-12);
        }
        assert!((state.velocity()[0] + lr * g / (1.0 - mu)).abs() < 1e-8);
    }

    #[test]
    fn momentum_coasts_without_gradient() {
        let mut state = MomentumState::new(1, 0.05, 0.9);
        state.set_velocity(&[0.4]).unwrap();
        let mut p = vec![1.0];
        state.update(&mut p, &[0.0]).unwrap();
        assert!((p[0] - (1.0 + 0.9 * 0.4)).abs() < 1e-15);
    }
}
