use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Smallest standard deviation a [`NormStats`] will store.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension z-score statistics for states and commands.
///
/// Standard deviations use the population (1/N) convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    state_mean: Vec<f64>,
    state_std: Vec<f64>,
    command_mean: Vec<f64>,
    command_std: Vec<f64>,
}

impl NormStats {
    pub fn new(
        state_mean: Vec<f64>,
        state_std: Vec<f64>,
        command_mean: Vec<f64>,
        command_std: Vec<f64>,
    ) -> Result<Self> {
        check_len("state std", state_mean.len(), state_std.len())?;
        check_len("command std", command_mean.len(), command_std.len())?;
        let floor = |v: Vec<f64>| v.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(Self {
            state_mean,
            state_std: floor(state_std),
            command_mean,
            command_std: floor(command_std),
        })
    }

    /// Zero mean, unit std.
    pub fn identity(state_dim: usize, command_dim: usize) -> Self {
        Self {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            command_mean: vec![0.0; command_dim],
            command_std: vec![1.0; command_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn command_dim(&self) -> usize {
        self.command_mean.len()
    }

    pub fn state_mean(&self) -> &[f64] {
        &self.state_mean
    }

    pub fn state_std(&self) -> &[f64] {
        &self.state_std
    }

    pub fn command_mean(&self) -> &[f64] {
        &self.command_mean
    }

    pub fn command_std(&self) -> &[f64] {
        &self.command_std
    }

    pub fn normalize_state(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim(), s.len())?;
        Ok(zscore(s, &self.state_mean, &self.state_std))
    }

    pub fn normalize_command(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("command", self.command_dim(), u.len())?;
        Ok(zscore(u, &self.command_mean, &self.command_std))
    }

    /// Normalizes a `(state, command)` pair.
    pub fn normalize(&self, s: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.normalize_state(s)?, self.normalize_command(u)?))
    }

    pub fn denormalize_state(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim(), s.len())?;
        Ok(unscore(s, &self.state_mean, &self.state_std))
    }

    pub fn denormalize_command(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("command", self.command_dim(), u.len())?;
        Ok(unscore(u, &self.command_mean, &self.command_std))
    }

    /// Converts a normalized-units variance to a raw-units standard deviation.
    pub fn state_sigma(&self, variance: &[f64]) -> Result<Vec<f64>> {
        check_len("variance", self.state_dim(), variance.len())?;
        Ok(variance
            .iter()
            .zip(&self.state_std)
            .map(|(v, s)| v.sqrt() * s)
            .collect())
    }
}

fn zscore(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(std).map(|((x, m), s)| (x - m) / s).collect()
}

fn unscore(z: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    z.iter().zip(mean).zip(std).map(|((z, m), s)| z * s + m).collect()
}
