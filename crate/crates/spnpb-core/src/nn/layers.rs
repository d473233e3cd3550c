use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

/// Fully-connected layer `y = W x + b`, with `W` stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    input_dim: usize,
    output_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(input_dim: usize, output_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_len("dense weights", input_dim * output_dim, weights.len())?;
        check_len("dense bias", output_dim, bias.len())?;
        Ok(Self {
            input_dim,
            output_dim,
            weights,
            bias,
        })
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weights = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            input_dim,
            output_dim,
            weights,
            bias: vec![0.0; output_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.input_dim + col]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Evaluates the layer without recording anything.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("dense input", self.input_dim, x.len())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }

    /// Parameters flattened as `[W (row-major), b]`.
    pub fn flat_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.bias).copied()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("dense parameters", self.param_count(), flat.len())?;
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }
}

/// Forget-gate LSTM without peepholes.
///
/// The gate pre-activations are `W [x; h] + b` with the rows of `W` stacked
/// in gate order (input, forget, output, candidate), each block `hidden` rows
/// tall and `input_dim + hidden` columns wide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    input_dim: usize,
    hidden: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Cell and hidden vectors carried between LSTM steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            c: vec![0.0; hidden],
            h: vec![0.0; hidden],
        }
    }
}

pub(crate) struct LstmStepCache {
    /// Gate activations `[i, f, o, g]`, each `hidden` long.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_len("lstm weights", 4 * hidden * (input_dim + hidden), weights.len())?;
        check_len("lstm bias", 4 * hidden, bias.len())?;
        Ok(Self {
            input_dim,
            hidden,
            weights,
            bias,
        })
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            weights: vec![0.0; 4 * hidden * (input_dim + hidden)],
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Glorot-uniform input and recurrent weights; forget-gate bias 1, other biases 0.
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input_dim + hidden) as f64).sqrt();
        let weights = (0..4 * hidden * (input_dim + hidden))
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Self {
            input_dim,
            hidden,
            weights,
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn flat_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.bias).copied()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("lstm parameters", self.param_count(), flat.len())?;
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    /// One step without recording; returns the next state.
    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<LstmState> {
        check_len("lstm input", self.input_dim, x.len())?;
        check_len("lstm hidden", self.hidden, state.h.len())?;
        check_len("lstm cell", self.hidden, state.c.len())?;
        let (next, _) = self.step_cached(x, &state.h, &state.c);
        Ok(next)
    }

    pub(crate) fn step_cached(&self, x: &[f64], h: &[f64], c: &[f64]) -> (LstmState, LstmStepCache) {
        let n = self.hidden;
        let cols = self.input_dim + n;
        let mut gates = Vec::with_capacity(4 * n);
        for (row, b) in self.weights.chunks_exact(cols).zip(&self.bias) {
            let (wx, wh) = row.split_at(self.input_dim);
            let z = b
                + wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + wh.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
            gates.push(z);
        }
        for z in &mut gates[..3 * n] {
            *z = sigmoid(*z);
        }
        for z in &mut gates[3 * n..] {
            *z = z.tanh();
        }
        let mut c_next = Vec::with_capacity(n);
        let mut h_next = Vec::with_capacity(n);
        let mut tanh_c = Vec::with_capacity(n);
        for j in 0..n {
            let (i, f, o, g) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
            let cj = f * c[j] + i * g;
            let tc = cj.tanh();
            c_next.push(cj);
            tanh_c.push(tc);
            h_next.push(o * tc);
        }
        (LstmState { c: c_next, h: h_next }, LstmStepCache { gates, tanh_c })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
