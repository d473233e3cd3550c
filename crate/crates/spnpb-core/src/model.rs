//! The stochastic predictive network with parametric bias.
//!
//! One tick maps `(s_t, u_t, p)` plus the recurrent state to a Gaussian over
//! `s_{t+1}`. All inputs and outputs are in normalized units; the network
//! input is the concatenation `(u, s, p)`.
//!
//! Layer stack: four dense+tanh layers (`N_u+N_s+N_p → 50 → 20 → 10 → 10`),
//! two LSTM layers of width 10, three dense+tanh layers (`10 → 10 → 20 → 50`)
//! and a linear head of width `2·N_s`. The first half of the head is the mean;
//! the second half is a log-variance, clamped to `[-10, 10]` and exponentiated.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{DenseLayer, Gradients, LstmCell, LstmState, ParamId, Tape, Var};
use crate::norm::NormStats;

pub const LSTM_WIDTH: usize = 10;
const ENCODER_WIDTHS: [usize; 4] = [50, 20, 10, 10];
const DECODER_WIDTHS: [usize; 3] = [10, 20, 50];
/// Bounds on the raw log-variance output.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub state_dim: usize,
    pub command_dim: usize,
    pub pb_dim: usize,
    /// Seconds between ticks.
    pub tick_period: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 2,
            command_dim: 2,
            pb_dim: 2,
            tick_period: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.command_dim + self.state_dim + self.pb_dim
    }

    /// Unit counts of all ten layers, input first.
    pub fn widths(&self) -> [usize; 10] {
        [
            self.input_dim(),
            ENCODER_WIDTHS[0],
            ENCODER_WIDTHS[1],
            ENCODER_WIDTHS[2],
            LSTM_WIDTH,
            LSTM_WIDTH,
            DECODER_WIDTHS[0],
            DECODER_WIDTHS[1],
            DECODER_WIDTHS[2],
            2 * self.state_dim,
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.command_dim == 0 {
            return Err(Error::Argument("state and command dimensions must be positive".into()));
        }
        if !(self.tick_period > 0.0) {
            return Err(Error::Argument("tick period must be positive".into()));
        }
        Ok(())
    }
}

/// A trained parametric bias and the trial it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbEntry {
    pub trial_id: u64,
    pub label: String,
    pub value: Vec<f64>,
}

/// Gaussian over the next state, normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// LSTM state of both recurrent layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentState {
    layers: [LstmState; 2],
}

impl RecurrentState {
    pub fn zeros() -> Self {
        Self {
            layers: [LstmState::zeros(LSTM_WIDTH), LstmState::zeros(LSTM_WIDTH)],
        }
    }

    pub fn layer(&self, i: usize) -> &LstmState {
        &self.layers[i]
    }

    /// Places the state on a tape as non-differentiated constants.
    pub fn record<'a>(&self, tape: &mut Tape<'a>) -> TapedState {
        let [a, b] = &self.layers;
        TapedState {
            h: [tape.constant(a.h.clone()), tape.constant(b.h.clone())],
            c: [tape.constant(a.c.clone()), tape.constant(b.c.clone())],
        }
    }
}

impl Default for RecurrentState {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Recurrent state living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapedState {
    pub h: [Var; 2],
    pub c: [Var; 2],
}

impl TapedState {
    pub fn read(&self, tape: &Tape<'_>) -> RecurrentState {
        let layer = |i: usize| LstmState {
            c: tape.value(self.c[i]).to_vec(),
            h: tape.value(self.h[i]).to_vec(),
        };
        RecurrentState {
            layers: [layer(0), layer(1)],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapedPrediction {
    pub mean: Var,
    pub variance: Var,
}

impl TapedPrediction {
    pub fn read(&self, tape: &Tape<'_>) -> GaussianPrediction {
        GaussianPrediction {
            mean: tape.value(self.mean).to_vec(),
            variance: tape.value(self.variance).to_vec(),
        }
    }
}

/// Network weights, normalization statistics and the trained PB table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    config: ModelConfig,
    encoder: Vec<DenseLayer>,
    recurrent: Vec<LstmCell>,
    decoder: Vec<DenseLayer>,
    norm: NormStats,
    pb_table: Vec<PbEntry>,
}

impl ModelParams {
    /// Glorot-initialized network with an empty PB table.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, norm: NormStats, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let encoder = (0..4).map(|i| DenseLayer::glorot(w[i], w[i + 1], rng)).collect();
        let recurrent = (0..2).map(|i| LstmCell::glorot(w[3 + i], w[4 + i], rng)).collect();
        let decoder = (5..9).map(|i| DenseLayer::glorot(w[i], w[i + 1], rng)).collect();
        Self::from_parts(config, encoder, recurrent, decoder, norm)
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig, norm: NormStats) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let encoder = (0..4).map(|i| DenseLayer::zeros(w[i], w[i + 1])).collect();
        let recurrent = (0..2).map(|i| LstmCell::zeros(w[3 + i], w[4 + i])).collect();
        let decoder = (5..9).map(|i| DenseLayer::zeros(w[i], w[i + 1])).collect();
        Self::from_parts(config, encoder, recurrent, decoder, norm)
    }

    fn from_parts(
        config: ModelConfig,
        encoder: Vec<DenseLayer>,
        recurrent: Vec<LstmCell>,
        decoder: Vec<DenseLayer>,
        norm: NormStats,
    ) -> Result<Self> {
        let model = Self {
            config,
            encoder,
            recurrent,
            decoder,
            norm,
            pb_table: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn pb_table(&self) -> &[PbEntry] {
        &self.pb_table
    }

    pub fn set_pb_table(&mut self, table: Vec<PbEntry>) -> Result<()> {
        for entry in &table {
            check_len("parametric bias", self.config.pb_dim, entry.value.len())?;
        }
        self.pb_table = table;
        Ok(())
    }

    pub(crate) fn pb_table_mut(&mut self) -> &mut [PbEntry] {
        &mut self.pb_table
    }

    pub fn encoder(&self) -> &[DenseLayer] {
        &self.encoder
    }

    pub fn recurrent(&self) -> &[LstmCell] {
        &self.recurrent
    }

    pub fn decoder(&self) -> &[DenseLayer] {
        &self.decoder
    }

    #[cfg(test)]
    pub(crate) fn decoder_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.decoder
    }

    /// Number of scalars in the network weights (excluding PBs and stats).
    pub fn weight_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(DenseLayer::param_count)
            .sum::<usize>()
            + self.recurrent.iter().map(LstmCell::param_count).sum::<usize>()
    }

    /// Weights flattened in `ParamId` order: encoder, LSTMs, decoder.
    pub fn flat_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weight_count());
        for layer in &self.encoder {
            out.extend(layer.flat_params());
        }
        for cell in &self.recurrent {
            out.extend(cell.flat_params());
        }
        for layer in &self.decoder {
            out.extend(layer.flat_params());
        }
        out
    }

    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat weights", self.weight_count(), flat.len())?;
        let mut rest = flat;
        for layer in &mut self.encoder {
            let (head, tail) = rest.split_at(layer.param_count());
            layer.set_flat_params(head)?;
            rest = tail;
        }
        for cell in &mut self.recurrent {
            let (head, tail) = rest.split_at(cell.param_count());
            cell.set_flat_params(head)?;
            rest = tail;
        }
        for layer in &mut self.decoder {
            let (head, tail) = rest.split_at(layer.param_count());
            layer.set_flat_params(head)?;
            rest = tail;
        }
        Ok(())
    }

    fn block_sizes(&self) -> Vec<usize> {
        self.encoder
            .iter()
            .map(DenseLayer::param_count)
            .chain(self.recurrent.iter().map(LstmCell::param_count))
            .chain(self.decoder.iter().map(DenseLayer::param_count))
            .collect()
    }

    /// Gathers weight gradients in [`ModelParams::flat_weights`] order; absent blocks are zero.
    pub fn flatten_gradients(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weight_count());
        for (id, size) in self.block_sizes().into_iter().enumerate() {
            match grads.param(ParamId(id)) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, size)),
            }
        }
        out
    }

    /// Hash over the bit patterns of every weight.
    pub fn weight_hash(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for w in self.flat_weights() {
            w.to_bits().hash(&mut hasher);
        }
        hasher.finish()
    }

    pub(crate) fn check_inputs(&self, s: usize, u: usize, p: usize) -> Result<()> {
        check_len("state input", self.config.state_dim, s)?;
        check_len("command input", self.config.command_dim, u)?;
        check_len("parametric bias input", self.config.pb_dim, p)
    }

    /// Records one tick on `tape`.
    pub fn forward_taped<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        state: &TapedState,
        s: Var,
        u: Var,
        p: Var,
    ) -> Result<(TapedPrediction, TapedState)> {
        self.check_inputs(tape.value(s).len(), tape.value(u).len(), tape.value(p).len())?;
        let mut x = tape.concat(&[u, s, p]);
        for (i, layer) in self.encoder.iter().enumerate() {
            let z = tape.dense(layer, ParamId(i), x)?;
            x = tape.tanh(z);
        }
        let (h0, c0) = tape.lstm(&self.recurrent[0], ParamId(4), x, state.h[0], state.c[0])?;
        let (h1, c1) = tape.lstm(&self.recurrent[1], ParamId(5), h0, state.h[1], state.c[1])?;
        x = h1;
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate() {
            let z = tape.dense(layer, ParamId(6 + i), x)?;
            x = if i == last { z } else { tape.tanh(z) };
        }
        let n = self.config.state_dim;
        let mean = tape.slice(x, 0, n)?;
        let log_var = tape.slice(x, n, n)?;
        let log_var = tape.clamp(log_var, LOG_VAR_MIN, LOG_VAR_MAX);
        let variance = tape.exp(log_var);
        Ok((
            TapedPrediction { mean, variance },
            TapedState {
                h: [h0, h1],
                c: [c0, c1],
            },
        ))
    }

    /// One tick from a recurrent state value. The input state is left untouched.
    pub fn forward(
        &self,
        state: &RecurrentState,
        s: &[f64],
        u: &[f64],
        p: &[f64],
    ) -> Result<(GaussianPrediction, RecurrentState)> {
        self.check_inputs(s.len(), u.len(), p.len())?;
        let mut tape = Tape::new();
        let taped = state.record(&mut tape);
        let s = tape.constant(s.to_vec());
        let u = tape.constant(u.to_vec());
        let p = tape.constant(p.to_vec());
        let (pred, next) = self.forward_taped(&mut tape, &taped, s, u, p)?;
        Ok((pred.read(&tape), next.read(&tape)))
    }

    /// Closed-loop rollout on `tape`: each predicted mean becomes the next state input.
    pub fn rollout_taped<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        state: &TapedState,
        s: Var,
        u_seq: &[Var],
        p: Var,
    ) -> Result<(Vec<TapedPrediction>, TapedState)> {
        if u_seq.is_empty() {
            return Err(Error::Argument("rollout needs at least one command".into()));
        }
        let mut state = *state;
        let mut s = s;
        let mut out = Vec::with_capacity(u_seq.len());
        for &u in u_seq {
            let (pred, next) = self.forward_taped(tape, &state, s, u, p)?;
            s = pred.mean;
            state = next;
            out.push(pred);
        }
        Ok((out, state))
    }

    pub fn rollout(
        &self,
        state: &RecurrentState,
        s: &[f64],
        u_seq: &[Vec<f64>],
        p: &[f64],
    ) -> Result<Vec<GaussianPrediction>> {
        let mut tape = Tape::new();
        let taped = state.record(&mut tape);
        let s = tape.constant(s.to_vec());
        let us: Vec<Var> = u_seq.iter().map(|u| tape.constant(u.clone())).collect();
        let p = tape.constant(p.to_vec());
        let (preds, _) = self.rollout_taped(&mut tape, &taped, s, &us, p)?;
        Ok(preds.iter().map(|pr| pr.read(&tape)).collect())
    }

    /// Advances the recurrent state by one measured tick without keeping the prediction.
    pub fn advance(&self, state: &RecurrentState, s: &[f64], u: &[f64], p: &[f64]) -> Result<RecurrentState> {
        Ok(self.forward(state, s, u, p)?.1)
    }

    /// Checks that every tensor matches the configured shapes.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let w = self.config.widths();
        let bad = |what: &str| Error::Format(format!("layer shapes do not match config ({what})"));
        if self.encoder.len() != 4 || self.recurrent.len() != 2 || self.decoder.len() != 4 {
            return Err(bad("layer count"));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            if l.input_dim() != w[i] || l.output_dim() != w[i + 1] {
                return Err(bad("encoder"));
            }
        }
        for (i, c) in self.recurrent.iter().enumerate() {
            if c.input_dim() != w[3 + i] || c.hidden() != w[4 + i] {
                return Err(bad("lstm"));
            }
        }
        for (i, l) in self.decoder.iter().enumerate() {
            if l.input_dim() != w[5 + i] || l.output_dim() != w[6 + i] {
                return Err(bad("decoder"));
            }
        }
        check_len("norm state dim", self.config.state_dim, self.norm.state_dim())?;
        check_len("norm command dim", self.config.command_dim, self.norm.command_dim())?;
        for entry in &self.pb_table {
            check_len("parametric bias", self.config.pb_dim, entry.value.len())?;
        }
        Ok(())
    }
}
