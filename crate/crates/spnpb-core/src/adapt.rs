//! Online update of the parametric bias with the network weights frozen.
//!
//! Recent samples go into a bounded buffer together with the recurrent
//! state that preceded each one, so the oldest retained sample always has
//! an exact starting state for replay. Once the buffer holds more than
//! `threshold` samples, every tick runs one teacher-forced NLL pass over
//! the whole buffer and takes one momentum-SGD step on `p` alone.

use std::collections::VecDeque;

use crate::dataset::TimedSample;
use crate::error::{check_len, Error, Result};
use crate::model::{ModelParams, RecurrentState};
use crate::nn::MomentumState;
use crate::trainer::{sequence_nll, sequence_nll_grad, NormalizedSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    /// Updates start once the buffer holds more than this many samples.
    pub threshold: usize,
    /// Older samples are evicted beyond this many.
    pub capacity: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            threshold: 10,
            capacity: 50,
            learning_rate: 1e-5,
            momentum: 0.9,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 || self.threshold >= self.capacity {
            return Err(Error::Argument(format!(
                "need 2 ≤ capacity and threshold < capacity (got threshold {}, capacity {})",
                self.threshold, self.capacity
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(
                "learning rate must be positive and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdaptBuffer {
    entries: VecDeque<(TimedSample, RecurrentState)>,
    threshold: usize,
    capacity: usize,
}

impl AdaptBuffer {
    pub fn new(threshold: usize, capacity: usize) -> Result<Self> {
        AdaptConfig {
            threshold,
            capacity,
            ..AdaptConfig::default()
        }
        .validate()?;
        Ok(Self {
            entries: VecDeque::with_capacity(capacity + 1),
            threshold,
            capacity,
        })
    }

    pub fn from_config(config: &AdaptConfig) -> Result<Self> {
        Self::new(config.threshold, config.capacity)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// True once the buffer holds more than `threshold` samples.
    pub fn update_ready(&self) -> bool {
        self.entries.len() > self.threshold
    }

    /// Appends a sample along with the recurrent state that preceded it.
    pub fn push(&mut self, sample: TimedSample, state_before: RecurrentState) -> Result<()> {
        if let Some((last, _)) = self.entries.back() {
            if sample.tick <= last.tick {
                return Err(Error::Argument(format!(
                    "tick {} does not follow buffered tick {}",
                    sample.tick, last.tick
                )));
            }
        }
        self.entries.push_back((sample, state_before));
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn oldest_tick(&self) -> Option<u64> {
        self.entries.front().map(|(s, _)| s.tick)
    }

    /// Recurrent state preceding the oldest retained sample.
    pub fn snapshot(&self) -> Option<&RecurrentState> {
        self.entries.front().map(|(_, st)| st)
    }

    pub fn samples(&self) -> impl Iterator<Item = &TimedSample> {
        self.entries.iter().map(|(s, _)| s)
    }

    pub fn normalized(&self, model: &ModelParams) -> Result<NormalizedSequence> {
        let norm = model.norm();
        let mut states = Vec::with_capacity(self.len());
        let mut commands = Vec::with_capacity(self.len());
        for sample in self.samples() {
            let (s, u) = norm.normalize(&sample.s, &sample.u)?;
            states.push(s);
            commands.push(u);
        }
        Ok(NormalizedSequence { states, commands })
    }

    /// Teacher-forced NLL of the buffered window from the stored snapshot.
    pub fn nll(&self, model: &ModelParams, p: &[f64]) -> Result<f64> {
        match self.snapshot() {
            Some(start) => sequence_nll(model, start, p, &self.normalized(model)?),
            None => Ok(0.0),
        }
    }
}

/// The live parametric-bias estimate and its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LivePb {
    value: Vec<f64>,
    optimizer: MomentumState,
}

impl LivePb {
    pub fn new(initial: Vec<f64>, learning_rate: f64, momentum: f64) -> Self {
        let optimizer = MomentumState::new(initial.len(), learning_rate, momentum);
        Self {
            value: initial,
            optimizer,
        }
    }

    pub fn zeros(pb_dim: usize, config: &AdaptConfig) -> Self {
        Self::new(vec![0.0; pb_dim], config.learning_rate, config.momentum)
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn optimizer(&self) -> &MomentumState {
        &self.optimizer
    }

    pub fn optimizer_mut(&mut self) -> &mut MomentumState {
        &mut self.optimizer
    }
}

/// One full-buffer momentum step on `p`. Returns the buffer loss before the step.
pub fn adapt_step(model: &ModelParams, buffer: &AdaptBuffer, live: &mut LivePb) -> Result<f64> {
    if !buffer.update_ready() {
        return Err(Error::Precondition(format!(
            "buffer holds {} samples; more than {} are needed",
            buffer.len(),
            buffer.threshold
        )));
    }
    check_len("live parametric bias", model.config().pb_dim, live.value.len())?;
    let start = buffer.snapshot().expect("ready buffer is non-empty");
    let grad = sequence_nll_grad(model, start, &live.value, &buffer.normalized(model)?)?;
    if !grad.loss.is_finite() || grad.pb.iter().any(|g| !g.is_finite()) {
        return Err(Error::Controller(format!("non-finite adaptation loss {}", grad.loss)));
    }
    live.optimizer.update(&mut live.value, &grad.pb)?;
    Ok(grad.loss)
}

/// Buffer, live PB and the tracking recurrent state, advanced once per tick.
#[derive(Debug, Clone)]
pub struct OnlineAdapter {
    buffer: AdaptBuffer,
    live: LivePb,
    tracking: RecurrentState,
}

impl OnlineAdapter {
    pub fn new(model: &ModelParams, config: &AdaptConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            buffer: AdaptBuffer::from_config(config)?,
            live: LivePb::zeros(model.config().pb_dim, config),
            tracking: RecurrentState::zeros(),
        })
    }

    pub fn with_initial_pb(model: &ModelParams, config: &AdaptConfig, initial: Vec<f64>) -> Result<Self> {
        check_len("initial parametric bias", model.config().pb_dim, initial.len())?;
        let mut adapter = Self::new(model, config)?;
        adapter.live = LivePb::new(initial, config.learning_rate, config.momentum);
        Ok(adapter)
    }

    pub fn pb(&self) -> &[f64] {
        self.live.value()
    }

    pub fn buffer(&self) -> &AdaptBuffer {
        &self.buffer
    }

    pub fn tracking_state(&self) -> &RecurrentState {
        &self.tracking
    }

    /// Records the raw `(s_t, u_t)` of one tick, advances the tracking state
    /// and, once the buffer is ready, adapts `p`. Returns the buffer loss if a
    /// step was taken.
    pub fn observe(&mut self, model: &ModelParams, sample: TimedSample) -> Result<Option<f64>> {
        let (s, u) = model.norm().normalize(&sample.s, &sample.u)?;
        self.buffer.push(sample, self.tracking.clone())?;
        self.tracking = model.advance(&self.tracking, &s, &u, self.live.value())?;
        if self.buffer.update_ready() {
            adapt_step(model, &self.buffer, &mut self.live).map(Some)
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::norm::NormStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(tick: u64, rng: &mut ChaCha8Rng) -> TimedSample {
        TimedSample::new(
            vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)],
            vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            tick,
        )
        .unwrap()
    }

    fn model(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(ModelConfig::default(), NormStats::identity(2, 2), &mut rng).unwrap()
    }

    #[test]
    fn ring_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = AdaptBuffer::new(10, 50).unwrap();
        for t in 1..=51 {
            buf.push(sample(t, &mut rng), RecurrentState::zeros()).unwrap();
        }
        assert_eq!(buf.len(), 50);
        assert_eq!(buf.oldest_tick(), Some(2));
    }

    #[test]
    fn readiness_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = AdaptBuffer::new(10, 50).unwrap();
        for t in 0..9 {
            buf.push(sample(t, &mut rng), RecurrentState::zeros()).unwrap();
        }
        assert!(!buf.update_ready());
        buf.push(sample(9, &mut rng), RecurrentState::zeros()).unwrap();
        assert!(!buf.update_ready());
        buf.push(sample(10, &mut rng), RecurrentState::zeros()).unwrap();
        assert!(buf.update_ready());
    }

    #[test]
    fn rejects_non_monotone_tick() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = AdaptBuffer::new(2, 5).unwrap();
        buf.push(sample(4, &mut rng), RecurrentState::zeros()).unwrap();
        assert!(matches!(
            buf.push(sample(4, &mut rng), RecurrentState::zeros()),
            Err(Error::Argument(_))
        ));
        assert!(AdaptBuffer::new(50, 50).is_err());
    }

    #[test]
    fn snapshot_follows_eviction() {
        let m = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut buf = AdaptBuffer::new(2, 4).unwrap();
        let mut state = RecurrentState::zeros();
        let mut states = Vec::new();
        for t in 0..7 {
            let s = sample(t, &mut rng);
            states.push(state.clone());
            buf.push(s.clone(), state.clone()).unwrap();
            state = m.advance(&state, &s.s, &s.u, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(buf.oldest_tick(), Some(3));
        assert_eq!(buf.snapshot(), Some(&states[3]));
    }

    #[test]
    fn replay_is_independent_of_eviction_history() {
        let m = model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let all: Vec<TimedSample> = (0..30).map(|t| sample(t, &mut rng)).collect();
        let mut states = vec![RecurrentState::zeros()];
        for s in &all {
            let next = m.advance(states.last().unwrap(), &s.s, &s.u, &[0.1, 0.1]).unwrap();
            states.push(next);
        }
        // long history with many evictions
        let mut long = AdaptBuffer::new(5, 12).unwrap();
        for (s, st) in all.iter().zip(&states) {
            long.push(s.clone(), st.clone()).unwrap();
        }
        // only the retained window, pushed fresh
        let mut fresh = AdaptBuffer::new(5, 12).unwrap();
        for (s, st) in all.iter().zip(&states).skip(18) {
            fresh.push(s.clone(), st.clone()).unwrap();
        }
        let p = [0.3, -0.4];
        assert_eq!(
            long.nll(&m, &p).unwrap().to_bits(),
            fresh.nll(&m, &p).unwrap().to_bits()
        );
    }

    #[test]
    fn not_ready_is_a_precondition_error() {
        let m = model(5);
        let buf = AdaptBuffer::new(10, 50).unwrap();
        let mut live = LivePb::zeros(2, &AdaptConfig::default());
        assert!(matches!(adapt_step(&m, &buf, &mut live), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_gradient_only_coasts() {
        // a zero network ignores p, so the PB gradient is exactly zero
        let m = ModelParams::zeros(ModelConfig::default(), NormStats::identity(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut buf = AdaptBuffer::new(2, 10).unwrap();
        for t in 0..5 {
            buf.push(sample(t, &mut rng), RecurrentState::zeros()).unwrap();
        }
        let mut live = LivePb::new(vec![0.2, -0.1], 0.05, 0.9);
        adapt_step(&m, &buf, &mut live).unwrap();
        assert_eq!(live.value(), &[0.2, -0.1]);
        live.optimizer_mut().set_velocity(&[0.5, 0.0]).unwrap();
        adapt_step(&m, &buf, &mut live).unwrap();
        assert_eq!(live.value(), &[0.2 + 0.9 * 0.5, -0.1]);
    }

    #[test]
    fn weights_stay_frozen() {
        let m = model(7);
        let hash = m.weight_hash();
        let mut adapter = OnlineAdapter::new(&m, &AdaptConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut steps = 0;
        for t in 0..40 {
            if adapter.observe(&m, sample(t, &mut rng)).unwrap().is_some() {
                steps += 1;
            }
        }
        assert_eq!(steps, 40 - 10);
        assert_eq!(m.weight_hash(), hash);
        assert_ne!(adapter.pb(), &[0.0, 0.0]);
    }
}
