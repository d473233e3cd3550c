//! Stochastic mobile-base plant and random-walk command generator.
//!
//! Each tick (0.2 s) both velocities relax toward the command at rate `α`
//! and receive Gaussian noise scaled by `β`:
//!
//! ```text
//! w_trans ← w_trans + α (w_ref_trans − w_trans) + β N(0, 1 / (|w_trans| + |w_rot| + 0.1))
//! w_rot   ← w_rot   + α (w_ref_rot   − w_rot)   + β N(0, 0.1)
//! ```
//!
//! The second argument of `N` is a standard deviation. Both lines read the
//! pre-step state. Randomness comes from ChaCha8 with a documented draw order:
//! one standard normal for translation, then one for rotation, per step (drawn
//! even when `β = 0`); the command walk draws one uniform per dimension,
//! translation first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{TimedSample, Trial};
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const TICK_PERIOD: f64 = 0.2;
pub const COMMAND_LIMIT: f64 = 3.0;
const SPEED_FLOOR: f64 = 0.1;
const ROT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(alpha: f64, beta: f64, seed: u64) -> Result<Self> {
        let cfg = Self { alpha, beta, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Argument(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Argument(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }

    /// Environment label used in datasets and PB tables.
    pub fn label(&self) -> String {
        env_label(self.alpha, self.beta)
    }
}

pub fn env_label(alpha: f64, beta: f64) -> String {
    format!("alpha={alpha:?},beta={beta:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimState {
    pub w_trans: f64,
    pub w_rot: f64,
}

impl SimState {
    pub fn new(w_trans: f64, w_rot: f64) -> Self {
        Self { w_trans, w_rot }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.w_trans, self.w_rot]
    }

    /// `|w_trans| + |w_rot|`.
    pub fn speed(self) -> f64 {
        self.w_trans.abs() + self.w_rot.abs()
    }
}

/// Standard deviation of the translational noise at `state`, before scaling by `β`.
pub fn trans_noise_std(state: SimState) -> f64 {
    1.0 / (state.speed() + SPEED_FLOOR)
}

pub fn sim_step<R: Rng + ?Sized>(state: SimState, cmd: [f64; 2], alpha: f64, beta: f64, rng: &mut R) -> SimState {
    let z_trans: f64 = rng.sample(StandardNormal);
    let z_rot: f64 = rng.sample(StandardNormal);
    SimState {
        w_trans: state.w_trans + alpha * (cmd[0] - state.w_trans) + beta * trans_noise_std(state) * z_trans,
        w_rot: state.w_rot + alpha * (cmd[1] - state.w_rot) + beta * ROT_NOISE_STD * z_rot,
    }
}

/// One random-walk update given the uniform draws.
pub fn random_walk_step(prev: f64, draw: f64) -> f64 {
    (prev + draw).clamp(-COMMAND_LIMIT, COMMAND_LIMIT)
}

pub fn random_walk_command<R: Rng + ?Sized>(prev: [f64; 2], rng: &mut R) -> [f64; 2] {
    let a = rng.random_range(-1.0..=1.0);
    let b = rng.random_range(-1.0..=1.0);
    [random_walk_step(prev[0], a), random_walk_step(prev[1], b)]
}

/// A plant instance with its own RNG stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    state: SimState,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        Self::with_stream(config, 0)
    }

    /// Uses ChaCha stream `stream` of `config.seed`, so repetitions are independent.
    pub fn with_stream(config: SimConfig, stream: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        Ok(Self {
            config,
            state: SimState::default(),
            rng,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> SimState {
        self.state
    }

    pub fn reset(&mut self, state: SimState) {
        self.state = state;
    }

    /// Switches `(α, β)` without touching state or RNG.
    pub fn set_environment(&mut self, alpha: f64, beta: f64) -> Result<()> {
        let cfg = SimConfig::new(alpha, beta, self.config.seed)?;
        self.config = cfg;
        Ok(())
    }

    pub fn step(&mut self, cmd: [f64; 2]) -> SimState {
        self.state = sim_step(self.state, cmd, self.config.alpha, self.config.beta, &mut self.rng);
        self.state
    }

    pub fn random_command(&mut self, prev: [f64; 2]) -> [f64; 2] {
        random_walk_command(prev, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Random-walk driving, `steps` samples per trial, `trials_per_config` trials per grid entry.
///
/// Trial `k = config_index · trials_per_config + repetition` uses stream `k`
/// of its config's seed, starts at rest with a zero previous command and
/// records `(s_t, u_t)` before stepping.
pub fn collect_trials(
    grid: &[SimConfig],
    steps: usize,
    trials_per_config: usize,
    exec: Execution,
) -> Result<Vec<Trial>> {
    if grid.is_empty() {
        return Err(Error::Argument("simulation grid is empty".into()));
    }
    if steps < 2 || trials_per_config == 0 {
        return Err(Error::Argument("need ≥ 2 steps and ≥ 1 trial per config".into()));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, SimConfig)> = grid
        .iter()
        .enumerate()
        .flat_map(|(ci, cfg)| (0..trials_per_config).map(move |r| (ci * trials_per_config + r, *cfg)))
        .collect();
    exec.try_map(&jobs, |&(k, cfg)| {
        let mut sim = Simulator::with_stream(cfg, k as u64)?;
        let mut cmd = [0.0; 2];
        let mut samples = Vec::with_capacity(steps);
        for tick in 0..steps {
            cmd = sim.random_command(cmd);
            let s = sim.state();
            samples.push(TimedSample::new(s.to_vec(), cmd.to_vec(), tick as u64)?);
            sim.step(cmd);
        }
        Trial::new(k as u64, cfg.label(), samples)
    })
}

/// The 3 × 2 grid of `α ∈ {0.4, 0.5, 0.6}`, `β ∈ {0.1, 1.0}`.
pub fn standard_grid(seed: u64) -> Vec<SimConfig> {
    let mut grid = Vec::new();
    for alpha in [0.4, 0.5, 0.6] {
        for beta in [0.1, 1.0] {
            grid.push(SimConfig { alpha, beta, seed });
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = sim_step(SimState::new(0.0, 0.0), [1.0, 0.0], 0.5, 0.0, &mut rng);
        assert_eq!(next, SimState::new(0.5, 0.0));
    }

    #[test]
    fn noise_std_substitution() {
        assert!((trans_noise_std(SimState::new(0.4, 0.5)) - 1.0).abs() < 1e-15);
        assert!((trans_noise_std(SimState::new(-0.4, -0.5)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_beta_is_exactly_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = SimState::new(-1.3, 0.7);
        for k in 0..500 {
            let cmd = [((k % 7) as f64) - 3.0, 0.25 * (k % 5) as f64];
            let next = sim_step(s, cmd, 0.4, 0.0, &mut rng);
            let t = s.w_trans + 0.4 * (cmd[0] - s.w_trans);
            let r = s.w_rot + 0.4 * (cmd[1] - s.w_rot);
            assert_eq!(next.w_trans.to_bits(), (t + 0.0).to_bits());
            assert_eq!(next.w_rot.to_bits(), (r + 0.0).to_bits());
            s = next;
        }
    }

    #[test]
    fn random_walk_clamps() {
        assert_eq!(random_walk_step(2.8, 0.5), 3.0);
        assert_eq!(random_walk_step(-3.0, -1.0), -3.0);
        assert_eq!(random_walk_step(0.5, -0.25), 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut cmd = [0.0; 2];
        for _ in 0..10_000 {
            cmd = random_walk_command(cmd, &mut rng);
            assert!(cmd.iter().all(|c| c.abs() <= COMMAND_LIMIT));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SimConfig::new(0.0, 1.0, 0).is_err());
        assert!(SimConfig::new(1.2, 1.0, 0).is_err());
        assert!(SimConfig::new(0.5, -0.1, 0).is_err());
        assert!(SimConfig::new(1.0, 0.0, 0).is_ok());
    }

    #[test]
    fn collection_shape_and_determinism() {
        let grid = standard_grid(17);
        let a = collect_trials(&grid, 200, 1, Execution::Parallel).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|t| t.len() == 200));
        let b = collect_trials(&grid, 200, 1, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        crate::dataset::write_dataset(&a, &mut bytes_a).unwrap();
        crate::dataset::write_dataset(&b, &mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(a[1].label, "alpha=0.4,beta=1.0");
    }

    #[test]
    fn repetitions_are_independent() {
        let grid = [SimConfig::new(0.5, 1.0, 3).unwrap()];
        let trials = collect_trials(&grid, 50, 2, Execution::Sequential).unwrap();
        assert_ne!(trials[0].samples, trials[1].samples);
    }

    #[test]
    fn zero_noise_trials_replay_exactly() {
        let grid = [SimConfig::new(0.6, 0.0, 5).unwrap()];
        let trial = &collect_trials(&grid, 100, 1, Execution::Sequential).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for pair in trial.samples.windows(2) {
            let s = SimState::new(pair[0].s[0], pair[0].s[1]);
            let next = sim_step(s, [pair[0].u[0], pair[0].u[1]], 0.6, 0.0, &mut rng);
            assert_eq!(next.to_vec(), pair[1].s);
        }
    }
}
