//! Pass/fail checks of a trained model against the simulation study.
//!
//! Each check regenerates its own held-out data from fixed seeds, so a given
//! model file and [`EvalConfig`] always produce the same verdicts.

use crate::adapt::AdaptConfig;
use crate::controller::{optimize, Bounds, ControlConfig, QuadraticObjective};
use crate::error::Result;
use crate::exec::Execution;
use crate::harness::{
    analyze_pb, final_pb, nearest_entry, pb_for_label, run_adaptation_episode, run_control_batch, sigma_profile,
    summarize, AdaptEpisode, ControlRecord, ControlTask,
};
use crate::model::ModelParams;
use crate::sim::{collect_trials, env_label, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Base seed for every held-out simulation.
    pub seed: u64,
    pub sigma_trials: usize,
    pub sigma_steps: usize,
    pub min_speed_ratio: f64,
    pub beta_ratio_range: (f64, f64),
    pub adapt: AdaptConfig,
    pub adapt_seeds: usize,
    pub adapt_ticks: usize,
    /// Seeds (of `adapt_seeds`) that must end nearest the right environment.
    pub adapt_required: usize,
    pub control: ControlConfig,
    pub control_streams: usize,
    pub control_task: ControlTask,
    /// Ticks averaged for the early-episode σ (4 s at 5 Hz).
    pub control_window: usize,
    pub c_variance_high: f64,
    /// Allowed band for the C = 0 early σ_trans.
    pub sigma_band: (f64, f64),
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            sigma_trials: 5,
            sigma_steps: 200,
            min_speed_ratio: 2.0,
            beta_ratio_range: (5.0, 20.0),
            adapt: AdaptConfig::default(),
            adapt_seeds: 10,
            adapt_ticks: 200,
            adapt_required: 8,
            control: ControlConfig::default(),
            control_streams: 10,
            control_task: ControlTask::default(),
            control_window: 20,
            c_variance_high: 30.0,
            sigma_band: (0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub criterion: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {}. {}: {}", self.criterion, self.name, self.detail)
    }
}

/// Low- vs high-speed σ_trans under the (0.4, 1.0) PB, and the σ ratio
/// between the (0.4, 1.0) and (0.4, 0.1) PBs, each on its own environment's data.
pub fn check_heteroscedasticity(model: &ModelParams, cfg: &EvalConfig, exec: Execution) -> Result<CheckResult> {
    let noisy = SimConfig::new(0.4, 1.0, cfg.seed)?;
    let quiet = SimConfig::new(0.4, 0.1, cfg.seed)?;
    let noisy_data = collect_trials(&[noisy], cfg.sigma_steps, cfg.sigma_trials, exec)?;
    let quiet_data = collect_trials(&[quiet], cfg.sigma_steps, cfg.sigma_trials, exec)?;
    let hi = sigma_profile(model, &pb_for_label(model, &noisy.label())?, &noisy_data)?;
    let lo = sigma_profile(model, &pb_for_label(model, &quiet.label())?, &quiet_data)?;
    let speed_ratio = hi.low_speed / hi.high_speed;
    let beta_ratio = hi.overall / lo.overall;
    let passed = speed_ratio >= cfg.min_speed_ratio
        && beta_ratio >= cfg.beta_ratio_range.0
        && beta_ratio <= cfg.beta_ratio_range.1;
    Ok(CheckResult {
        criterion: 4,
        name: "heteroscedasticity learned",
        passed,
        detail: format!(
            "σ_trans low-speed {:.3} ({} samples) / high-speed {:.3} ({} samples) = {speed_ratio:.2} (need ≥ {}); \
             β=1.0 vs β=0.1 mean σ {:.3} / {:.3} = {beta_ratio:.2} (need {}..{})",
            hi.low_speed,
            hi.n_low,
            hi.high_speed,
            hi.n_high,
            cfg.min_speed_ratio,
            hi.overall,
            lo.overall,
            cfg.beta_ratio_range.0,
            cfg.beta_ratio_range.1
        ),
    })
}

/// β-level linear separability in the PCA plane and intra < inter PB distance.
pub fn check_pb_organization(model: &ModelParams) -> Result<CheckResult> {
    let a = analyze_pb(model)?;
    let passed = a.beta_separable && a.distances.intra < a.distances.inter;
    Ok(CheckResult {
        criterion: 5,
        name: "PB organization",
        passed,
        detail: format!(
            "β separable in PCA plane: {}; intra {:.4} < inter {:.4}; α ordered within β levels: {}; explained {:.3?}",
            a.beta_separable, a.distances.intra, a.distances.inter, a.alpha_ordered, a.pca.explained
        ),
    })
}

/// From `p = 0`, adapts in (0.4, 0.1) and (0.6, 1.0) on several seeds.
pub fn check_adaptation(model: &ModelParams, cfg: &EvalConfig, exec: Execution) -> Result<CheckResult> {
    let hash = model.weight_hash();
    let mut parts = Vec::new();
    let mut passed = true;
    for (alpha, beta) in [(0.4, 0.1), (0.6, 1.0)] {
        let want = env_label(alpha, beta);
        let sim = SimConfig::new(alpha, beta, cfg.seed + 1)?;
        let streams: Vec<u64> = (0..cfg.adapt_seeds as u64).collect();
        let hits = exec.try_map(&streams, |&stream| -> Result<bool> {
            let ep = AdaptEpisode {
                sim,
                stream,
                ticks: cfg.adapt_ticks,
                switch: None,
            };
            let records = run_adaptation_episode(model, &ep, &cfg.adapt)?;
            let p = final_pb(&records, model.config().pb_dim);
            Ok(nearest_entry(model.pb_table(), &p).is_some_and(|e| e.label == want))
        })?;
        let correct = hits.iter().filter(|h| **h).count();
        passed &= correct >= cfg.adapt_required;
        parts.push(format!("{want}: {correct}/{}", cfg.adapt_seeds));
    }
    let frozen = model.weight_hash() == hash;
    passed &= frozen;
    Ok(CheckResult {
        criterion: 6,
        name: "online adaptation",
        passed,
        detail: format!(
            "nearest trained PB after {} ticks: {} (need ≥ {}); weights unchanged: {frozen}",
            cfg.adapt_ticks,
            parts.join(", "),
            cfg.adapt_required
        ),
    })
}

/// Quadratic oracle: 3 epochs × 10 step sizes from zero reach within 5% of the minimum.
pub fn quadratic_oracle_gap(cfg: &ControlConfig) -> Result<f64> {
    let horizon = cfg.horizon;
    let target: Vec<Vec<f64>> = (0..horizon)
        .map(|k| vec![1.0 + 0.1 * k as f64, -0.5 + 0.05 * k as f64])
        .collect();
    let q = QuadraticObjective {
        target,
        weights: vec![1.0, 0.9],
        offset: 1.0,
    };
    let plan = optimize(
        &q,
        vec![vec![0.0; 2]; horizon],
        cfg,
        &Bounds::unbounded(2),
        Execution::Sequential,
    )?;
    Ok(plan.loss / q.offset - 1.0)
}

/// Closed-loop episodes at (0.5, 1.0) for C_variance = 0 and the high setting.
///
/// Returns the line-search invariant check and the variance-reduction check.
pub fn check_control(model: &ModelParams, cfg: &EvalConfig, exec: Execution) -> Result<(CheckResult, CheckResult)> {
    let sim = SimConfig::new(0.5, 1.0, cfg.seed + 2)?;
    let pb = pb_for_label(model, &sim.label())?;
    let streams: Vec<u64> = (0..cfg.control_streams as u64).collect();
    let mut episodes: Vec<Vec<Vec<ControlRecord>>> = Vec::new();
    for c in [0.0, cfg.c_variance_high] {
        let control = ControlConfig {
            c_variance: c,
            ..cfg.control.clone()
        };
        episodes.push(run_control_batch(
            model,
            &pb,
            sim,
            &streams,
            &cfg.control_task,
            &control,
            exec,
        )?);
    }
    let ticks: usize = episodes.iter().flatten().map(Vec::len).sum();
    let violations = episodes
        .iter()
        .flatten()
        .flatten()
        .filter(|r| r.fault || !(r.loss <= r.start_loss))
        .count();
    let gap = quadratic_oracle_gap(&cfg.control)?;
    let line_search = CheckResult {
        criterion: 7,
        name: "controller line search",
        passed: violations == 0 && gap <= 0.05,
        detail: format!(
            "ticks with loss above warm start (or faulted): {violations}/{ticks}; quadratic oracle gap {:.3}% (need ≤ 5%)",
            gap * 100.0
        ),
    };

    let mean_sigma = |eps: &[Vec<ControlRecord>]| {
        eps.iter()
            .map(|e| summarize(e, cfg.control_window).sigma_window)
            .sum::<f64>()
            / eps.len() as f64
    };
    let s0 = mean_sigma(&episodes[0]);
    let s1 = mean_sigma(&episodes[1]);
    let passed = s1 < s0 && s0 >= cfg.sigma_band.0 && s0 <= cfg.sigma_band.1;
    let variance = CheckResult {
        criterion: 8,
        name: "variance-minimizing control",
        passed,
        detail: format!(
            "mean σ_trans over first {} ticks: C=0 {s0:.3}, C={} {s1:.3}; C=0 within {}..{}",
            cfg.control_window, cfg.c_variance_high, cfg.sigma_band.0, cfg.sigma_band.1
        ),
    };
    Ok((line_search, variance))
}

/// Criteria that depend only on a trained model: 4, 5, 6, 7 and 8.
pub fn evaluate_model(model: &ModelParams, cfg: &EvalConfig, exec: Execution) -> Result<Vec<CheckResult>> {
    let (c7, c8) = check_control(model, cfg, exec)?;
    Ok(vec![
        check_heteroscedasticity(model, cfg, exec)?,
        check_pb_organization(model)?,
        check_adaptation(model, cfg, exec)?,
        c7,
        c8,
    ])
}
