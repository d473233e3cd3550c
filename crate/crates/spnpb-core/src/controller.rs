//! Receding-horizon command optimization through the learned model.
//!
//! Each tick the previous plan is shifted by one step, then refined for a few
//! epochs. An epoch takes one gradient of the control loss with respect to the
//! whole command sequence, tries a geometric ladder of step sizes along it,
//! and keeps the lowest-loss candidate (the current plan included, so the loss
//! never goes up).
//!
//! ```text
//! L = ‖s_ref − ŝ‖ + C_variance · V + C_orig · ‖u_orig − u‖
//! V = ‖v̂‖                  (absolute)
//! V = ‖v̂ ⊘ (|ŝ| + 0.1)‖    (per-state)
//! ```
//!
//! Norms run over the flattened horizon. Everything is in normalized units.

use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::model::{ModelParams, RecurrentState};
use crate::nn::{Tape, Var};

/// Offset added to `|ŝ|` in per-state variance scaling.
pub const PER_STATE_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    #[default]
    Absolute,
    PerState,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(Self::Absolute),
            "per-state" | "per_state" => Ok(Self::PerState),
            other => Err(Error::Argument(format!("unknown variance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub horizon: usize,
    /// Step sizes tried per epoch.
    pub batch: usize,
    pub epochs: usize,
    pub gamma_max: f64,
    pub c_variance: f64,
    pub c_orig: f64,
    pub variance_mode: VarianceMode,
    /// Raw command bounds, per dimension.
    pub command_min: Vec<f64>,
    pub command_max: Vec<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            batch: 10,
            epochs: 3,
            gamma_max: 3.0,
            c_variance: 0.0,
            c_orig: 0.0,
            variance_mode: VarianceMode::Absolute,
            command_min: vec![-3.0; 2],
            command_max: vec![3.0; 2],
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.batch == 0 || self.epochs == 0 {
            return Err(Error::Argument("horizon, batch and epochs must all be ≥ 1".into()));
        }
        if !(self.gamma_max > 0.0) || !self.gamma_max.is_finite() {
            return Err(Error::Argument(format!(
                "gamma_max must be positive, got {}",
                self.gamma_max
            )));
        }
        if !(self.c_variance >= 0.0 && self.c_orig >= 0.0) {
            return Err(Error::Argument("loss weights must be non-negative".into()));
        }
        check_len("command bounds", self.command_min.len(), self.command_max.len())?;
        if self
            .command_min
            .iter()
            .zip(&self.command_max)
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::Argument(
                "every command lower bound must be below its upper bound".into(),
            ));
        }
        Ok(())
    }
}

/// A command sequence with the loss and predictions it was last evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub u_seq: Vec<Vec<f64>>,
    pub loss: f64,
    /// Loss of the (clamped) starting plan the optimizer was given.
    pub initial_loss: f64,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl ControlPlan {
    /// Unevaluated all-zero plan.
    pub fn zeros(horizon: usize, command_dim: usize) -> Self {
        Self {
            u_seq: vec![vec![0.0; command_dim]; horizon],
            loss: f64::NAN,
            initial_loss: f64::NAN,
            means: Vec::new(),
            variances: Vec::new(),
        }
    }
}

/// Drops the first command and repeats the last: `[a, b, c] → [b, c, c]`.
pub fn warm_start(prev: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match prev.split_first() {
        None => Vec::new(),
        Some((_, rest)) => {
            let mut next = rest.to_vec();
            next.push(prev[prev.len() - 1].clone());
            next
        }
    }
}

/// `n` step sizes spaced geometrically from `γ_max · 10⁻³` to `γ_max`.
pub fn gamma_schedule(gamma_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![gamma_max],
        _ => (0..n)
            .map(|i| gamma_max * 10f64.powf(-3.0 * (1.0 - i as f64 / (n - 1) as f64)))
            .collect(),
    }
}

fn diff_norm(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_rows(context: &'static str, rows: &[Vec<f64>], len: usize, dim: usize) -> Result<()> {
    check_len(context, len, rows.len())?;
    rows.iter().try_for_each(|r| check_len(context, dim, r.len()))
}

/// Control loss from already-computed predictions.
pub fn control_loss(
    means: &[Vec<f64>],
    variances: &[Vec<f64>],
    s_ref: &[Vec<f64>],
    u_orig: &[Vec<f64>],
    u: &[Vec<f64>],
    config: &ControlConfig,
) -> Result<f64> {
    let n = means.len();
    let ns = means.first().map_or(0, Vec::len);
    let nu = u.first().map_or(0, Vec::len);
    check_rows("predicted variances", variances, n, ns)?;
    check_rows("reference states", s_ref, n, ns)?;
    check_rows("commands", u, n, nu)?;
    check_rows("original commands", u_orig, n, nu)?;

    let v = variances
        .iter()
        .flatten()
        .zip(means.iter().flatten())
        .map(|(v, m)| match config.variance_mode {
            VarianceMode::Absolute => *v,
            VarianceMode::PerState => v / (m.abs() + PER_STATE_EPSILON),
        });
    let v_norm = v.map(|x| x * x).sum::<f64>().sqrt();
    Ok(diff_norm(s_ref, means) + config.c_variance * v_norm + config.c_orig * diff_norm(u_orig, u))
}

fn control_loss_taped(
    tape: &mut Tape<'_>,
    means: &[Var],
    variances: &[Var],
    s_ref: &[Vec<f64>],
    u_orig: &[Vec<f64>],
    u: &[Var],
    config: &ControlConfig,
) -> Result<Var> {
    let mean = tape.concat(means);
    let var = tape.concat(variances);
    let target = tape.constant(s_ref.concat());
    let diff = tape.sub(target, mean)?;
    let mut loss = tape.norm(diff);
    if config.c_variance != 0.0 {
        let v = match config.variance_mode {
            VarianceMode::Absolute => var,
            VarianceMode::PerState => {
                let a = tape.abs(mean);
                let denom = tape.add_scalar(a, PER_STATE_EPSILON);
                tape.div(var, denom)?
            }
        };
        let vn = tape.norm(v);
        let term = tape.scale(vn, config.c_variance);
        loss = tape.add(loss, term)?;
    }
    if config.c_orig != 0.0 {
        let cmd = tape.concat(u);
        let orig = tape.constant(u_orig.concat());
        let d = tape.sub(orig, cmd)?;
        let dn = tape.norm(d);
        let term = tape.scale(dn, config.c_orig);
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}

/// Loss and predictions for one candidate command sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// Something [`optimize`] can descend on.
pub trait Objective: Sync {
    fn evaluate(&self, u_seq: &[Vec<f64>]) -> Result<Evaluation>;
    /// Loss and `∂L/∂u_seq`.
    fn gradient(&self, u_seq: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// Control loss of a model rollout from the live tracking state.
///
/// All inputs are normalized. `s_ref[k]` and `u_orig[k]` pair with the
/// prediction after command `k`.
pub struct RolloutObjective<'a> {
    pub model: &'a ModelParams,
    pub pb: &'a [f64],
    pub state: &'a RecurrentState,
    pub s_t: &'a [f64],
    pub s_ref: &'a [Vec<f64>],
    pub u_orig: &'a [Vec<f64>],
    pub config: &'a ControlConfig,
}

/// Loss plus the command, mean and variance nodes of one recorded rollout.
struct RecordedRollout {
    loss: Var,
    commands: Vec<Var>,
    means: Vec<Var>,
    variances: Vec<Var>,
}

impl RolloutObjective<'_> {
    fn build<'t>(&'t self, tape: &mut Tape<'t>, u_seq: &[Vec<f64>]) -> Result<RecordedRollout> {
        let cfg = self.model.config();
        check_rows("command sequence", u_seq, self.s_ref.len(), cfg.command_dim)?;
        check_rows("reference states", self.s_ref, u_seq.len(), cfg.state_dim)?;
        check_rows("original commands", self.u_orig, u_seq.len(), cfg.command_dim)?;
        let start = self.state.record(tape);
        let s = tape.constant(self.s_t.to_vec());
        let p = tape.constant(self.pb.to_vec());
        let us: Vec<Var> = u_seq.iter().map(|u| tape.input(u.clone())).collect();
        let (preds, _) = self.model.rollout_taped(tape, &start, s, &us, p)?;
        let means: Vec<Var> = preds.iter().map(|pr| pr.mean).collect();
        let vars: Vec<Var> = preds.iter().map(|pr| pr.variance).collect();
        let loss = control_loss_taped(tape, &means, &vars, self.s_ref, self.u_orig, &us, self.config)?;
        Ok(RecordedRollout {
            loss,
            commands: us,
            means,
            variances: vars,
        })
    }
}

impl Objective for RolloutObjective<'_> {
    fn evaluate(&self, u_seq: &[Vec<f64>]) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let RecordedRollout {
            loss,
            means,
            variances: vars,
            ..
        } = self.build(&mut tape, u_seq)?;
        Ok(Evaluation {
            loss: tape.scalar(loss),
            means: means.iter().map(|&m| tape.value(m).to_vec()).collect(),
            variances: vars.iter().map(|&v| tape.value(v).to_vec()).collect(),
        })
    }

    fn gradient(&self, u_seq: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let RecordedRollout { loss, commands: us, .. } = self.build(&mut tape, u_seq)?;
        let grads = tape.backward(loss, &[1.0])?;
        let g = us
            .iter()
            .zip(u_seq)
            .map(|(&u, row)| grads.input(u).map_or_else(|| vec![0.0; row.len()], <[f64]>::to_vec))
            .collect();
        Ok((tape.scalar(loss), g))
    }
}

/// Identity dynamics (`ŝ_{k+1} = u_k`) under a weighted squared tracking loss.
///
/// `L = offset + Σ_k Σ_i ½ wᵢ (u_k,i − target_k,i)²`, minimized at `u = target`
/// with value `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub target: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl Objective for QuadraticObjective {
    fn evaluate(&self, u: &[Vec<f64>]) -> Result<Evaluation> {
        check_rows("command sequence", u, self.target.len(), self.weights.len())?;
        let loss = self.offset
            + u.iter()
                .zip(&self.target)
                .flat_map(|(u, t)| {
                    u.iter()
                        .zip(t)
                        .zip(&self.weights)
                        .map(|((u, t), w)| 0.5 * w * (u - t).powi(2))
                })
                .sum::<f64>();
        Ok(Evaluation {
            loss,
            means: u.to_vec(),
            variances: vec![vec![0.0; self.weights.len()]; u.len()],
        })
    }

    fn gradient(&self, u: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let loss = self.evaluate(u)?.loss;
        let g = u
            .iter()
            .zip(&self.target)
            .map(|(u, t)| {
                u.iter()
                    .zip(t)
                    .zip(&self.weights)
                    .map(|((u, t), w)| w * (u - t))
                    .collect()
            })
            .collect();
        Ok((loss, g))
    }
}

/// Per-dimension box, in the units of the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    /// Maps raw command bounds into the model's normalized command space.
    pub fn normalized(model: &ModelParams, config: &ControlConfig) -> Result<Self> {
        Ok(Self {
            lo: model.norm().normalize_command(&config.command_min)?,
            hi: model.norm().normalize_command(&config.command_max)?,
        })
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Line-search descent from `init`; the result's loss is never above the initial loss.
///
/// Ties between candidates go to the smaller step, and the current plan beats
/// any candidate that is not strictly better.
pub fn optimize<O: Objective>(
    objective: &O,
    init: Vec<Vec<f64>>,
    config: &ControlConfig,
    bounds: &Bounds,
    exec: Execution,
) -> Result<ControlPlan> {
    config.validate()?;
    let mut u = init;
    u.iter_mut().for_each(|row| bounds.clamp(row));
    let first = objective.evaluate(&u)?;
    if !first.loss.is_finite() {
        return Err(Error::Controller(format!(
            "initial control loss is {} (means {:?}, variances {:?})",
            first.loss, first.means, first.variances
        )));
    }
    let mut best = ControlPlan {
        u_seq: u,
        loss: first.loss,
        initial_loss: first.loss,
        means: first.means,
        variances: first.variances,
    };
    let gammas = gamma_schedule(config.gamma_max, config.batch);
    for _ in 0..config.epochs {
        let (_, grad) = objective.gradient(&best.u_seq)?;
        if grad.iter().flatten().all(|g| *g == 0.0) {
            break;
        }
        let current = &best.u_seq;
        let results = exec.map(&gammas, |&gamma| {
            let cand: Vec<Vec<f64>> = current
                .iter()
                .zip(&grad)
                .map(|(u, g)| {
                    let mut row: Vec<f64> = u.iter().zip(g).map(|(u, g)| u - gamma * g).collect();
                    bounds.clamp(&mut row);
                    row
                })
                .collect();
            objective.evaluate(&cand).map(|ev| (cand, ev))
        });
        let mut winner: Option<(Vec<Vec<f64>>, Evaluation)> = None;
        for result in results {
            let (cand, ev) = result?;
            let incumbent = winner.as_ref().map_or(best.loss, |(_, w)| w.loss);
            if ev.loss.is_finite() && ev.loss < incumbent {
                winner = Some((cand, ev));
            }
        }
        match winner {
            Some((cand, ev)) => {
                best = ControlPlan {
                    u_seq: cand,
                    loss: ev.loss,
                    initial_loss: best.initial_loss,
                    means: ev.means,
                    variances: ev.variances,
                }
            }
            None => break,
        }
    }
    Ok(best)
}

/// What the controller emitted on one tick.
#[derive(Debug)]
pub struct TickOutput {
    /// Raw command, always within the configured bounds.
    pub command: Vec<f64>,
    /// Predicted raw standard deviation of the next state under `command`.
    pub sigma: Vec<f64>,
    /// Loss of the plan that produced `command` (NaN on a fault).
    pub loss: f64,
    /// Loss of this tick's warm-start plan (NaN on a fault).
    pub start_loss: f64,
    /// Set when optimization failed and a zero command was emitted instead.
    pub fault: Option<Error>,
}

/// Stateful receding-horizon controller around a trained model and a fixed PB.
pub struct Controller<'m> {
    model: &'m ModelParams,
    pb: Vec<f64>,
    config: ControlConfig,
    bounds: Bounds,
    exec: Execution,
    tracking: RecurrentState,
    previous: Option<(Vec<f64>, Vec<f64>)>,
    plan: ControlPlan,
}

impl<'m> Controller<'m> {
    pub fn new(model: &'m ModelParams, pb: Vec<f64>, config: ControlConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let mc = model.config();
        check_len("controller parametric bias", mc.pb_dim, pb.len())?;
        check_len("command bounds", mc.command_dim, config.command_min.len())?;
        let bounds = Bounds::normalized(model, &config)?;
        let plan = ControlPlan::zeros(config.horizon, mc.command_dim);
        Ok(Self {
            model,
            pb,
            config,
            bounds,
            exec,
            tracking: RecurrentState::zeros(),
            previous: None,
            plan,
        })
    }

    pub fn plan(&self) -> &ControlPlan {
        &self.plan
    }

    pub fn pb(&self) -> &[f64] {
        &self.pb
    }

    pub fn set_pb(&mut self, pb: Vec<f64>) -> Result<()> {
        check_len("controller parametric bias", self.pb.len(), pb.len())?;
        self.pb = pb;
        Ok(())
    }

    pub fn tracking_state(&self) -> &RecurrentState {
        &self.tracking
    }

    /// One control tick from the measured raw state.
    ///
    /// `s_ref` holds the raw targets for the next `horizon` states and
    /// `u_orig` the raw original commands over the same window. On any
    /// failure the emitted command is zero and `fault` says why.
    pub fn step(&mut self, s_raw: &[f64], s_ref: &[Vec<f64>], u_orig: &[Vec<f64>]) -> TickOutput {
        match self.try_step(s_raw, s_ref, u_orig) {
            Ok(out) => out,
            Err(e) => {
                let dim = self.model.config().command_dim;
                let zero = vec![0.0f64; dim];
                let mut stop = zero.clone();
                for ((v, lo), hi) in stop
                    .iter_mut()
                    .zip(&self.config.command_min)
                    .zip(&self.config.command_max)
                {
                    *v = v.clamp(*lo, *hi);
                }
                if let Ok(s) = self.model.norm().normalize_state(s_raw) {
                    if let Ok(u) = self.model.norm().normalize_command(&stop) {
                        self.previous = Some((s, u));
                    }
                }
                TickOutput {
                    command: stop,
                    sigma: vec![f64::NAN; self.model.config().state_dim],
                    loss: f64::NAN,
                    start_loss: f64::NAN,
                    fault: Some(e),
                }
            }
        }
    }

    fn try_step(&mut self, s_raw: &[f64], s_ref: &[Vec<f64>], u_orig: &[Vec<f64>]) -> Result<TickOutput> {
        let norm = self.model.norm();
        let s = norm.normalize_state(s_raw)?;
        let s_ref = s_ref
            .iter()
            .map(|r| norm.normalize_state(r))
            .collect::<Result<Vec<_>>>()?;
        let u_orig = u_orig
            .iter()
            .map(|r| norm.normalize_command(r))
            .collect::<Result<Vec<_>>>()?;
        if let Some((ps, pu)) = &self.previous {
            self.tracking = self.model.advance(&self.tracking, ps, pu, &self.pb)?;
        }
        let objective = RolloutObjective {
            model: self.model,
            pb: &self.pb,
            state: &self.tracking,
            s_t: &s,
            s_ref: &s_ref,
            u_orig: &u_orig,
            config: &self.config,
        };
        let init = warm_start(&self.plan.u_seq);
        let plan = optimize(&objective, init, &self.config, &self.bounds, self.exec)?;
        let mut command = norm.denormalize_command(&plan.u_seq[0])?;
        for ((v, lo), hi) in command
            .iter_mut()
            .zip(&self.config.command_min)
            .zip(&self.config.command_max)
        {
            *v = v.clamp(*lo, *hi);
        }
        let sigma = norm.state_sigma(&plan.variances[0])?;
        let (loss, start_loss) = (plan.loss, plan.initial_loss);
        self.previous = Some((s, norm.normalize_command(&command)?));
        self.plan = plan;
        Ok(TickOutput {
            command,
            sigma,
            loss,
            start_loss,
            fault: None,
        })
    }
}
