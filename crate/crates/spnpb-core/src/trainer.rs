//! Maximum-likelihood training of the network weights and per-trial parametric biases.
//!
//! The loss is the Gaussian negative log-likelihood of every measured next
//! state, summed over trials, ticks and state dimensions. Each trial runs
//! teacher-forced from a zero recurrent state: the measured `s_t`, never the
//! prediction, is fed at every tick.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Trial;
use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::model::{ModelConfig, ModelParams, PbEntry, RecurrentState};
use crate::nn::{AdamState, Tape, Var};
use crate::norm::NormStats;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub weight_lr: f64,
    pub pb_lr: f64,
    /// Joint L2 norm (weights and PB) above which gradients are rescaled.
    pub clip_norm: f64,
    /// Learning rates follow a cosine from 1× down to this multiple by the last epoch.
    /// `1.0` keeps them constant.
    pub final_lr_scale: f64,
    /// Seeds initialization and the per-epoch trial order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            weight_lr: 3e-3,
            pb_lr: 3e-2,
            clip_norm: 10.0,
            final_lr_scale: 0.03,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be ≥ 1".into()));
        }
        if !(self.weight_lr > 0.0 && self.pb_lr > 0.0) {
            return Err(Error::Argument("learning rates must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Argument("clip norm must be positive".into()));
        }
        if !(self.final_lr_scale > 0.0 && self.final_lr_scale <= 1.0) {
            return Err(Error::Argument("final learning-rate scale must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Learning-rate multiplier for `epoch` (0-based).
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return 1.0;
        }
        let x = (epoch.min(self.epochs - 1)) as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_scale;
        f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
    }
}

/// Pooled per-dimension mean and population standard deviation over every sample.
pub fn compute_norm_stats(trials: &[Trial]) -> Result<NormStats> {
    let first = trials
        .iter()
        .flat_map(|t| t.samples.first())
        .next()
        .ok_or_else(|| Error::Argument("cannot compute statistics of an empty dataset".into()))?;
    let (ns, nu) = (first.s.len(), first.u.len());
    let mut n = 0usize;
    let mut sum = vec![0.0; ns + nu];
    for sample in trials.iter().flat_map(|t| &t.samples) {
        check_len("sample state dim", ns, sample.s.len())?;
        check_len("sample command dim", nu, sample.u.len())?;
        for (acc, v) in sum.iter_mut().zip(sample.s.iter().chain(&sample.u)) {
            *acc += v;
        }
        n += 1;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; ns + nu];
    for sample in trials.iter().flat_map(|t| &t.samples) {
        for ((acc, v), m) in sq.iter_mut().zip(sample.s.iter().chain(&sample.u)).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / n as f64).sqrt()).collect();
    NormStats::new(
        mean[..ns].to_vec(),
        std[..ns].to_vec(),
        mean[ns..].to_vec(),
        std[ns..].to_vec(),
    )
}

/// `−log N(target; mean, var) = ½ log(2π var) + (mean − target)² / (2 var)`.
pub fn nll_element(mean: f64, var: f64, target: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::Argument(format!("variance must be positive, got {var}")));
    }
    Ok(crate::nn::tape::nll_term(mean, var, target))
}

/// A trial converted to normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSequence {
    pub states: Vec<Vec<f64>>,
    pub commands: Vec<Vec<f64>>,
}

impl NormalizedSequence {
    pub fn from_trial(trial: &Trial, stats: &NormStats) -> Result<Self> {
        let mut states = Vec::with_capacity(trial.len());
        let mut commands = Vec::with_capacity(trial.len());
        for sample in &trial.samples {
            let (s, u) = stats.normalize(&sample.s, &sample.u)?;
            states.push(s);
            commands.push(u);
        }
        Ok(Self { states, commands })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Loss value and gradients with respect to the weights and the parametric bias.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub pb: Vec<f64>,
}

/// Records the teacher-forced NLL of `seq` on `tape`, starting from `start`.
/// Returns `None` when the sequence has no `(input, next state)` pair.
pub fn sequence_nll_taped<'a>(
    model: &'a ModelParams,
    tape: &mut Tape<'a>,
    start: &RecurrentState,
    p: Var,
    seq: &NormalizedSequence,
) -> Result<Option<Var>> {
    if seq.len() < 2 {
        return Ok(None);
    }
    let mut state = start.record(tape);
    let mut terms = Vec::with_capacity(seq.len() - 1);
    for t in 0..seq.len() - 1 {
        let s = tape.constant(seq.states[t].clone());
        let u = tape.constant(seq.commands[t].clone());
        let (pred, next) = model.forward_taped(tape, &state, s, u, p)?;
        terms.push(tape.gaussian_nll(pred.mean, pred.variance, &seq.states[t + 1])?);
        state = next;
    }
    let all = tape.concat(&terms);
    Ok(Some(tape.sum(all)))
}

pub fn sequence_nll(model: &ModelParams, start: &RecurrentState, p: &[f64], seq: &NormalizedSequence) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = tape.constant(p.to_vec());
    Ok(sequence_nll_taped(model, &mut tape, start, pv, seq)?.map_or(0.0, |v| tape.scalar(v)))
}

pub fn sequence_nll_grad(
    model: &ModelParams,
    start: &RecurrentState,
    p: &[f64],
    seq: &NormalizedSequence,
) -> Result<LossGradient> {
    let mut tape = Tape::new();
    let pv = tape.input(p.to_vec());
    let Some(loss) = sequence_nll_taped(model, &mut tape, start, pv, seq)? else {
        return Ok(LossGradient {
            loss: 0.0,
            weights: vec![0.0; model.weight_count()],
            pb: vec![0.0; p.len()],
        });
    };
    let grads = tape.backward(loss, &[1.0])?;
    Ok(LossGradient {
        loss: tape.scalar(loss),
        weights: model.flatten_gradients(&grads),
        pb: grads
            .input(pv)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; p.len()]),
    })
}

/// Teacher-forced NLL of one trial under parametric bias `p`, using the model's statistics.
pub fn trial_nll(model: &ModelParams, p: &[f64], trial: &Trial) -> Result<f64> {
    trial.validate()?;
    let seq = NormalizedSequence::from_trial(trial, model.norm())?;
    sequence_nll(model, &RecurrentState::zeros(), p, &seq)
}

pub fn trial_nll_grad(model: &ModelParams, p: &[f64], trial: &Trial) -> Result<LossGradient> {
    trial.validate()?;
    let seq = NormalizedSequence::from_trial(trial, model.norm())?;
    sequence_nll_grad(model, &RecurrentState::zeros(), p, &seq)
}

/// Per-trial losses, each evaluated under the PB row with the same position in the model's table.
pub fn per_trial_nll(model: &ModelParams, trials: &[Trial], exec: Execution) -> Result<Vec<f64>> {
    check_len("pb table rows", trials.len(), model.pb_table().len())?;
    let jobs: Vec<(&Trial, &PbEntry)> = trials.iter().zip(model.pb_table()).collect();
    exec.try_map(&jobs, |(trial, entry)| trial_nll(model, &entry.value, trial))
}

/// Total training loss: the sum of per-trial losses.
pub fn dataset_nll(model: &ModelParams, trials: &[Trial], exec: Execution) -> Result<f64> {
    Ok(per_trial_nll(model, trials, exec)?.iter().sum())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ModelParams,
    /// Sum of per-trial losses observed during each epoch (before each trial's step).
    pub epoch_losses: Vec<f64>,
}

pub fn train(trials: &[Trial], model_config: ModelConfig, config: &TrainConfig) -> Result<TrainReport> {
    train_with_progress(trials, model_config, config, |_, _| {})
}

/// Joint Adam training of the weights and one PB per trial, one step per trial per epoch.
pub fn train_with_progress(
    trials: &[Trial],
    model_config: ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(trials, model_config, config.clone())?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let total = trainer.run_epoch()?;
        epoch_losses.push(total);
        on_epoch(epoch, total);
    }
    Ok(TrainReport {
        model: trainer.into_model(),
        epoch_losses,
    })
}

/// Optimizer state for [`train`].
///
/// Every PB starts at zero and has its own Adam state, so a step on trial `k`
/// never moves `p_j` for `j ≠ k`.
pub struct Trainer {
    model: ModelParams,
    sequences: Vec<NormalizedSequence>,
    weights: Vec<f64>,
    weight_opt: AdamState,
    pb_opts: Vec<AdamState>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    config: TrainConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(trials: &[Trial], model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if trials.is_empty() {
            return Err(Error::Argument("no trials to train on".into()));
        }
        for trial in trials {
            trial.validate()?;
        }
        let stats = compute_norm_stats(trials)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = ModelParams::init(model_config, stats, &mut rng)?;
        model.set_pb_table(
            trials
                .iter()
                .map(|t| PbEntry {
                    trial_id: t.id,
                    label: t.label.clone(),
                    value: vec![0.0; model_config.pb_dim],
                })
                .collect(),
        )?;
        let sequences = trials
            .iter()
            .map(|t| NormalizedSequence::from_trial(t, model.norm()))
            .collect::<Result<Vec<_>>>()?;
        let weights = model.flat_weights();
        Ok(Self {
            weight_opt: AdamState::new(weights.len(), config.weight_lr),
            pb_opts: (0..trials.len())
                .map(|_| AdamState::new(model_config.pb_dim, config.pb_lr))
                .collect(),
            order: (0..trials.len()).collect(),
            model,
            sequences,
            weights,
            rng,
            config,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn into_model(self) -> ModelParams {
        self.model
    }

    /// One clipped Adam step on trial `k`; returns the trial's loss before the step.
    pub fn step_trial(&mut self, k: usize) -> Result<f64> {
        let pb = self.model.pb_table()[k].value.clone();
        let LossGradient {
            loss,
            weights: mut gw,
            pb: mut gp,
        } = sequence_nll_grad(&self.model, &RecurrentState::zeros(), &pb, &self.sequences[k])?;
        if !loss.is_finite() || gw.iter().chain(&gp).any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: self.epoch,
                loss,
            });
        }
        clip_joint(&mut gw, &mut gp, self.config.clip_norm);
        self.weight_opt.update(&mut self.weights, &gw)?;
        self.model.set_flat_weights(&self.weights)?;
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: self.epoch,
                loss: f64::NAN,
            });
        }
        self.pb_opts[k].update(&mut self.model.pb_table_mut()[k].value, &gp)?;
        Ok(loss)
    }

    /// Visits every trial once in shuffled order; returns the summed loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let scale = self.config.lr_scale(self.epoch);
        self.weight_opt.learning_rate = self.config.weight_lr * scale;
        for opt in &mut self.pb_opts {
            opt.learning_rate = self.config.pb_lr * scale;
        }
        let order = self.order.clone();
        let mut total = 0.0;
        for k in order {
            total += self.step_trial(k)?;
        }
        self.epoch += 1;
        Ok(total)
    }
}

fn clip_joint(a: &mut [f64], b: &mut [f64], max_norm: f64) {
    let norm = a.iter().chain(b.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        a.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= k);
    }
}
