//! End-to-end experiments: PB-space analysis, adaptation runs and controlled
//! episodes, plus the CSV tables they emit.
//!
//! Every table starts with a `# <schema> v<version>` comment line followed by
//! a header row. Reals use 17 significant digits.

use std::io::Write;

use crate::adapt::{AdaptConfig, OnlineAdapter};
use crate::controller::{ControlConfig, Controller};
use crate::dataset::{fmt_real, TimedSample, Trial};
use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::model::{ModelParams, PbEntry, RecurrentState};
use crate::pca::{pca_project, PcaResult};
use crate::sim::{SimConfig, SimState, Simulator, TICK_PERIOD};

pub const CSV_VERSION: u32 = 1;

/// A CSV writer that checks every row against its declared columns.
pub struct CsvTable<W: Write> {
    out: csv::Writer<W>,
    width: usize,
}

impl<W: Write> CsvTable<W> {
    pub fn new(mut writer: W, schema: &str, columns: &[String]) -> Result<Self> {
        writeln!(writer, "# {schema} v{CSV_VERSION}")?;
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(columns)?;
        Ok(Self {
            out,
            width: columns.len(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        check_len("csv row", self.width, fields.len())?;
        self.out.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean PB per label, in order of first appearance.
pub fn label_centroids(table: &[PbEntry]) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for e in table {
        match out.iter_mut().find(|(l, _, _)| *l == e.label) {
            Some((_, sum, n)) => {
                sum.iter_mut().zip(&e.value).for_each(|(s, v)| *s += v);
                *n += 1;
            }
            None => out.push((e.label.clone(), e.value.clone(), 1)),
        }
    }
    out.into_iter()
        .map(|(l, sum, n)| (l, sum.into_iter().map(|s| s / n as f64).collect()))
        .collect()
}

/// Centroid of the PBs trained under `label`.
pub fn pb_for_label(model: &ModelParams, label: &str) -> Result<Vec<f64>> {
    label_centroids(model.pb_table())
        .into_iter()
        .find(|(l, _)| l == label)
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Argument(format!("no trained PB with label {label:?}")))
}

/// The trained PB entry closest to `p`.
pub fn nearest_entry<'a>(table: &'a [PbEntry], p: &[f64]) -> Option<&'a PbEntry> {
    table
        .iter()
        .min_by(|a, b| dist(&a.value, p).total_cmp(&dist(&b.value, p)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbDistances {
    /// Mean pairwise distance between PBs that share a label.
    pub intra: f64,
    /// Mean pairwise distance between PBs with different labels.
    pub inter: f64,
}

pub fn pb_distances(table: &[PbEntry]) -> Result<PbDistances> {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for (i, a) in table.iter().enumerate() {
        for b in &table[i + 1..] {
            let d = dist(&a.value, &b.value);
            if a.label == b.label {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                nx += 1;
            }
        }
    }
    if ni == 0 || nx == 0 {
        return Err(Error::Argument("need repeated labels and at least two labels".into()));
    }
    Ok(PbDistances {
        intra: intra / ni as f64,
        inter: inter / nx as f64,
    })
}

/// Whether some line strictly separates two planar point sets.
///
/// Exact: the set of separating directions is bounded by normals of the
/// differences `a_i − b_j`, so one direction from each arc between those
/// critical angles is tested.
pub fn linearly_separable(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    if a.is_empty() || b.is_empty() {
        return true;
    }
    let mut angles = Vec::new();
    for p in a {
        for q in b {
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            if dx == 0.0 && dy == 0.0 {
                return false;
            }
            let t = dy.atan2(dx);
            angles.push(t + std::f64::consts::FRAC_PI_2);
            angles.push(t - std::f64::consts::FRAC_PI_2);
        }
    }
    let tau = std::f64::consts::TAU;
    let mut angles: Vec<f64> = angles.into_iter().map(|t| t.rem_euclid(tau)).collect();
    angles.sort_by(f64::total_cmp);
    let n = angles.len();
    (0..n).any(|i| {
        let next = if i + 1 < n { angles[i + 1] } else { angles[0] + tau };
        let mid = 0.5 * (angles[i] + next);
        let w = [mid.cos(), mid.sin()];
        let proj = |p: &[f64; 2]| w[0] * p[0] + w[1] * p[1];
        let amax = a.iter().map(proj).fold(f64::NEG_INFINITY, f64::max);
        let bmin = b.iter().map(proj).fold(f64::INFINITY, f64::min);
        amax < bmin
    })
}

/// Parses the `alpha=..,beta=..` environment label.
pub fn parse_env_label(label: &str) -> Option<(f64, f64)> {
    let mut alpha = None;
    let mut beta = None;
    for part in label.split(',') {
        let (k, v) = part.split_once('=')?;
        match k.trim() {
            "alpha" => alpha = v.trim().parse().ok(),
            "beta" => beta = v.trim().parse().ok(),
            _ => return None,
        }
    }
    Some((alpha?, beta?))
}

/// PCA of the trained PB table together with the β-separability verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct PbAnalysis {
    pub pca: PcaResult,
    pub entries: Vec<PbEntry>,
    pub distances: PbDistances,
    /// The two β levels can be split by a line in the PCA plane.
    pub beta_separable: bool,
    /// Within every β level, α-centroids are ordered monotonically along PC1 or PC2.
    pub alpha_ordered: bool,
}

pub fn analyze_pb(model: &ModelParams) -> Result<PbAnalysis> {
    let entries = model.pb_table().to_vec();
    let pca = pca_project(&entries.iter().map(|e| e.value.clone()).collect::<Vec<_>>())?;
    let distances = pb_distances(&entries)?;
    let envs = entries
        .iter()
        .map(|e| parse_env_label(&e.label).ok_or_else(|| Error::Format(format!("unparseable label {:?}", e.label))))
        .collect::<Result<Vec<_>>>()?;
    let plane: Vec<[f64; 2]> = pca
        .projections
        .iter()
        .map(|p| [p[0], p.get(1).copied().unwrap_or(0.0)])
        .collect();

    let mut betas: Vec<f64> = envs.iter().map(|e| e.1).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let beta_separable = betas.len() == 2 && {
        let a: Vec<[f64; 2]> = plane
            .iter()
            .zip(&envs)
            .filter(|(_, e)| e.1 == betas[0])
            .map(|(p, _)| *p)
            .collect();
        let b: Vec<[f64; 2]> = plane
            .iter()
            .zip(&envs)
            .filter(|(_, e)| e.1 == betas[1])
            .map(|(p, _)| *p)
            .collect();
        linearly_separable(&a, &b)
    };

    let alpha_ordered = betas.iter().all(|&beta| {
        let mut alphas: Vec<f64> = envs.iter().filter(|e| e.1 == beta).map(|e| e.0).collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        let centroid = |alpha: f64, axis: usize| {
            let v: Vec<f64> = plane
                .iter()
                .zip(&envs)
                .filter(|(_, e)| **e == (alpha, beta))
                .map(|(p, _)| p[axis])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        (0..2).any(|axis| {
            let c: Vec<f64> = alphas.iter().map(|&a| centroid(a, axis)).collect();
            c.windows(2).all(|w| w[0] < w[1]) || c.windows(2).all(|w| w[0] > w[1])
        })
    });

    Ok(PbAnalysis {
        pca,
        entries,
        distances,
        beta_separable,
        alpha_ordered,
    })
}

pub fn write_pca_points<W: Write>(analysis: &PbAnalysis, writer: W) -> Result<()> {
    let dim = analysis.entries.first().map_or(0, |e| e.value.len());
    let mut names = cols(&["trial_id", "label", "alpha", "beta", "pc1", "pc2"]);
    names.extend((0..dim).map(|i| format!("p{i}")));
    let mut t = CsvTable::new(writer, "pb-pca-points", &names)?;
    for (e, proj) in analysis.entries.iter().zip(&analysis.pca.projections) {
        let (alpha, beta) = parse_env_label(&e.label).unwrap_or((f64::NAN, f64::NAN));
        let mut row = vec![e.trial_id.to_string(), e.label.clone(), fmt_real(alpha), fmt_real(beta)];
        row.push(fmt_real(proj[0]));
        row.push(fmt_real(proj.get(1).copied().unwrap_or(0.0)));
        row.extend(e.value.iter().map(|&v| fmt_real(v)));
        t.row(&row)?;
    }
    t.finish()
}

pub fn write_pca_summary<W: Write>(analysis: &PbAnalysis, writer: W) -> Result<()> {
    let dim = analysis.pca.mean.len();
    let mut names = cols(&["component", "explained"]);
    names.extend((0..dim).map(|i| format!("axis{i}")));
    let mut t = CsvTable::new(writer, "pb-pca-components", &names)?;
    for (k, (c, e)) in analysis.pca.components.iter().zip(&analysis.pca.explained).enumerate() {
        let mut row = vec![format!("pc{}", k + 1), fmt_real(*e)];
        row.extend(c.iter().map(|&v| fmt_real(v)));
        t.row(&row)?;
    }
    t.finish()
}

/// Predicted translational σ split by measured speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaProfile {
    pub low_speed: f64,
    pub high_speed: f64,
    pub overall: f64,
    pub n_low: usize,
    pub n_high: usize,
}

pub const LOW_SPEED: f64 = 0.3;
pub const HIGH_SPEED: f64 = 2.0;

/// Teacher-forced one-step σ_trans over `trials` with PB `pb`, binned by `|w_t| + |w_r|`.
pub fn sigma_profile(model: &ModelParams, pb: &[f64], trials: &[Trial]) -> Result<SigmaProfile> {
    let norm = model.norm();
    let (mut lo, mut nlo, mut hi, mut nhi, mut all, mut n) = (0.0, 0, 0.0, 0, 0.0, 0);
    for trial in trials {
        let mut state = RecurrentState::zeros();
        for sample in &trial.samples {
            let (s, u) = norm.normalize(&sample.s, &sample.u)?;
            let (pred, next) = model.forward(&state, &s, &u, pb)?;
            state = next;
            let sigma = norm.state_sigma(&pred.variance)?[0];
            let speed: f64 = sample.s.iter().map(|v| v.abs()).sum();
            if speed < LOW_SPEED {
                lo += sigma;
                nlo += 1;
            } else if speed > HIGH_SPEED {
                hi += sigma;
                nhi += 1;
            }
            all += sigma;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Argument("no samples to profile".into()));
    }
    let mean = |s: f64, k: usize| if k > 0 { s / k as f64 } else { f64::NAN };
    Ok(SigmaProfile {
        low_speed: mean(lo, nlo),
        high_speed: mean(hi, nhi),
        overall: mean(all, n),
        n_low: nlo,
        n_high: nhi,
    })
}

/// One-step prediction made at `tick` for the state at `tick + 1`, in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub tick: u64,
    pub command: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Teacher-forced predictions along `trial` under a fixed PB.
pub fn estimate_trial(model: &ModelParams, pb: &[f64], trial: &Trial) -> Result<Vec<EstimateRecord>> {
    trial.validate()?;
    let norm = model.norm();
    let mut state = RecurrentState::zeros();
    let mut out = Vec::with_capacity(trial.len());
    for sample in &trial.samples {
        let (s, u) = norm.normalize(&sample.s, &sample.u)?;
        let (pred, next) = model.forward(&state, &s, &u, pb)?;
        state = next;
        out.push(EstimateRecord {
            tick: sample.tick,
            command: sample.u.clone(),
            measured: sample.s.clone(),
            predicted: norm.denormalize_state(&pred.mean)?,
            sigma: norm.state_sigma(&pred.variance)?,
        });
    }
    Ok(out)
}

pub fn write_estimate<W: Write>(records: &[EstimateRecord], writer: W) -> Result<()> {
    let names = cols(&[
        "tick",
        "time",
        "w_ref_trans",
        "w_ref_rot",
        "w_trans",
        "w_rot",
        "w_pred_next_trans",
        "w_pred_next_rot",
        "sigma_next_trans",
        "sigma_next_rot",
    ]);
    let mut t = CsvTable::new(writer, "estimate", &names)?;
    for r in records {
        let mut row = vec![r.tick.to_string(), fmt_real(r.tick as f64 * TICK_PERIOD)];
        for v in r.command.iter().chain(&r.measured).chain(&r.predicted).chain(&r.sigma) {
            row.push(fmt_real(*v));
        }
        t.row(&row)?;
    }
    t.finish()
}

/// Random-walk driving with online PB adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptEpisode {
    pub sim: SimConfig,
    /// ChaCha stream for this episode.
    pub stream: u64,
    pub ticks: usize,
    /// `(tick, alpha, beta)`: switch the plant's environment before that tick.
    pub switch: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptRecord {
    pub tick: u64,
    pub env: String,
    /// Live PB after this tick's update.
    pub pb: Vec<f64>,
    /// Buffer NLL before the update, if one was made.
    pub loss: Option<f64>,
}

pub fn run_adaptation_episode(
    model: &ModelParams,
    episode: &AdaptEpisode,
    config: &AdaptConfig,
) -> Result<Vec<AdaptRecord>> {
    let mut sim = Simulator::with_stream(episode.sim, episode.stream)?;
    let mut adapter = OnlineAdapter::new(model, config)?;
    let mut cmd = [0.0; 2];
    let mut out = Vec::with_capacity(episode.ticks);
    for tick in 0..episode.ticks {
        if let Some((at, alpha, beta)) = episode.switch {
            if tick == at {
                sim.set_environment(alpha, beta)?;
            }
        }
        cmd = sim.random_command(cmd);
        let s = sim.state();
        let loss = adapter.observe(model, TimedSample::new(s.to_vec(), cmd.to_vec(), tick as u64)?)?;
        out.push(AdaptRecord {
            tick: tick as u64,
            env: sim.config().label(),
            pb: adapter.pb().to_vec(),
            loss,
        });
        sim.step(cmd);
    }
    Ok(out)
}

/// Final live PB of an episode (zero if it had no ticks).
pub fn final_pb(records: &[AdaptRecord], pb_dim: usize) -> Vec<f64> {
    records.last().map_or_else(|| vec![0.0; pb_dim], |r| r.pb.clone())
}

pub fn write_pb_trajectory<W: Write>(records: &[AdaptRecord], writer: W) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.pb.len());
    let mut names = cols(&["tick", "env"]);
    names.extend((0..dim).map(|i| format!("p{i}")));
    names.push("buffer_nll".into());
    let mut t = CsvTable::new(writer, "pb-trajectory", &names)?;
    for r in records {
        let mut row = vec![r.tick.to_string(), r.env.clone()];
        row.extend(r.pb.iter().map(|&v| fmt_real(v)));
        row.push(r.loss.map_or_else(String::new, fmt_real));
        t.row(&row)?;
    }
    t.finish()
}

/// Backward-to-forward task: start at `start`, ramp the target from zero to
/// `target` over `ramp_ticks`, then hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTask {
    pub start: [f64; 2],
    pub target: [f64; 2],
    pub ramp_ticks: usize,
    pub ticks: usize,
    /// Adapt the PB online during the episode, starting from the given PB.
    /// Tick `t` plans with the PB learned from samples through tick `t − 1`.
    pub adapt: Option<AdaptConfig>,
}

impl Default for ControlTask {
    fn default() -> Self {
        Self {
            start: [-1.0, 0.0],
            target: [3.0, 0.0],
            ramp_ticks: 10,
            ticks: 40,
            adapt: None,
        }
    }
}

impl ControlTask {
    /// Original target at `tick`.
    pub fn reference(&self, tick: usize) -> Vec<f64> {
        let k = if self.ramp_ticks == 0 {
            1.0
        } else {
            (tick as f64 / self.ramp_ticks as f64).min(1.0)
        };
        self.target.iter().map(|t| t * k).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ticks == 0 {
            return Err(Error::Argument("control episode needs at least one tick".into()));
        }
        if self.start.iter().chain(&self.target).any(|v| !v.is_finite()) {
            return Err(Error::Argument("task start and target must be finite".into()));
        }
        if let Some(a) = &self.adapt {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRecord {
    pub tick: u64,
    pub reference: Vec<f64>,
    pub command: Vec<f64>,
    pub measured: Vec<f64>,
    pub sigma: Vec<f64>,
    pub loss: f64,
    pub start_loss: f64,
    pub fault: bool,
    /// PB the controller planned with.
    pub pb: Vec<f64>,
}

/// One closed-loop episode; the PB stays at `pb` unless the task adapts it.
pub fn run_control_episode(
    model: &ModelParams,
    pb: &[f64],
    sim: SimConfig,
    stream: u64,
    task: &ControlTask,
    config: &ControlConfig,
    exec: Execution,
) -> Result<Vec<ControlRecord>> {
    task.validate()?;
    let mut plant = Simulator::with_stream(sim, stream)?;
    plant.reset(SimState::new(task.start[0], task.start[1]));
    let mut controller = Controller::new(model, pb.to_vec(), config.clone(), exec)?;
    let mut adapter = match &task.adapt {
        Some(a) => Some(OnlineAdapter::with_initial_pb(model, a, pb.to_vec())?),
        None => None,
    };
    let n = config.horizon;
    let mut out: Vec<ControlRecord> = Vec::with_capacity(task.ticks);
    for tick in 0..task.ticks {
        if let (Some(adapter), Some(last)) = (adapter.as_mut(), out.last()) {
            adapter.observe(
                model,
                TimedSample::new(last.measured.clone(), last.command.clone(), last.tick)?,
            )?;
            controller.set_pb(adapter.pb().to_vec())?;
        }
        let s = plant.state().to_vec();
        let s_ref: Vec<Vec<f64>> = (1..=n).map(|k| task.reference(tick + k)).collect();
        let u_orig: Vec<Vec<f64>> = (0..n).map(|k| task.reference(tick + k)).collect();
        let step = controller.step(&s, &s_ref, &u_orig);
        out.push(ControlRecord {
            tick: tick as u64,
            reference: task.reference(tick),
            command: step.command.clone(),
            measured: s,
            sigma: step.sigma,
            loss: step.loss,
            start_loss: step.start_loss,
            fault: step.fault.is_some(),
            pb: controller.pb().to_vec(),
        });
        plant.step([step.command[0], step.command[1]]);
    }
    Ok(out)
}

/// Episodes on streams `streams`, run concurrently under `exec`; each episode is sequential.
pub fn run_control_batch(
    model: &ModelParams,
    pb: &[f64],
    sim: SimConfig,
    streams: &[u64],
    task: &ControlTask,
    config: &ControlConfig,
    exec: Execution,
) -> Result<Vec<Vec<ControlRecord>>> {
    exec.try_map(streams, |&stream| {
        run_control_episode(model, pb, sim, stream, task, config, Execution::Sequential)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSummary {
    /// Mean predicted σ_trans over the first `window` ticks.
    pub sigma_window: f64,
    /// Mean predicted σ_trans over the whole episode.
    pub sigma_episode: f64,
    /// RMS of `w_trans − w_ref_orig_trans` over the episode.
    pub rmse: f64,
    pub faults: usize,
}

pub fn summarize(records: &[ControlRecord], window: usize) -> ControlSummary {
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    };
    ControlSummary {
        sigma_window: mean(&mut records.iter().take(window).map(|r| r.sigma[0])),
        sigma_episode: mean(&mut records.iter().map(|r| r.sigma[0])),
        rmse: mean(&mut records.iter().map(|r| (r.measured[0] - r.reference[0]).powi(2))).sqrt(),
        faults: records.iter().filter(|r| r.fault).count(),
    }
}

pub fn write_control_episode<W: Write>(records: &[ControlRecord], writer: W) -> Result<()> {
    let mut names = cols(&[
        "tick",
        "time",
        "w_ref_orig_trans",
        "w_ref_orig_rot",
        "w_ref_trans",
        "w_ref_rot",
        "w_trans",
        "w_rot",
        "sigma_trans",
        "sigma_rot",
        "loss",
        "warm_start_loss",
        "fault",
    ]);
    let pb_dim = records.first().map_or(0, |r| r.pb.len());
    names.extend((0..pb_dim).map(|i| format!("p{i}")));
    let mut t = CsvTable::new(writer, "control-episode", &names)?;
    for r in records {
        let mut row = vec![r.tick.to_string(), fmt_real(r.tick as f64 * TICK_PERIOD)];
        for v in r.reference.iter().chain(&r.command).chain(&r.measured).chain(&r.sigma) {
            row.push(fmt_real(*v));
        }
        row.push(fmt_real(r.loss));
        row.push(fmt_real(r.start_loss));
        row.push(u8::from(r.fault).to_string());
        row.extend(r.pb.iter().map(|v| fmt_real(*v)));
        t.row(&row)?;
    }
    t.finish()
}

/// `w_trans` of every episode side by side plus their mean, one row per tick.
pub fn write_control_average<W: Write>(episodes: &[Vec<ControlRecord>], writer: W) -> Result<()> {
    let ticks = episodes.iter().map(Vec::len).min().unwrap_or(0);
    let mut names = cols(&["tick", "time", "w_ref_orig_trans"]);
    names.extend((0..episodes.len()).map(|k| format!("w_trans_{k}")));
    names.extend(cols(&["w_trans_mean", "sigma_trans_mean"]));
    let mut t = CsvTable::new(writer, "control-average", &names)?;
    for i in 0..ticks {
        let first = &episodes[0][i];
        let mut row = vec![
            first.tick.to_string(),
            fmt_real(first.tick as f64 * TICK_PERIOD),
            fmt_real(first.reference[0]),
        ];
        let w: Vec<f64> = episodes.iter().map(|e| e[i].measured[0]).collect();
        row.extend(w.iter().map(|&v| fmt_real(v)));
        let n = episodes.len() as f64;
        row.push(fmt_real(w.iter().sum::<f64>() / n));
        row.push(fmt_real(episodes.iter().map(|e| e[i].sigma[0]).sum::<f64>() / n));
        t.row(&row)?;
    }
    t.finish()
}

pub fn write_control_summary<W: Write>(rows: &[(String, u64, ControlSummary)], writer: W) -> Result<()> {
    let names = cols(&[
        "condition",
        "stream",
        "sigma_trans_window",
        "sigma_trans_episode",
        "rmse_trans",
        "faults",
    ]);
    let mut t = CsvTable::new(writer, "control-summary", &names)?;
    for (cond, stream, s) in rows {
        t.row(&[
            cond.clone(),
            stream.to_string(),
            fmt_real(s.sigma_window),
            fmt_real(s.sigma_episode),
            fmt_real(s.rmse),
            s.faults.to_string(),
        ])?;
    }
    t.finish()
}
