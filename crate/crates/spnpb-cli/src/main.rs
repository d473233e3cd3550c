//! `spnpb`: data collection, training, PB analysis, adaptation and control runs.

mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use spnpb::adapt::AdaptConfig;
use spnpb::controller::{ControlConfig, VarianceMode};
use spnpb::dataset::{fmt_real, load_dataset, save_dataset};
use spnpb::evaluate::{evaluate_model, EvalConfig};
use spnpb::exec::Execution;
use spnpb::harness::{
    analyze_pb, estimate_trial, final_pb, nearest_entry, pb_for_label, run_adaptation_episode, run_control_batch,
    summarize, write_control_average, write_control_episode, write_control_summary, write_estimate,
    write_pb_trajectory, write_pca_points, write_pca_summary, AdaptEpisode, ControlTask, CsvTable,
};
use spnpb::persist::{load_model, save_model};
use spnpb::sim::{collect_trials, env_label, SimConfig};
use spnpb::trainer::{train_with_progress, TrainConfig};
use spnpb::{Error, ModelConfig};

#[derive(Parser)]
#[command(
    name = "spnpb",
    version,
    about = "Stochastic predictive network with parametric bias: simulation study runner"
)]
struct Cli {
    /// Flat `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the simulator over the (α, β) grid with random-walk commands.
    Collect {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        trials_per_config: Option<usize>,
    },
    /// Fit weights and per-trial PBs to a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// PCA of the trained PB table.
    AnalyzePb {
        #[arg(long)]
        model: PathBuf,
    },
    /// Online PB adaptation from p = 0 under random driving.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        ticks: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// One-step predictions and σ under random driving with a fixed trained PB.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        ticks: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Backward-to-forward task with the variance-aware controller.
    Control {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        c_variance: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        ticks: Option<usize>,
        /// Adapt the PB online during each episode.
        #[arg(long)]
        live_adapt: bool,
    },
    /// Check a trained model against the simulation study; exit code 4 on failure.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
    },
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::TrainingDiverged { .. }) => EXIT_DIVERGED,
        Some(Error::Controller(_)) => 1,
        _ => EXIT_VALIDATION,
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    exec: Execution,
}

impl Ctx {
    fn file(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.out.join(name);
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!(Error::Argument(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => {
            require(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    let seed = cfg.pick(cli.seed, "seed", 0)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating output dir {}", cli.out.display()))?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let ctx = Ctx {
        cfg,
        seed,
        out: cli.out,
        exec,
    };
    match cli.command {
        Command::Collect {
            steps,
            trials_per_config,
        } => collect(&ctx, steps, trials_per_config),
        Command::Train { data, epochs } => train(&ctx, &data, epochs),
        Command::AnalyzePb { model } => analyze(&ctx, &model),
        Command::Adapt {
            model,
            alpha,
            beta,
            ticks,
            episodes,
        } => adapt(&ctx, &model, alpha, beta, ticks, episodes),
        Command::Estimate {
            model,
            alpha,
            beta,
            ticks,
            episodes,
        } => estimate(&ctx, &model, alpha, beta, ticks, episodes),
        Command::Control {
            model,
            c_variance,
            episodes,
            ticks,
            live_adapt,
        } => control(&ctx, &model, c_variance, episodes, ticks, live_adapt),
        Command::Evaluate { model } => evaluate(&ctx, &model),
    }
}

fn collect(ctx: &Ctx, steps: Option<usize>, per_config: Option<usize>) -> Result<ExitCode> {
    let steps = ctx.cfg.pick(steps, "collect.steps", 200)?;
    let per_config = ctx.cfg.pick(per_config, "collect.trials_per_config", 3)?;
    let alphas = ctx.cfg.list("collect.alphas")?.unwrap_or_else(|| vec![0.4, 0.5, 0.6]);
    let betas = ctx.cfg.list("collect.betas")?.unwrap_or_else(|| vec![0.1, 1.0]);
    let mut grid = Vec::new();
    for &alpha in &alphas {
        for &beta in &betas {
            grid.push(SimConfig::new(alpha, beta, ctx.seed)?);
        }
    }
    let trials = collect_trials(&grid, steps, per_config, ctx.exec)?;
    let path = ctx.out.join("dataset.csv");
    save_dataset(&trials, &path)?;
    println!(
        "wrote {} trials ({} samples each) to {}",
        trials.len(),
        steps,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_config(ctx: &Ctx, epochs: Option<usize>) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        epochs: ctx.cfg.pick(epochs, "train.epochs", d.epochs)?,
        weight_lr: ctx.cfg.pick(None, "train.weight_lr", d.weight_lr)?,
        pb_lr: ctx.cfg.pick(None, "train.pb_lr", d.pb_lr)?,
        clip_norm: ctx.cfg.pick(None, "train.clip_norm", d.clip_norm)?,
        final_lr_scale: ctx.cfg.pick(None, "train.final_lr_scale", d.final_lr_scale)?,
        seed: ctx.seed,
    })
}

fn train(ctx: &Ctx, data: &Path, epochs: Option<usize>) -> Result<ExitCode> {
    require(data, "dataset")?;
    let config = train_config(ctx, epochs)?;
    let trials = load_dataset(data)?;
    let total = config.epochs;
    let report = train_with_progress(&trials, ModelConfig::default(), &config, |epoch, loss| {
        if epoch % 50 == 0 || epoch + 1 == total {
            eprintln!("epoch {epoch:>5}  loss {loss:.4}");
        }
    })?;
    save_model(&report.model, &ctx.out.join("model.json"))?;
    let mut table = CsvTable::new(
        ctx.file("train_loss.csv")?,
        "train-loss",
        &["epoch".into(), "loss".into()],
    )?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        table.row(&[e.to_string(), fmt_real(*l)])?;
    }
    table.finish()?;
    println!(
        "trained {} trials for {} epochs; final loss {:.4}; model at {}",
        trials.len(),
        total,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        ctx.out.join("model.json").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn analyze(ctx: &Ctx, model: &Path) -> Result<ExitCode> {
    require(model, "model")?;
    let model = load_model(model)?;
    let a = analyze_pb(&model)?;
    write_pca_points(&a, ctx.file("pb_pca_points.csv")?)?;
    write_pca_summary(&a, ctx.file("pb_pca_components.csv")?)?;
    println!("explained variance: {:?}", a.pca.explained);
    println!(
        "mean PB distance: intra-config {:.4}, inter-config {:.4}",
        a.distances.intra, a.distances.inter
    );
    println!("beta levels linearly separable: {}", a.beta_separable);
    println!("alpha ordered within beta levels: {}", a.alpha_ordered);
    Ok(ExitCode::SUCCESS)
}

fn adapt_config(ctx: &Ctx) -> Result<AdaptConfig> {
    let d = AdaptConfig::default();
    Ok(AdaptConfig {
        threshold: ctx.cfg.pick(None, "adapt.threshold", d.threshold)?,
        capacity: ctx.cfg.pick(None, "adapt.capacity", d.capacity)?,
        learning_rate: ctx.cfg.pick(None, "adapt.learning_rate", d.learning_rate)?,
        momentum: ctx.cfg.pick(None, "adapt.momentum", d.momentum)?,
    })
}

fn adapt(
    ctx: &Ctx,
    model: &Path,
    alpha: Option<f64>,
    beta: Option<f64>,
    ticks: Option<usize>,
    episodes: Option<usize>,
) -> Result<ExitCode> {
    require(model, "model")?;
    let model = load_model(model)?;
    let config = adapt_config(ctx)?;
    config.validate()?;
    let sim = SimConfig::new(
        ctx.cfg.pick(alpha, "adapt.alpha", 0.4)?,
        ctx.cfg.pick(beta, "adapt.beta", 0.1)?,
        ctx.seed,
    )?;
    let ticks = ctx.cfg.pick(ticks, "adapt.ticks", 200)?;
    let episodes = ctx.cfg.pick(episodes, "adapt.episodes", 1usize)?;
    let switch = match ctx.cfg.get::<usize>("adapt.switch_tick")? {
        Some(at) => {
            let a = ctx.cfg.get("adapt.switch_alpha")?;
            let b = ctx.cfg.get("adapt.switch_beta")?;
            match (a, b) {
                (Some(a), Some(b)) => Some((at, a, b)),
                _ => bail!(Error::Argument(
                    "adapt.switch_tick needs adapt.switch_alpha and adapt.switch_beta".into()
                )),
            }
        }
        None => None,
    };
    let streams: Vec<u64> = (0..episodes as u64).collect();
    let runs = ctx.exec.try_map(&streams, |&stream| {
        run_adaptation_episode(
            &model,
            &AdaptEpisode {
                sim,
                stream,
                ticks,
                switch,
            },
            &config,
        )
    })?;
    for (k, records) in runs.iter().enumerate() {
        write_pb_trajectory(records, ctx.file(&format!("pb_trajectory_{k}.csv"))?)?;
        let p = final_pb(records, model.config().pb_dim);
        let near = nearest_entry(model.pb_table(), &p).map_or("-", |e| e.label.as_str());
        println!("episode {k}: final p {p:?}, nearest trained PB {near}");
    }
    Ok(ExitCode::SUCCESS)
}

fn estimate(
    ctx: &Ctx,
    model: &Path,
    alpha: Option<f64>,
    beta: Option<f64>,
    ticks: Option<usize>,
    episodes: Option<usize>,
) -> Result<ExitCode> {
    require(model, "model")?;
    let model = load_model(model)?;
    let sim = SimConfig::new(
        ctx.cfg.pick(alpha, "estimate.alpha", 0.4)?,
        ctx.cfg.pick(beta, "estimate.beta", 1.0)?,
        ctx.seed,
    )?;
    let label = ctx.cfg.pick(None, "estimate.pb_label", sim.label())?;
    let pb = pb_for_label(&model, &label)?;
    let ticks = ctx.cfg.pick(ticks, "estimate.ticks", 100usize)?;
    let episodes = ctx.cfg.pick(episodes, "estimate.episodes", 1usize)?;
    let trials = collect_trials(&[sim], ticks, episodes, ctx.exec)?;
    for (k, trial) in trials.iter().enumerate() {
        let records = estimate_trial(&model, &pb, trial)?;
        write_estimate(&records, ctx.file(&format!("estimate_{k}.csv"))?)?;
        let mean = records.iter().map(|r| r.sigma[0]).sum::<f64>() / records.len() as f64;
        println!("episode {k}: env {}, PB {label}, mean σ_trans {mean:.4}", sim.label());
    }
    Ok(ExitCode::SUCCESS)
}

fn control_config(ctx: &Ctx, c_variance: Option<f64>) -> Result<ControlConfig> {
    let d = ControlConfig::default();
    let limit = ctx.cfg.pick(None, "control.command_limit", d.command_max[0])?;
    let mode: VarianceMode = ctx.cfg.get("control.variance_mode")?.unwrap_or_default();
    let config = ControlConfig {
        horizon: ctx.cfg.pick(None, "control.horizon", d.horizon)?,
        batch: ctx.cfg.pick(None, "control.batch", d.batch)?,
        epochs: ctx.cfg.pick(None, "control.epochs", d.epochs)?,
        gamma_max: ctx.cfg.pick(None, "control.gamma_max", d.gamma_max)?,
        c_variance: ctx.cfg.pick(c_variance, "control.c_variance", d.c_variance)?,
        c_orig: ctx.cfg.pick(None, "control.c_orig", d.c_orig)?,
        variance_mode: mode,
        command_min: vec![-limit; 2],
        command_max: vec![limit; 2],
    };
    config.validate()?;
    Ok(config)
}

fn control(
    ctx: &Ctx,
    model: &Path,
    c_variance: Option<f64>,
    episodes: Option<usize>,
    ticks: Option<usize>,
    live_adapt: bool,
) -> Result<ExitCode> {
    require(model, "model")?;
    let model = load_model(model)?;
    let config = control_config(ctx, c_variance)?;
    let live = live_adapt || ctx.cfg.get("control.live_adapt")?.unwrap_or(false);
    let sim = SimConfig::new(
        ctx.cfg.pick(None, "control.alpha", 0.5)?,
        ctx.cfg.pick(None, "control.beta", 1.0)?,
        ctx.seed,
    )?;
    let label = ctx.cfg.pick(None, "control.pb_label", env_label(sim.alpha, sim.beta))?;
    let pb = if label == "zero" {
        vec![0.0; model.config().pb_dim]
    } else {
        pb_for_label(&model, &label)?
    };
    let task = ControlTask {
        ticks: ctx.cfg.pick(ticks, "control.ticks", 40)?,
        ramp_ticks: ctx.cfg.pick(None, "control.ramp_ticks", 10)?,
        adapt: if live { Some(adapt_config(ctx)?) } else { None },
        ..ControlTask::default()
    };
    let window = ctx.cfg.pick(None, "control.window", 20usize)?;
    let episodes = ctx.cfg.pick(episodes, "control.episodes", 10usize)?;
    let streams: Vec<u64> = (0..episodes as u64).collect();
    let runs = run_control_batch(&model, &pb, sim, &streams, &task, &config, ctx.exec)?;
    let condition = format!("c_variance={:?}", config.c_variance);
    let mut rows = Vec::new();
    for (k, records) in runs.iter().enumerate() {
        write_control_episode(records, ctx.file(&format!("control_episode_{k}.csv"))?)?;
        rows.push((condition.clone(), streams[k], summarize(records, window)));
    }
    if !runs.is_empty() {
        write_control_average(&runs, ctx.file("control_average.csv")?)?;
    }
    write_control_summary(&rows, ctx.file("control_summary.csv")?)?;
    let n = rows.len().max(1) as f64;
    println!(
        "{condition}: mean σ_trans first {window} ticks {:.4}, whole episode {:.4}, RMSE {:.4}",
        rows.iter().map(|r| r.2.sigma_window).sum::<f64>() / n,
        rows.iter().map(|r| r.2.sigma_episode).sum::<f64>() / n,
        rows.iter().map(|r| r.2.rmse).sum::<f64>() / n,
    );
    Ok(ExitCode::SUCCESS)
}

fn evaluate(ctx: &Ctx, model: &Path) -> Result<ExitCode> {
    require(model, "model")?;
    let model = load_model(model)?;
    let d = EvalConfig::default();
    let eval = EvalConfig {
        seed: ctx.cfg.pick(None, "evaluate.seed", d.seed)?,
        adapt: adapt_config(ctx)?,
        control: control_config(ctx, None)?,
        ..d
    };
    let results = evaluate_model(&model, &eval, ctx.exec)?;
    let mut table = CsvTable::new(
        ctx.file("evaluation.csv")?,
        "evaluation",
        &["criterion".into(), "name".into(), "passed".into(), "detail".into()],
    )?;
    for r in &results {
        println!("{r}");
        table.row(&[
            r.criterion.to_string(),
            r.name.to_string(),
            r.passed.to_string(),
            r.detail.clone(),
        ])?;
    }
    table.finish()?;
    if results.iter().all(|r| r.passed) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}
