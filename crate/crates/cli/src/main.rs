//! `vlcuav`: synthetic data, forecaster training and inference, fleet
//! planning, and experiment sweeps.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vlcuav::harness::{
    draw_users, Stage, fit_forecaster, plan_variant, read_metrics, report, sweep, training_set, ErrorClass, ExperimentConfig,
    HarnessError, SweepVar, Variant,
};
use vlcuav::illum::{load_grid_sequence, save_grid_sequence, synth_sequence, GridSequence};
use vlcuav::optimizer::{OptimizerError, Scenario};
use vlcuav::predictor::{load_checkpoint, predict_next, save_checkpoint, PredictorError};
use vlcuav::User;

#[derive(Debug, Parser)]
#[command(name = "vlcuav", version, about = "Illumination forecasting and VLC UAV deployment")]
struct Cli {
    /// Experiment configuration file (key = value lines).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Print the complete configuration with current values and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic grid sequence.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Generator seed; defaults to the master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the forecaster and write a checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Training sequences; synthetic ones from the configuration if absent.
        #[arg(long)]
        data: Vec<PathBuf>,
    },
    /// Forecast the frame after the last `T` frames of a sequence.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deploy the fleet over one illumination map.
    Plan {
        /// Grid-sequence file; the last frame is used unless `--frame` is given.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        frame: Option<usize>,
        /// CSV with columns v,w,rate; users are drawn from the seed if absent.
        #[arg(long)]
        users: Option<PathBuf>,
        #[arg(long, default_value = "proposed")]
        variant: String,
        /// Directory for uavs.csv and users.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every variant over a range of one quantity and write reports.
    Sweep {
        /// users, height or seq_len
        #[arg(long)]
        var: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Report directory; defaults to `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summaries from metrics CSV files.
    Report {
        #[arg(long, required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Problem with the command line itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<PredictorError>() {
            return if matches!(e, PredictorError::Divergence { .. }) { 3 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<OptimizerError>() {
            return if matches!(e, OptimizerError::NonFinite(_)) { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    // applied together so that paired keys (rate_min/rate_max, ...) may
    // move past each other
    let mut text = String::new();
    for item in &cli.overrides {
        if !item.contains('=') {
            return Err(Usage(format!("--set expects KEY=VALUE, got `{item}`")).into());
        }
        text.push_str(item);
        text.push('\n');
    }
    cfg.apply(&text).context("applying --set overrides")?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Usage("no subcommand given; see --help".into()).into());
    };
    match command {
        Command::Synth { out, seed } => {
            let seq = synth_sequence(seed.unwrap_or(cfg.seed), &cfg.synth)?;
            save_grid_sequence(&seq, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} frames of {}x{} to {}", seq.len(), seq.side(), seq.side(), out.display());
        }
        Command::Train { out, data } => {
            let data: Vec<GridSequence> = if data.is_empty() {
                training_set(&cfg)?
            } else {
                data.iter()
                    .map(|p| load_grid_sequence(p).with_context(|| format!("reading {}", p.display())))
                    .collect::<Result<_>>()?
            };
            let f = fit_forecaster(&cfg, &data)?;
            save_checkpoint(&out, &f.config, &f.weights)?;
            println!(
                "trained {} epochs: loss {:.6e} -> {:.6e}; checkpoint {}",
                f.config.epochs,
                f.loss_trace.first().copied().unwrap_or(f64::NAN),
                f.training_loss.unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Predict { checkpoint, input, out } => {
            let (pcfg, weights) = load_checkpoint(&checkpoint)?;
            let seq = load_grid_sequence(&input).with_context(|| format!("reading {}", input.display()))?;
            if seq.len() < pcfg.seq_len {
                bail!(HarnessError::Data {
                    stage: Stage::Data,
                    msg: format!("{} has {} frames, the checkpoint needs T = {}", input.display(), seq.len(), pcfg.seq_len),
                });
            }
            let frames = &seq.frames()[seq.len() - pcfg.seq_len..];
            let next = predict_next(frames, &weights, &pcfg)?;
            let dt = seq.dt;
            let mean = next.mean();
            save_grid_sequence(&GridSequence::new(vec![next], dt)?, &out)?;
            println!("forecast written to {} (mean {mean:.6e})", out.display());
        }
        Command::Plan { grid, frame, users, variant, out } => plan(&cfg, &grid, frame, users.as_deref(), &variant, out)?,
        Command::Sweep { var, values, out } => {
            let var: SweepVar = var.parse().map_err(Usage)?;
            let rows = sweep(&cfg, var, &values)?;
            let failed = rows.iter().filter(|r| !r.is_ok() && !r.status.starts_with("skipped")).count();
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            for path in report(&rows, &dir)? {
                println!("{}", path.display());
            }
            if failed == rows.len() {
                bail!(HarnessError::Data { stage: Stage::Data, msg: "every sweep point failed".into() });
            }
            if failed > 0 {
                log::warn!("{failed} of {} rows failed; see the status column", rows.len());
            }
        }
        Command::Report { metrics, out } => {
            let mut rows = Vec::new();
            for path in &metrics {
                rows.extend(read_metrics(path)?);
            }
            for path in report(&rows, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn read_users(path: &Path) -> Result<Vec<User>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| HarnessError::Data { stage: Stage::Data, msg: format!("{}: missing column `{name}`", path.display()) })
    };
    let (v, w, r) = (col("v")?, col("w")?, col("rate")?);
    let mut users = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse().map_err(|_| {
                HarnessError::Data { stage: Stage::Data, msg: format!("{}: bad number `{s}`", path.display()) }.into()
            })
        };
        users.push(User::new(num(v)?, num(w)?, num(r)?));
    }
    Ok(users)
}

fn plan(
    cfg: &ExperimentConfig,
    grid: &Path,
    frame: Option<usize>,
    users: Option<&Path>,
    variant: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let variant: Variant = variant.parse().map_err(Usage)?;
    let seq = load_grid_sequence(grid).with_context(|| format!("reading {}", grid.display()))?;
    let k = frame.unwrap_or(seq.len() - 1);
    let map = seq.frames().get(k).ok_or_else(|| Usage(format!("frame {k} out of range (0..{})", seq.len())))?;
    let extent = map.extent();
    let users = match users {
        Some(p) => read_users(p)?,
        None => draw_users(cfg, 0, extent),
    };
    let scenario = Scenario::new(users, cfg.uavs, (extent, extent), cfg.params, map.scaled(cfg.illum_scale))?;
    let Some(sol) = plan_variant(variant, cfg, &scenario)? else {
        bail!(Usage(format!("variant {variant} does not support {} UAVs and {} users", cfg.uavs, scenario.users.len())));
    };
    let (shortfall, min_sep) = sol.feasibility(&scenario);
    println!("variant {variant}: total power {:.6e} W after {} iterations", sol.total_power, sol.iterations);
    println!("max demand shortfall {shortfall:.3e}, min squared separation {min_sep:.3}");
    for (i, p) in sol.poses.iter().enumerate() {
        let served = sol.association.members(i).count();
        println!("uav {i}: ({:.3}, {:.3}, {:.1}) power {:.6e} W, {served} users", p.x, p.y, p.altitude, p.power);
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join("uavs.csv"))?;
        w.write_record(["uav", "x", "y", "altitude", "power"])?;
        for (i, p) in sol.poses.iter().enumerate() {
            w.write_record([i.to_string(), p.x.to_string(), p.y.to_string(), p.altitude.to_string(), p.power.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("users.csv"))?;
        w.write_record(["user", "v", "w", "rate", "ambient", "uav"])?;
        for (j, (u, a)) in scenario.users.iter().zip(scenario.ambient()).enumerate() {
            let serving = sol.association.assign[j];
            w.write_record([j.to_string(), u.v.to_string(), u.w.to_string(), u.rate.to_string(), a.to_string(), serving.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}
