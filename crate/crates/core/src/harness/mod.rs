//! Experiment pipeline: forecast the next illumination map, deploy the
//! fleet on it, compare against baselines, and tabulate the results.
//!
//! Every deployment is planned on some map (the forecast, the true next
//! frame, or the latest observed frame) and then scored on the true next
//! frame: positions and association are kept and each UAV's power is
//! raised to what the true map requires.

mod config;
mod report;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::User;
use crate::illum::{load_grid_sequence, synth_sequence, GridError, GridSequence, IlluminationGrid};
use crate::optimizer::{
    baseline_association_only, baseline_center, baseline_fixed_association, exhaustive_oracle, optimize,
    DeploymentSolution, OptimizerError, Scenario,
};
use crate::predictor::{
    load_checkpoint_matching, predict_next, train, PredictorConfig, PredictorError, PredictorWeights,
};

pub use config::ExperimentConfig;
pub use report::{read_metrics, reduction_percent, report, write_metrics, METRICS_COLUMNS, SUMMARY_COLUMNS};

/// Pipeline stage an error is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Checkpoint,
    Training,
    Prediction,
    Scenario,
    Planning(Variant),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Data => f.write_str("loading data"),
            Stage::Checkpoint => f.write_str("loading checkpoint"),
            Stage::Training => f.write_str("training"),
            Stage::Prediction => f.write_str("prediction"),
            Stage::Scenario => f.write_str("building scenario"),
            Stage::Planning(v) => write!(f, "planning ({v})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Grid { stage: Stage, source: GridError },
    #[error("{stage}: {source}")]
    Predictor { stage: Stage, source: PredictorError },
    #[error("{stage}: {source}")]
    Optimizer { stage: Stage, source: OptimizerError },
    #[error("{stage}: {msg}")]
    Data { stage: Stage, msg: String },
    #[error("metrics table is empty")]
    EmptyTable,
    #[error("report: {0}")]
    Csv(#[from] csv::Error),
    #[error("report: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl HarnessError {
    pub fn class(&self) -> ErrorClass {
        match self {
            HarnessError::Config { .. } | HarnessError::Invalid(_) => ErrorClass::Usage,
            HarnessError::Predictor { source: PredictorError::Divergence { .. }, .. }
            | HarnessError::Optimizer { source: OptimizerError::NonFinite(_), .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}

/// Deployment strategy of one metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Full optimisation on the forecast map.
    Proposed,
    /// Full optimisation on the true next map.
    ActualIllum,
    /// Full optimisation on the latest observed map.
    Persistence,
    /// Centre pattern with nearest association, on the forecast map.
    Center,
    /// Centre pattern with optimised association, on the forecast map.
    AssocOnly,
    /// Optimised placement for the centre pattern's association.
    PlacementOnly,
    /// Lattice brute force on the forecast map (small instances only).
    Exhaustive,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Proposed,
        Variant::ActualIllum,
        Variant::Persistence,
        Variant::Center,
        Variant::AssocOnly,
        Variant::PlacementOnly,
        Variant::Exhaustive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::ActualIllum => "actual-illum",
            Variant::Persistence => "persistence",
            Variant::Center => "center",
            Variant::AssocOnly => "assoc-only",
            Variant::PlacementOnly => "placement-only",
            Variant::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVar {
    Users,
    Height,
    SeqLen,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Users => "users",
            SweepVar::Height => "height",
            SweepVar::SeqLen => "seq_len",
        }
    }

    /// Copy of `cfg` with the swept quantity set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, HarnessError> {
        let mut out = cfg.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(HarnessError::Invalid(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepVar::Users => out.users = count()?,
            SweepVar::Height => out.params.altitude = value,
            SweepVar::SeqLen => out.predictor.seq_len = count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SweepVar::Users, SweepVar::Height, SweepVar::SeqLen]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown sweep variable `{s}` (users, height, seq_len)"))
    }
}

/// One variant of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub variant: Variant,
    pub sweep: Option<SweepVar>,
    pub sweep_value: f64,
    pub replicate: usize,
    pub users: usize,
    pub uavs: usize,
    pub height: f64,
    pub seq_len: usize,
    /// Total power after scoring on the true map, W.
    pub total_power: Option<f64>,
    /// Total power on the map the deployment was planned on, W.
    pub planned_power: Option<f64>,
    /// Forecast MSE against the true map, grid units.
    pub predictor_mse: f64,
    pub persistence_mse: f64,
    pub outer_iterations: usize,
    /// Scored deployment meets every demand and the separation.
    pub feasible: bool,
    /// `ok`, `skipped: ...` or `error: ...`.
    pub status: String,
    /// Planning time, seconds. Not part of the metrics CSV.
    pub wall_time: f64,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Weights used to forecast, trained or loaded once per configuration.
#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: PredictorConfig,
    pub weights: PredictorWeights,
    /// Final training loss; `None` for loaded checkpoints.
    pub training_loss: Option<f64>,
    /// Loss at the start of every epoch; empty for loaded checkpoints.
    pub loss_trace: Vec<f64>,
}

const STREAM_TRAIN: u64 = 1 << 32;
const STREAM_EVAL: u64 = 2 << 32;
const STREAM_USERS: u64 = 3 << 32;
const STREAM_INIT: u64 = 4;
const STREAM_OPT: u64 = 5;

/// Independent 64-bit seed for one consumer of the master seed.
pub fn sub_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Synthetic training sequences of `cfg`.
pub fn training_set(cfg: &ExperimentConfig) -> Result<Vec<GridSequence>, HarnessError> {
    (0..cfg.train_sequences as u64)
        .map(|k| synth_sequence(sub_seed(cfg.seed, STREAM_TRAIN + k), &cfg.synth))
        .collect::<Result<_, _>>()
        .map_err(|source| HarnessError::Grid { stage: Stage::Data, source })
}

/// Evaluation sequence of replicate `r`.
pub fn evaluation_sequence(cfg: &ExperimentConfig, r: usize) -> Result<GridSequence, HarnessError> {
    let seq = match &cfg.grid_file {
        Some(path) => load_grid_sequence(path),
        None => synth_sequence(sub_seed(cfg.seed, STREAM_EVAL + r as u64), &cfg.synth),
    }
    .map_err(|source| HarnessError::Grid { stage: Stage::Data, source })?;
    if seq.side() != cfg.predictor.grid_side {
        return Err(HarnessError::Data {
            stage: Stage::Data,
            msg: format!("grid side {} differs from lambda_0 = {}", seq.side(), cfg.predictor.grid_side),
        });
    }
    Ok(seq)
}

/// Trains a forecaster on `data` with the architecture and schedule of
/// `cfg` and an initialisation derived from the master seed.
pub fn fit_forecaster(cfg: &ExperimentConfig, data: &[GridSequence]) -> Result<Forecaster, HarnessError> {
    let mut pcfg = cfg.predictor.clone();
    pcfg.seed = sub_seed(cfg.seed, STREAM_INIT);
    let trained = train(data, &pcfg).map_err(|source| HarnessError::Predictor { stage: Stage::Training, source })?;
    log::info!(
        "trained predictor: loss {:.4e} -> {:.4e}",
        trained.loss_trace.first().copied().unwrap_or(f64::NAN),
        trained.final_loss
    );
    Ok(Forecaster {
        config: pcfg,
        weights: trained.weights,
        training_loss: Some(trained.final_loss),
        loss_trace: trained.loss_trace,
    })
}

/// Loads the configured checkpoint or trains from scratch. With a grid
/// file, training uses every frame but the last, which is held out.
pub fn prepare_forecaster(cfg: &ExperimentConfig) -> Result<Forecaster, HarnessError> {
    if let Some(path) = &cfg.checkpoint {
        let weights = load_checkpoint_matching(path, &cfg.predictor)
            .map_err(|source| HarnessError::Predictor { stage: Stage::Checkpoint, source })?;
        return Ok(Forecaster { config: cfg.predictor.clone(), weights, training_loss: None, loss_trace: Vec::new() });
    }
    let data = match &cfg.grid_file {
        Some(_) => {
            let seq = evaluation_sequence(cfg, 0)?;
            let held = seq
                .window(0, seq.len().saturating_sub(1))
                .map_err(|source| HarnessError::Grid { stage: Stage::Data, source })?;
            vec![held]
        }
        None => training_set(cfg)?,
    };
    fit_forecaster(cfg, &data)
}

/// Users of replicate `r`, uniform over a square of side `extent`.
pub fn draw_users(cfg: &ExperimentConfig, r: usize, extent: f64) -> Vec<User> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, STREAM_USERS + r as u64));
    let (lo, hi) = cfg.rate_range;
    (0..cfg.users)
        .map(|_| {
            let v = rng.gen_range(0.0..extent);
            let w = rng.gen_range(0.0..extent);
            let rate = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            User::new(v, w, rate)
        })
        .collect()
}

/// Maps of one forecasting step.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub predicted: IlluminationGrid,
    pub actual: IlluminationGrid,
    pub latest: IlluminationGrid,
}

/// Forecasts the last frame of `seq` from the `T` frames before it.
pub fn forecast(seq: &GridSequence, f: &Forecaster) -> Result<Forecast, HarnessError> {
    let t = f.config.seq_len;
    if seq.len() < t + 1 {
        return Err(HarnessError::Data {
            stage: Stage::Data,
            msg: format!("sequence has {} frames, forecasting needs T + 1 = {}", seq.len(), t + 1),
        });
    }
    let frames = seq.frames();
    let inputs = &frames[frames.len() - 1 - t..frames.len() - 1];
    let predicted = predict_next(inputs, &f.weights, &f.config)
        .map_err(|source| HarnessError::Predictor { stage: Stage::Prediction, source })?;
    Ok(Forecast { predicted, actual: frames[frames.len() - 1].clone(), latest: frames[frames.len() - 2].clone() })
}

/// Deploys the fleet of `scenario` with one strategy. `None` when the
/// exhaustive variant does not support the instance size.
pub fn plan_variant(
    variant: Variant,
    cfg: &ExperimentConfig,
    scenario: &Scenario,
) -> Result<Option<DeploymentSolution>, OptimizerError> {
    let mut opts = cfg.optimizer.clone();
    opts.seed = sub_seed(cfg.seed, STREAM_OPT);
    Ok(Some(match variant {
        Variant::Proposed | Variant::ActualIllum | Variant::Persistence => optimize(scenario, &opts)?,
        Variant::Center => baseline_center(scenario)?,
        Variant::AssocOnly => baseline_association_only(scenario, &opts)?,
        Variant::PlacementOnly => baseline_fixed_association(scenario, &opts)?,
        Variant::Exhaustive => match exhaustive_oracle(scenario, cfg.oracle_resolution) {
            Err(OptimizerError::TooLarge(_)) => return Ok(None),
            other => other?,
        },
    }))
}

/// Sweep coordinates of one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Point {
    pub sweep: Option<SweepVar>,
    pub value: f64,
    pub replicate: usize,
}

impl Point {
    pub fn experiment(&self) -> String {
        match self.sweep {
            Some(v) => format!("{v}={}/r{}", self.value, self.replicate),
            None => format!("single/r{}", self.replicate),
        }
    }
}

/// Runs every configured variant for one replicate. Variant failures are
/// returned per variant; data, prediction and scenario failures abort.
pub fn evaluate(
    cfg: &ExperimentConfig,
    forecaster: &Forecaster,
    point: Point,
) -> Result<Vec<Result<MetricsRow, HarnessError>>, HarnessError> {
    let seq = evaluation_sequence(cfg, point.replicate)?;
    let fc = forecast(&seq, forecaster)?;
    let predictor_mse = fc.predicted.mse(&fc.actual);
    let persistence_mse = fc.latest.mse(&fc.actual);
    let extent = fc.actual.extent();
    let users = draw_users(cfg, point.replicate, extent);
    let scenario_for = |grid: &IlluminationGrid| {
        Scenario::new(users.clone(), cfg.uavs, (extent, extent), cfg.params, grid.scaled(cfg.illum_scale))
            .map_err(|source| HarnessError::Optimizer { stage: Stage::Scenario, source })
    };
    let truth = scenario_for(&fc.actual)?;
    let predicted = scenario_for(&fc.predicted)?;
    let latest = scenario_for(&fc.latest)?;

    let rows = cfg
        .variants
        .iter()
        .map(|&variant| {
            let planning = match variant {
                Variant::ActualIllum => &truth,
                Variant::Persistence => &latest,
                _ => &predicted,
            };
            let start = Instant::now();
            let planned = plan_variant(variant, cfg, planning)
                .map_err(|source| HarnessError::Optimizer { stage: Stage::Planning(variant), source })?;
            let wall_time = start.elapsed().as_secs_f64();
            let mut row = MetricsRow {
                experiment: point.experiment(),
                variant,
                sweep: point.sweep,
                sweep_value: point.value,
                replicate: point.replicate,
                users: cfg.users,
                uavs: cfg.uavs,
                height: cfg.params.altitude,
                seq_len: forecaster.config.seq_len,
                total_power: None,
                planned_power: None,
                predictor_mse,
                persistence_mse,
                outer_iterations: 0,
                feasible: false,
                status: "skipped: instance too large".into(),
                wall_time,
            };
            if let Some(sol) = planned {
                let scored = sol.topped_up(&truth);
                let (shortfall, min_sep) = scored.feasibility(&truth);
                row.total_power = Some(scored.total_power);
                row.planned_power = Some(sol.total_power);
                row.outer_iterations = sol.iterations;
                row.feasible =
                    shortfall <= 1e-9 && (!cfg.optimizer.separation || min_sep >= cfg.params.d_min * (1.0 - 1e-9));
                row.status = "ok".into();
            }
            Ok(row)
        })
        .collect();
    Ok(rows)
}

/// One experiment per replicate with the configuration as given. The
/// first failure of any stage or variant is returned.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>, HarnessError> {
    cfg.validate()?;
    let forecaster = prepare_forecaster(cfg)?;
    let mut rows = Vec::new();
    for replicate in 0..cfg.replicates {
        for row in evaluate(cfg, &forecaster, Point { sweep: None, value: 0.0, replicate })? {
            rows.push(row?);
        }
    }
    Ok(rows)
}

fn failed_rows(cfg: &ExperimentConfig, point: Point, err: &HarnessError) -> Vec<MetricsRow> {
    cfg.variants
        .iter()
        .map(|&variant| MetricsRow {
            experiment: point.experiment(),
            variant,
            sweep: point.sweep,
            sweep_value: point.value,
            replicate: point.replicate,
            users: cfg.users,
            uavs: cfg.uavs,
            height: cfg.params.altitude,
            seq_len: cfg.predictor.seq_len,
            total_power: None,
            planned_power: None,
            predictor_mse: f64::NAN,
            persistence_mse: f64::NAN,
            outer_iterations: 0,
            feasible: false,
            status: format!("error: {err}"),
            wall_time: 0.0,
        })
        .collect()
}

/// Runs every value of `var` for every replicate. Failed points are kept
/// as flagged rows and the sweep continues. Points run in parallel; rows
/// come back in (value, replicate, variant) order.
pub fn sweep(cfg: &ExperimentConfig, var: SweepVar, values: &[f64]) -> Result<Vec<MetricsRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Invalid("sweep needs at least one value".into()));
    }
    cfg.validate()?;
    let configs: Vec<ExperimentConfig> = values.iter().map(|&v| var.apply(cfg, v)).collect::<Result<_, _>>()?;
    let shared = if var == SweepVar::SeqLen { None } else { Some(prepare_forecaster(cfg)) };
    let forecasters: Vec<Result<Forecaster, String>> = configs
        .iter()
        .map(|c| match &shared {
            Some(f) => f.as_ref().map(Clone::clone).map_err(ToString::to_string),
            None => prepare_forecaster(c).map_err(|e| e.to_string()),
        })
        .collect();

    let jobs: Vec<(usize, Point)> = values
        .iter()
        .enumerate()
        .flat_map(|(k, &value)| {
            (0..cfg.replicates).map(move |replicate| (k, Point { sweep: Some(var), value, replicate }))
        })
        .collect();
    let rows: Vec<Vec<MetricsRow>> = jobs
        .par_iter()
        .map(|&(k, point)| {
            let c = &configs[k];
            let outcome = match &forecasters[k] {
                Ok(f) => evaluate(c, f, point),
                Err(msg) => Err(HarnessError::Data { stage: Stage::Training, msg: msg.clone() }),
            };
            match outcome {
                Ok(results) => results
                    .into_iter()
                    .zip(&c.variants)
                    .flat_map(|(r, &variant)| match r {
                        Ok(row) => vec![row],
                        Err(e) => {
                            log::warn!("{}: {e}", point.experiment());
                            let mut cc = c.clone();
                            cc.variants = vec![variant];
                            failed_rows(&cc, point, &e)
                        }
                    })
                    .collect(),
                Err(e) => {
                    log::warn!("{}: {e}", point.experiment());
                    failed_rows(c, point, &e)
                }
            }
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}
