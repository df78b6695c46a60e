//! Forecasting of ambient night-time illumination and power-minimal
//! deployment of VLC-enabled UAVs.
//!
//! * [`channel`]: closed-form VLC link model.
//! * [`illum`]: illumination grids, file format, synthetic generator.
//! * [`predictor`]: CNN encoder, GRU, and mirrored deconvolution decoder.
//! * [`optimizer`]: placement, power, and user association.
//! * [`harness`]: experiment pipeline, sweeps, and reports.

pub mod channel;
pub mod illum;
pub mod predictor;
pub mod optimizer;
pub mod harness;

pub use channel::{UavPose, User, VlcParams};
pub use illum::{GridSequence, IlluminationGrid, SynthConfig};
pub use optimizer::{DeploymentSolution, OptimizerOptions, Scenario};
pub use predictor::{PredictorConfig, PredictorWeights};
pub use harness::{ExperimentConfig, MetricsRow};
