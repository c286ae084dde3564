//! Resampled Newton-Raphson (rNR) and quasi-Newton (rQN) estimation.
//!
//! A chain of damped Newton updates, each on a freshly resampled batch,
//! delivers both the point estimate (the mean of its draws) and
//! bootstrap-equivalent standard errors (their scaled covariance) in one
//! optimizer run.
//!
//! ```
//! use rnr_core::{run_chain, ChainConfig, InferenceReport, MeanModel, ResamplingPlan};
//!
//! let model = MeanModel::standardized(200, 1, 1.0, 7).unwrap();
//! let plan = ResamplingPlan::Iid { m: 200 };
//! let draws = run_chain(&model, &plan, &ChainConfig::new(0.5, 500, 1)).unwrap();
//! let report = InferenceReport::from_chain(&draws, vec!["mu".into()], 0.05).unwrap();
//! assert!(report.theta_bar[0].abs() < 0.2);
//! ```

pub mod baselines;
pub mod chain;
pub mod conditioning;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod models;
pub mod resampling;
pub mod rng;

pub use baselines::{bootstrap, classical_estimate, BootstrapResult, ClassicalResult, NewtonOptions};
pub use chain::{
    run_chain, run_chain_observed, run_twin_chains, ChainConfig, ConditioningMode, DrawMatrix,
    DrawMeta, IterationRecord, JsonlDump,
};
pub use conditioning::{qn_estimate, spd_repair, QnEstimate, QnWindow, SpdMatrix};
pub use error::{Error, Result};
pub use harness::{emit, run_experiment, Arm, ExperimentConfig, ModelSpec, ResultRow, ResultTable};
pub use inference::{InferenceReport, WaldTest};
pub use model::{full_batch, Batch, EstimationModel, Evaluation, ShockKey, Shocks, SimulationModel};
pub use models::{
    LogitMarketData, MeanModel, PanelData, PanelIndModel, ProbitIvData, ProbitIvModel,
    QuadraticModel, RcLogitModel,
};
pub use resampling::{IndexMultiset, ResamplingPlan, UnitStructure};
