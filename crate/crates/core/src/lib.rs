//! Continuous-time Q-score matching for scalar linear-quadratic control.
//!
//! The crate contains the environment and its closed-form solution, the
//! critic and score parameterizations, action samplers, the online and
//! offline learning rules, martingale diagnostics and the experiment
//! runner behind the `cqsm` binary.

pub mod analytic;
pub mod config;
pub mod diag;
pub mod experiment;
pub mod format;
pub mod lq;
pub mod noise;
pub mod offline;
pub mod online;
pub mod policy;
pub mod roots;
pub mod samplers;
pub mod sde;

pub use analytic::{solve_lq, KCoefficients, OptimalScore, SolveError};
pub use config::{ConfigError, ExperimentConfig};
pub use lq::{LqError, LqParams};
pub use noise::NoiseSource;
pub use online::{run_cqsm, AlgoConfig, LearningRecord};
pub use policy::{ActionValue, QParams, Score, ScoreParams};
