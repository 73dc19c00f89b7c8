//! Saddle-escaping stochastic gradient descent with ball-controlled restarts.
//!
//! The crate derives the hyper-parameter schedule, runs ball-controlled and
//! noise-scheduled SGD on a catalog of test objectives, certifies approximate
//! second-order stationarity, and checks the supporting probabilistic claims
//! by Monte Carlo.

pub mod certify;
pub mod concentration;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod hyperparams;
pub mod linalg;
pub mod noise;
pub mod optimizer;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
pub use hyperparams::{derive_schedule, validate_schedule, ProblemConstants, Schedule};
pub use noise::{NoiseSampler, Slab};
pub use optimizer::{run_ball_sgd, run_noise_scheduled_sgd, BudgetMode, RunResult};
pub use problems::{Objective, StochasticOracle};
pub use rng::CounterRng;
