//! Tabular actor-critic with a STORM-style momentum critic and replay
//! buffer, plus exact oracles, diagnostics and numerical verification.

pub mod baseline;
pub mod buffer;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod mdp;
pub mod oracles;
pub mod sampling;
pub mod storm;
pub mod table;
pub mod verify;

pub use baseline::{run_baseline, train_baseline, BaselineSchedules, BaselineState};
pub use buffer::{drift_bound_check, BufferDistribution, ReplayBuffer};
pub use diagnostics::{aggregate, fit_power_law, fit_rate, AggregateRow, DiagnosticsRecord, Field, RateFit};
pub use error::{Error, Result};
pub use mdp::{random_mdp, softmax_policy, PolicyMatrix, PolicyParams, RewardRange, TabularMdp};
pub use oracles::{
    exact_gradient, gradient_domination_check, occupancy, optimal_return, policy_return, q_function, value_function,
};
pub use sampling::{RngStream, Transition};
pub use storm::{run_storm, train, RunLog, StepSchedules, TrainerState};
pub use table::{GradientTable, MomentumTable, QTable, SaTable};
