//! Objectives, optimizers and the training loop.

pub mod config;
pub mod objectives;
pub mod optimizer;
pub mod sweep;
pub mod train;

pub use config::{Objective, OptimizerKind, TrainConfig};
pub use objectives::{draw_period, evaluate_objective, period_key, ObjectiveEval, PeriodDraws};
pub use optimizer::Optimizer;
pub use sweep::{
    epsilon_grid, run_pareto, run_sweep, select_best, write_trials_csv, ModelFactory, ParetoConfig, ParetoOutcome,
    SelectedModel, SweepGrid, TrialResult, TrialRun, TRIALS_SCHEMA_VERSION, TRIAL_COLUMNS,
};
pub use train::{
    checkpoint_file, initialize, read_checkpoint, train, write_metrics_csv, Checkpoint, EpochRecord, StopReason,
    TrainOutcome, TrainState, METRICS_SCHEMA_VERSION,
};
