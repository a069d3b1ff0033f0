//! End-to-end orchestration of Algorithm 1: configuration, the outer loop
//! with warm-started inner stages, metrics and output files.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ComparisonConfig, GraphConfig, RunConfig, ScenarioConfig, StepConfig, TheoryConfig};
pub use output::{trajectory_csv, write_outputs, CSV_HEADER};
pub use run::{
    barrier_gap_sweep, compare_schedules, leader_step, run, run_schedule, Engine, Estimate, GapRow, OracleData,
    Prepared, RunOutput, ScheduleComparison, StopReason, ThresholdHit, Trajectory, TrajectoryRow,
};
