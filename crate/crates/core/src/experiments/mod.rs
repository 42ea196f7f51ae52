//! Scripted studies: scaling-invariance pairs, smallness-threshold sweeps,
//! an independent finite-difference oracle and trajectory comparison.

mod compare;
mod oracle;
mod scaling;
mod sweep;

pub use compare::{compare_trajectories, restrict_trajectory, DiffNorm, SampleDifference};
pub use oracle::oracle_fd_run;
pub use scaling::{run_scaling_pair, scaled_problem, ScalingReport};
pub use sweep::{
    classify, threshold_sweep, Bracket, Outcome, SweepParameter, SweepReport, SweepSettings,
};
