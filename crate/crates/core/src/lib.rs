//! Particle-based solver for first-order mean-field games.
//!
//! A mean-field Nash equilibrium couples two objects: a flow of trajectories
//! `X` that is optimal for the running/terminal costs induced by the crowd,
//! and a population density `ρ` that is itself generated by those
//! trajectories. This crate solves the fixed point by alternating
//!
//! 1. gradient updates on a sampled trajectory ensemble against frozen
//!    population snapshots ([`particleopt`]), and
//! 2. flow-matching regression of a velocity network onto the trajectory
//!    increments, so fresh particles can be resampled from the same flow
//!    ([`flowmatch`]).
//!
//! Everything is plain 64-bit data keyed by explicit RNG seeds; a run with a
//! fixed seed is bit-reproducible.

pub mod coupling;
pub mod ensemble;
pub mod flowmatch;
pub mod nn;
pub mod particleopt;
pub mod solver;

use thiserror::Error;

/// Unified error type for configuration, training, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or malformed input data.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Interaction-kernel exponent exceeded the overflow guard.
    #[error("kernel exponent overflow: a^T(x-y) = {exponent:.6e} exceeds the guard {limit}")]
    KernelOverflow { exponent: f64, limit: f64 },
    /// A training loop produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },
    /// Trajectory integration produced a non-finite state.
    #[error("non-finite state integrating particle {particle} at step {step}")]
    Integration { particle: usize, step: usize },
    /// A particle update produced a non-finite value.
    #[error("non-finite update for particle {particle} at time node {node}")]
    Optimization { particle: usize, node: usize },
    /// Underlying I/O failure (file loading, artifact writing).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Library version, embedded in run artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use coupling::{
    mixture_snapshot, ClassifierConfig, CostEvaluator, CouplingSpec, KernelEvaluator,
    PopulationSnapshot,
};
pub use ensemble::{
    init_trajectories, sample_initial, sample_mean, sample_var_diag, InitialDistribution,
    ParticleEnsemble, TimeGrid,
};
pub use flowmatch::{fm_loss, fm_train, integrate, w2_1d, FmBatch, IntegratorScheme};
pub use nn::{Activation, AdamState, Mlp, ParamGrads};
pub use particleopt::{
    objective, particle_step, proximal_point_solve, proximal_solve, residual, trajectory_error_sq,
    FrozenCosts, ObjectiveBreakdown,
};
pub use solver::{
    checkerboard_to_gaussian_config, fictitious_play_run, nonpotential_kernel_config,
    quadratic_oc_config, quadratic_oc_oracle, run, EpochRecord, RunOutput, RunReport, SolverConfig,
};
