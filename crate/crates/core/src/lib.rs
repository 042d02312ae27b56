//! Numerical laboratory for finite-time blow-up of the semilinear wave
//! equation with a log-perturbed power nonlinearity
//! u_tt = Lap u + |u|^(p-1) u log^a(2 + u^2).
//!
//! The crate provides:
//! - the model layer (nonlinearity, antiderivatives, rate functions),
//! - a backward-seeded solver for the blow-up ODE v'' = f(v),
//! - an explicit physical-space wave solver with blow-up detection and
//!   light-cone norms,
//! - the similarity-variables transform and an explicit solver for the
//!   self-similar equation on the unit ball,
//! - the energy/Lyapunov functionals with the monotonicity verdict,
//! - rate fitting and window diagnostics.

pub mod analysis;
pub mod functionals;
pub mod grid;
pub mod model;
pub mod ode;
pub mod phys;
pub mod profile;
pub mod quad;
pub mod similarity;

pub use analysis::{cone_slices, fit_rate, theorem2_window, BlowupFit, FitOptions};
pub use functionals::{
    compute_snapshot, h1_growth_monitor, lyapunov_verdict, monitored_run, FunctionalSnapshot,
    LyapunovReport, MonitoredRun,
};
pub use grid::{Geometry, GridMap, SimilarityGrid, WeightMode};
pub use model::{DerivedConstants, ModelParams, Nonlinearity};
pub use phys::{
    cone_norms, run_to_blowup, BlowupRecord, BlowupRunOptions, PhysGeometry, PhysMesh,
    PhysicalState, WaveSolver,
};
pub use profile::{profile_ratio, solve_profile, values_at_gaps, OdeTrajectory};
pub use similarity::{
    kappa_state, perturbed_kappa_state, to_similarity, SelfSimilarSolver, SimilarityState,
};
