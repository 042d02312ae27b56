//! Weighted-quadrature evaluation of the energy E, the correction functionals
//! J, L0, L, H_m0, the dissipation integral, and the Lyapunov monotonicity
//! verdict with its refinement comparison.

use crate::grid::{SimilarityGrid, WeightMode};
use crate::model::{DerivedConstants, ModelError, Nonlinearity};
use crate::similarity::{SelfSimilarSolver, SimilarityError, SimilarityState};
use serde::Serialize;
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("functional evaluation requires s >= 1, got {0}")]
    STooSmall(f64),
    #[error("snapshots must be at unit-spaced s values (found gap {0})")]
    NotUnitSpaced(f64),
    #[error("need at least {need} snapshots, got {got}")]
    TooFewSnapshots { need: usize, got: usize },
    #[error("snapshot series spans a factor {got:.2} in s; need >= {need}")]
    SpanTooSmall { need: f64, got: f64 },
    #[error("state has {state} nodes but the grid has {grid}")]
    SizeMismatch { state: usize, grid: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One row of functionals.csv.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FunctionalSnapshot {
    pub s: f64,
    pub e: f64,
    pub j: f64,
    pub l0: f64,
    pub l: f64,
    pub h_m0: f64,
    /// Dissipation integral int (ws)^2 rho/(1-y^2).
    pub d: f64,
    pub h1_norm: f64,
    pub l2_norm: f64,
    pub lp1_log_norm: f64,
}

/// The dissipation density integral on its own (needed per step).
pub fn dissipation(grid: &SimilarityGrid, state: &SimilarityState) -> f64 {
    let sq: Vec<f64> = state.ws.iter().map(|&v| v * v).collect();
    grid.integrate(&sq, WeightMode::RhoOver1mY2).max(0.0)
}

/// Evaluate every functional of one similarity state.
pub fn compute_snapshot(
    grid: &SimilarityGrid,
    nl: &Nonlinearity,
    consts: &DerivedConstants,
    state: &SimilarityState,
) -> Result<FunctionalSnapshot, FunctionalError> {
    let s = state.s;
    if s < 1.0 {
        return Err(FunctionalError::STooSmall(s));
    }
    if state.w.len() != grid.n {
        return Err(FunctionalError::SizeMismatch {
            state: state.w.len(),
            grid: grid.n,
        });
    }
    let params = *nl.params();
    let (p, _a) = (params.p, params.a);
    let n = grid.n;
    let mut wy = vec![0.0; n];
    grid.derivative(&state.w, &mut wy);

    let c_lin = (p + 1.0) / ((p - 1.0) * (p - 1.0));
    let mut e_density = Vec::with_capacity(n);
    let mut inner_density = Vec::with_capacity(n);
    let mut lp1_density = Vec::with_capacity(n);
    for jn in 0..n {
        let y = grid.nodes[jn];
        let w = state.w[jn];
        let ws = state.ws[jn];
        let grad = (1.0 - y * y) * wy[jn] * wy[jn];
        e_density.push(
            0.5 * ws * ws + 0.5 * grad + c_lin * w * w - nl.scaled_potential(w, s),
        );
        inner_density.push(w * ws);
        lp1_density.push(nl.log_weighted_power(w, s));
    }
    let e = grid.integrate(&e_density, WeightMode::Rho);
    let inner = grid.integrate(&inner_density, WeightMode::Rho);
    let j = -inner / s;
    let l0 = e - inner / (s * s.sqrt());
    let l = ((p + 3.0) / s.sqrt()).exp() * l0 + consts.theta * s.powf(-0.75);
    let h_m0 = e - consts.m0 * inner / s;
    let d = dissipation(grid, state);
    let w2: Vec<f64> = state.w.iter().map(|&v| v * v).collect();
    let grad2: Vec<f64> = wy.iter().map(|&v| v * v).collect();
    let l2_sq = grid.integrate(&w2, WeightMode::Lebesgue).max(0.0);
    let h1_sq = l2_sq + grid.integrate(&grad2, WeightMode::Lebesgue).max(0.0);
    Ok(FunctionalSnapshot {
        s,
        e,
        j,
        l0,
        l,
        h_m0,
        d,
        h1_norm: h1_sq.sqrt(),
        l2_norm: l2_sq.sqrt(),
        lp1_log_norm: grid.integrate(&lp1_density, WeightMode::Rho),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntervalVerdict {
    pub s: f64,
    /// L(s+1) - L(s) + alpha int_s^{s+1} D; Theorem-1 monotonicity demands <= 0.
    pub defect: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub intervals: Vec<IntervalVerdict>,
    pub overall_pass: bool,
    pub theta: f64,
    pub m0: f64,
    pub alpha: f64,
    /// Scale entering tol = c_tol (h^2 + ds^2) scale.
    pub scale: f64,
    pub c_tol: f64,
    /// Largest defect over all intervals.
    pub worst_defect: f64,
    /// Largest positive part of the defect (discretization-induced
    /// violation); zero when the inequality holds on every interval.
    pub worst_violation: f64,
    /// First s at which the defect is non-positive.
    pub first_nonpositive_s: Option<f64>,
}

/// Check the discrete Lyapunov inequality on unit s-intervals.
///
/// `dissipation_integrals[k]` must hold the trapezoidal integral of D over
/// [s_k, s_k+1], produced by the same time-stepper that advanced the state.
pub fn lyapunov_verdict(
    snapshots: &[FunctionalSnapshot],
    dissipation_integrals: &[f64],
    consts: &DerivedConstants,
    h: f64,
    ds: f64,
    c_tol: f64,
) -> Result<LyapunovReport, FunctionalError> {
    if snapshots.len() < 2 || dissipation_integrals.len() + 1 != snapshots.len() {
        return Err(FunctionalError::TooFewSnapshots {
            need: 2,
            got: snapshots.len(),
        });
    }
    for w in snapshots.windows(2) {
        let gap = w[1].s - w[0].s;
        if (gap - 1.0).abs() > 1e-9 {
            return Err(FunctionalError::NotUnitSpaced(gap));
        }
    }
    let scale = snapshots
        .iter()
        .fold(1.0f64, |m, snap| m.max(snap.l.abs()));
    let tol = c_tol * (h * h + ds * ds) * scale;
    let mut intervals = Vec::with_capacity(snapshots.len() - 1);
    let mut worst_defect = f64::NEG_INFINITY;
    let mut worst_violation = 0.0f64;
    let mut first_nonpositive = None;
    for (k, w) in snapshots.windows(2).enumerate() {
        let defect = w[1].l - w[0].l + consts.alpha * dissipation_integrals[k];
        worst_defect = worst_defect.max(defect);
        worst_violation = worst_violation.max(defect.max(0.0));
        if defect <= 0.0 && first_nonpositive.is_none() {
            first_nonpositive = Some(w[0].s);
        }
        intervals.push(IntervalVerdict {
            s: w[0].s,
            defect,
            tol,
            pass: defect <= tol,
        });
    }
    let overall_pass = intervals.iter().all(|iv| iv.pass);
    Ok(LyapunovReport {
        intervals,
        overall_pass,
        theta: consts.theta,
        m0: consts.m0,
        alpha: consts.alpha,
        scale,
        c_tol,
        worst_defect,
        worst_violation,
        first_nonpositive_s: first_nonpositive,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RefinementVerdict {
    pub coarse_violation: f64,
    pub fine_violation: f64,
    pub pass: bool,
}

/// The discretization-induced violation must shrink by >= 3x under one grid
/// halving (or stay below the roundoff floor on both grids).
pub fn refinement_check(coarse: &LyapunovReport, fine: &LyapunovReport) -> RefinementVerdict {
    let floor = 1e-10 * coarse.scale.max(fine.scale);
    let pass = fine.worst_violation <= (coarse.worst_violation / 3.0).max(floor);
    RefinementVerdict {
        coarse_violation: coarse.worst_violation,
        fine_violation: fine.worst_violation,
        pass,
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum GrowthReport {
    /// Norm is numerically zero somewhere; no exponent can be fitted.
    Degenerate,
    Slope {
        /// Least-squares slope of log h1_norm vs log s (the empirical q1).
        q1: f64,
        intercept: f64,
        /// Slopes over the two halves of the s-range.
        split: (f64, f64),
    },
}

fn ls_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Fit the polynomial growth exponent of the H1 norm over the snapshot
/// series: least-squares slope of log h1_norm against log s.
pub fn h1_growth_monitor(snapshots: &[FunctionalSnapshot]) -> Result<GrowthReport, FunctionalError> {
    if snapshots.len() < 10 {
        return Err(FunctionalError::TooFewSnapshots {
            need: 10,
            got: snapshots.len(),
        });
    }
    let span = snapshots.last().unwrap().s / snapshots[0].s;
    if span < 4.0 {
        return Err(FunctionalError::SpanTooSmall {
            need: 4.0,
            got: span,
        });
    }
    if snapshots.iter().any(|sn| sn.h1_norm < 1e-12) {
        return Ok(GrowthReport::Degenerate);
    }
    let pts: Vec<(f64, f64)> = snapshots
        .iter()
        .map(|sn| (sn.s.ln(), sn.h1_norm.ln()))
        .collect();
    let (q1, intercept) = ls_slope(&pts);
    let half = pts.len() / 2;
    let (qa, _) = ls_slope(&pts[..half]);
    let (qb, _) = ls_slope(&pts[half..]);
    Ok(GrowthReport::Slope {
        q1,
        intercept,
        split: (qa, qb),
    })
}

/// A monitored self-similar run: snapshots at integer s plus the per-interval
/// dissipation integrals accumulated by the stepper (trapezoid in s).
#[derive(Debug, Clone)]
pub struct MonitoredRun {
    pub snapshots: Vec<FunctionalSnapshot>,
    pub dissipation_intervals: Vec<f64>,
    pub checkpoint_states: Vec<SimilarityState>,
    /// Set when the run ended in the self-similar blow-up scenario.
    pub blowup_s: Option<f64>,
    pub h: f64,
    pub ds: f64,
}

pub fn monitored_run(
    solver: &mut SelfSimilarSolver,
    mut state: SimilarityState,
    s_end: f64,
    cfl_factor: f64,
    consts: &DerivedConstants,
    keep_states: bool,
) -> Result<MonitoredRun, SimilarityError> {
    let grid = solver.grid;
    let nl = solver.nl;
    let snapshots = RefCell::new(Vec::new());
    let states = RefCell::new(Vec::new());
    let diss_intervals = RefCell::new(Vec::new());
    let acc = RefCell::new(0.0f64);
    let d_prev = RefCell::new(dissipation(grid, &state));
    let first = RefCell::new(true);
    let snap_err = RefCell::new(None);
    let ds = grid.max_stable_ds(cfl_factor);
    let result = solver.run_with(
        &mut state,
        s_end,
        cfl_factor,
        1.0,
        |st, ds_taken| {
            let d = dissipation(grid, st);
            *acc.borrow_mut() += 0.5 * ds_taken * (*d_prev.borrow() + d);
            *d_prev.borrow_mut() = d;
        },
        |st| {
            match compute_snapshot(grid, nl, consts, st) {
                Ok(snap) => snapshots.borrow_mut().push(snap),
                Err(e) => {
                    *snap_err.borrow_mut() = Some(e);
                    return Err(SimilarityError::SelfSimilarBlowup(st.s));
                }
            }
            if keep_states {
                states.borrow_mut().push(st.clone());
            }
            if *first.borrow() {
                *first.borrow_mut() = false;
            } else {
                diss_intervals.borrow_mut().push(*acc.borrow());
            }
            *acc.borrow_mut() = 0.0;
            Ok(())
        },
    );
    let blowup_s = match result {
        Ok(()) => None,
        Err(SimilarityError::SelfSimilarBlowup(s)) if snap_err.borrow().is_none() => Some(s),
        Err(e) => return Err(e),
    };
    Ok(MonitoredRun {
        snapshots: snapshots.into_inner(),
        dissipation_intervals: diss_intervals.into_inner(),
        checkpoint_states: states.into_inner(),
        blowup_s,
        h: grid.h_max(),
        ds,
    })
}
