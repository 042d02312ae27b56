//! The self-similar frame: transformation of physical states into similarity
//! variables and explicit evolution of the self-similar equation on the unit
//! ball, with no boundary condition (degenerate principal part).

use crate::grid::{Geometry, SimilarityGrid};
use crate::model::{ModelError, Nonlinearity};
use crate::phys::{PhysGeometry, PhysMesh, PhysicalState};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("transformation requires 0 < T0 - t < 1, got {0}")]
    GapDomain(f64),
    #[error("similarity ball [{lo:.4}, {hi:.4}] (with stencil margin) leaves the physical mesh")]
    BallOutsideMesh { lo: f64, hi: f64 },
    #[error("self-similar evolution requires s >= {s_min} (= max(1, -log T0)), got s = {s}")]
    BelowSMin { s: f64, s_min: f64 },
    #[error("time step {ds} violates the degenerate CFL bound {bound}")]
    CflViolation { ds: f64, bound: f64 },
    #[error("self-similar blow-up detected at s = {0} (non-finite values)")]
    SelfSimilarBlowup(f64),
    #[error("state has {state} nodes but the grid has {grid}")]
    SizeMismatch { state: usize, grid: usize },
    #[error("geometry mismatch between physical mesh and similarity grid")]
    GeometryMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mesh-sampled (w, dw/ds) on the unit ball at similarity time s.
#[derive(Debug, Clone)]
pub struct SimilarityState {
    pub s: f64,
    pub w: Vec<f64>,
    pub ws: Vec<f64>,
    /// Physical origin of the frame.
    pub x0: f64,
    /// Blow-up time candidate T0 defining s = -log(T0 - t).
    pub t0: f64,
}

impl SimilarityState {
    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.ws.iter()).all(|v| v.is_finite())
    }

    /// Smallest admissible similarity time for this frame.
    pub fn s_min(&self) -> f64 {
        (-self.t0.ln()).max(1.0)
    }
}

/// w = kappa_a everywhere: the asymptotically stationary profile.
pub fn kappa_state(grid: &SimilarityGrid, nl: &Nonlinearity, s0: f64) -> SimilarityState {
    let kappa = nl.params().kappa_a();
    SimilarityState {
        s: s0,
        w: vec![kappa; grid.n],
        ws: vec![0.0; grid.n],
        x0: 0.0,
        t0: 1.0,
    }
}

/// w = kappa_a (1 + eps (1-y^2)^2), a smooth compactly-flat perturbation.
pub fn perturbed_kappa_state(
    grid: &SimilarityGrid,
    nl: &Nonlinearity,
    s0: f64,
    eps: f64,
) -> SimilarityState {
    let kappa = nl.params().kappa_a();
    let w = grid
        .nodes
        .iter()
        .map(|&y| {
            let b = 1.0 - y * y;
            kappa * (1.0 + eps * b * b)
        })
        .collect();
    SimilarityState {
        s: s0,
        w,
        ws: vec![0.0; grid.n],
        x0: 0.0,
        t0: 1.0,
    }
}

/// Cubic Lagrange interpolation on a uniform mesh with either periodic or
/// even-reflected indexing.
fn interp_cubic(mesh: &PhysMesh, vals: &[f64], x: f64) -> f64 {
    let n = mesh.n as isize;
    let pos = (x - mesh.x_min) / mesh.dx;
    let i1 = pos.floor() as isize;
    let t = pos - i1 as f64;
    let fetch = |idx: isize| -> f64 {
        match mesh.geometry {
            PhysGeometry::Line => vals[(idx.rem_euclid(n)) as usize],
            PhysGeometry::Radial(_) => {
                // even reflection through r = 0, clamp at the outer edge
                let j = if idx < 0 { -idx } else { idx };
                vals[(j.min(n - 1)) as usize]
            }
        }
    };
    let (f0, f1, f2, f3) = (fetch(i1 - 1), fetch(i1), fetch(i1 + 1), fetch(i1 + 2));
    // Lagrange basis on nodes -1, 0, 1, 2 evaluated at t
    let lm1 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let l0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let l1 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let l2 = (t + 1.0) * t * (t - 1.0) / 6.0;
    f0 * lm1 + f1 * l0 + f2 * l1 + f3 * l2
}

/// Transform a physical state into similarity variables around (x0, T0):
/// w(y, s) = u(x0 + y e^-s, t)/psi_T0(t), with dw/ds assembled from the chain
/// rule combining u_t, y grad u and the logarithmic derivative of psi_T0.
pub fn to_similarity(
    mesh: &PhysMesh,
    state: &PhysicalState,
    grid: &SimilarityGrid,
    nl: &Nonlinearity,
    x0: f64,
    t0: f64,
) -> Result<SimilarityState, SimilarityError> {
    let tau = t0 - state.t;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SimilarityError::GapDomain(tau));
    }
    match (mesh.geometry, grid.geometry) {
        (PhysGeometry::Line, Geometry::Line) => {}
        (PhysGeometry::Radial(a), Geometry::Radial(b)) if a == b => {}
        _ => return Err(SimilarityError::GeometryMismatch),
    }
    let params = nl.params();
    let s = -tau.ln();
    let psi = params.psi_gap(tau)?;
    let margin = 2.0 * mesh.dx;
    let (lo, hi) = (x0 - tau - margin, x0 + tau + margin);
    let x_max = mesh.x_min + mesh.dx * (mesh.n - 1) as f64;
    let inside = match mesh.geometry {
        PhysGeometry::Line => lo >= mesh.x_min && hi <= x_max,
        PhysGeometry::Radial(_) => x0 == 0.0 && tau + margin <= x_max,
    };
    if !inside {
        return Err(SimilarityError::BallOutsideMesh { lo, hi });
    }

    // Gradient of u on the physical mesh (4th order central).
    let n = mesh.n;
    let mut ux = vec![0.0; n];
    let fetch = |vals: &[f64], idx: isize| -> f64 {
        match mesh.geometry {
            PhysGeometry::Line => vals[idx.rem_euclid(n as isize) as usize],
            PhysGeometry::Radial(_) => {
                let j = if idx < 0 { -idx } else { idx };
                vals[(j as usize).min(n - 1)]
            }
        }
    };
    for i in 0..n {
        let ii = i as isize;
        ux[i] = (fetch(&state.u, ii - 2) - 8.0 * fetch(&state.u, ii - 1)
            + 8.0 * fetch(&state.u, ii + 1)
            - fetch(&state.u, ii + 2))
            / (12.0 * mesh.dx);
    }

    let slope = params.psi_log_slope(s);
    let mut w = Vec::with_capacity(grid.n);
    let mut ws = Vec::with_capacity(grid.n);
    for &y in &grid.nodes {
        let x = x0 + y * tau;
        let u = interp_cubic(mesh, &state.u, x);
        let ut = interp_cubic(mesh, &state.ut, x);
        let uxv = interp_cubic(mesh, &ux, x);
        let wv = u / psi;
        let wy = tau * uxv / psi;
        w.push(wv);
        ws.push(tau * ut / psi - slope * wv - y * wy);
    }
    Ok(SimilarityState { s, w, ws, x0, t0 })
}

/// Explicit stepper for the self-similar equation, holding the scratch
/// buffers for the four-stage update.
pub struct SelfSimilarSolver<'a> {
    pub grid: &'a SimilarityGrid,
    pub nl: &'a Nonlinearity,
    wy: Vec<f64>,
    wsy: Vec<f64>,
    stage_w: Vec<f64>,
    stage_ws: Vec<f64>,
    acc_w: Vec<f64>,
    acc_ws: Vec<f64>,
    k_w: Vec<f64>,
    k_ws: Vec<f64>,
}

impl<'a> SelfSimilarSolver<'a> {
    pub fn new(grid: &'a SimilarityGrid, nl: &'a Nonlinearity) -> Self {
        let z = vec![0.0; grid.n];
        Self {
            grid,
            nl,
            wy: z.clone(),
            wsy: z.clone(),
            stage_w: z.clone(),
            stage_ws: z.clone(),
            acc_w: z.clone(),
            acc_ws: z.clone(),
            k_w: z.clone(),
            k_ws: z,
        }
    }

    /// Right-hand side of the first-order system (w, ws); all seven groups:
    /// weighted degenerate Laplacian, drift, linear, gamma, damping, mixed,
    /// and the scaled source.
    fn rhs(&mut self, s: f64, w: &[f64], ws: &[f64]) {
        let params = *self.nl.params();
        let (p, a) = (params.p, params.a);
        let n = self.grid.n;
        self.grid.divergence_form(w, &mut self.k_ws);
        self.grid.derivative(w, &mut self.wy);
        self.grid.derivative(ws, &mut self.wsy);
        let drift = 2.0 * a / ((p - 1.0) * s);
        let lin = (2.0 * p + 2.0) / ((p - 1.0) * (p - 1.0));
        let gam = params.gamma_coeff(s).expect("s >= 1 in evolution");
        let damp = (p + 3.0) / (p - 1.0) - 2.0 * a / ((p - 1.0) * s);
        let src = self.nl.source_coeffs(s);
        for j in 0..n {
            let y = self.grid.nodes[j];
            self.k_w[j] = ws[j];
            self.k_ws[j] += drift * y * self.wy[j] - lin * w[j] + gam * w[j] - damp * ws[j]
                - 2.0 * y * self.wsy[j]
                + src.eval(w[j]);
        }
    }

    /// One explicit RK4 step of size ds. The caller guarantees ds respects
    /// the CFL bound; `step_checked` enforces it.
    pub fn step(&mut self, state: &mut SimilarityState, ds: f64) {
        let n = self.grid.n;
        let s = state.s;
        // Stage 1
        self.rhs(s, &state.w, &state.ws);
        for j in 0..n {
            self.acc_w[j] = state.w[j] + ds / 6.0 * self.k_w[j];
            self.acc_ws[j] = state.ws[j] + ds / 6.0 * self.k_ws[j];
            self.stage_w[j] = state.w[j] + 0.5 * ds * self.k_w[j];
            self.stage_ws[j] = state.ws[j] + 0.5 * ds * self.k_ws[j];
        }
        // Stage 2
        self.rhs_stage(s + 0.5 * ds);
        for j in 0..n {
            self.acc_w[j] += ds / 3.0 * self.k_w[j];
            self.acc_ws[j] += ds / 3.0 * self.k_ws[j];
            self.stage_w[j] = state.w[j] + 0.5 * ds * self.k_w[j];
            self.stage_ws[j] = state.ws[j] + 0.5 * ds * self.k_ws[j];
        }
        // Stage 3
        self.rhs_stage(s + 0.5 * ds);
        for j in 0..n {
            self.acc_w[j] += ds / 3.0 * self.k_w[j];
            self.acc_ws[j] += ds / 3.0 * self.k_ws[j];
            self.stage_w[j] = state.w[j] + ds * self.k_w[j];
            self.stage_ws[j] = state.ws[j] + ds * self.k_ws[j];
        }
        // Stage 4
        self.rhs_stage(s + ds);
        for j in 0..n {
            state.w[j] = self.acc_w[j] + ds / 6.0 * self.k_w[j];
            state.ws[j] = self.acc_ws[j] + ds / 6.0 * self.k_ws[j];
        }
        state.s = s + ds;
    }

    fn rhs_stage(&mut self, s: f64) {
        // Work around the borrow checker: move the stage buffers out, call
        // rhs, then move them back.
        let w = std::mem::take(&mut self.stage_w);
        let ws = std::mem::take(&mut self.stage_ws);
        self.rhs(s, &w, &ws);
        self.stage_w = w;
        self.stage_ws = ws;
    }

    pub fn step_checked(
        &mut self,
        state: &mut SimilarityState,
        ds: f64,
        cfl_factor: f64,
    ) -> Result<(), SimilarityError> {
        if state.w.len() != self.grid.n {
            return Err(SimilarityError::SizeMismatch {
                state: state.w.len(),
                grid: self.grid.n,
            });
        }
        let s_min = state.s_min();
        if state.s < s_min - 1e-12 {
            return Err(SimilarityError::BelowSMin { s: state.s, s_min });
        }
        let bound = self.grid.max_stable_ds(cfl_factor) * (1.0 + 1e-9);
        if ds > bound {
            return Err(SimilarityError::CflViolation { ds, bound });
        }
        self.step(state, ds);
        if !state.is_finite() {
            return Err(SimilarityError::SelfSimilarBlowup(state.s));
        }
        Ok(())
    }

    /// March from state.s to s_end, landing exactly on every integer
    /// multiple of `checkpoint_every`. `on_step` sees every accepted state
    /// (for dissipation accumulation), `on_checkpoint` the aligned ones.
    pub fn run_with(
        &mut self,
        state: &mut SimilarityState,
        s_end: f64,
        cfl_factor: f64,
        checkpoint_every: f64,
        mut on_step: impl FnMut(&SimilarityState, f64),
        mut on_checkpoint: impl FnMut(&SimilarityState) -> Result<(), SimilarityError>,
    ) -> Result<(), SimilarityError> {
        let s_min = state.s_min();
        if state.s < s_min - 1e-12 {
            return Err(SimilarityError::BelowSMin { s: state.s, s_min });
        }
        let ds_nominal = self.grid.max_stable_ds(cfl_factor);
        on_checkpoint(state)?;
        let mut next_checkpoint = state.s + checkpoint_every;
        while state.s < s_end - 1e-12 {
            // Stiffness guard on the source term for states far above kappa.
            let wmax = state.w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let src_lip = if wmax > 0.0 {
                let p = self.nl.params().p;
                (p * self.nl.scaled_source_abs(wmax, state.s) / wmax).max(1e-30)
            } else {
                1e-30
            };
            let mut ds = ds_nominal.min(1.0 / src_lip.sqrt()).min(s_end - state.s);
            let mut hits_checkpoint = false;
            if state.s + ds >= next_checkpoint - 1e-12 {
                ds = next_checkpoint - state.s;
                hits_checkpoint = true;
            }
            self.step(state, ds);
            if !state.is_finite() {
                return Err(SimilarityError::SelfSimilarBlowup(state.s));
            }
            on_step(state, ds);
            if hits_checkpoint {
                on_checkpoint(state)?;
                next_checkpoint += checkpoint_every;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMap;
    use crate::model::ModelParams;
    use approx::assert_relative_eq;

    fn setup(p: f64, a: f64, n_dim: u32, n: usize) -> (SimilarityGrid, Nonlinearity) {
        let params = ModelParams::new(p, a, n_dim).unwrap();
        let geom = if n_dim == 1 {
            Geometry::Line
        } else {
            Geometry::Radial(n_dim)
        };
        let grid = SimilarityGrid::build(geom, GridMap::Sine, n, params.alpha()).unwrap();
        (grid, Nonlinearity::new(params).unwrap())
    }

    #[test]
    fn zero_state_stays_zero() {
        let (grid, nl) = setup(3.0, 1.0, 1, 32);
        let mut solver = SelfSimilarSolver::new(&grid, &nl);
        let mut state = kappa_state(&grid, &nl, 5.0);
        state.w.iter_mut().for_each(|v| *v = 0.0);
        let ds = grid.max_stable_ds(0.4);
        for _ in 0..200 {
            solver.step(&mut state, ds);
        }
        assert!(state.w.iter().all(|&v| v == 0.0));
        assert!(state.ws.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kappa_is_stationary_for_pure_power() {
        // a = 0, p = 3, N = 1: w = kappa_0 is an exact steady state; drift
        // below 1e-8 per unit s.
        let (grid, nl) = setup(3.0, 0.0, 1, 128);
        let mut solver = SelfSimilarSolver::new(&grid, &nl);
        let mut state = kappa_state(&grid, &nl, 5.0);
        let kappa = nl.params().kappa_a();
        solver
            .run_with(&mut state, 6.0, 0.4, 1.0, |_, _| {}, |_| Ok(()))
            .unwrap();
        let max_dev = state
            .w
            .iter()
            .map(|&v| (v - kappa).abs())
            .fold(0.0f64, f64::max);
        let max_ws = state.ws.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(max_dev < 1e-8, "drift {max_dev:.3e}");
        assert!(max_ws < 1e-8, "ws drift {max_ws:.3e}");
    }

    #[test]
    fn step_checked_enforces_cfl_and_smin() {
        let (grid, nl) = setup(3.0, 0.0, 1, 32);
        let mut solver = SelfSimilarSolver::new(&grid, &nl);
        let mut state = kappa_state(&grid, &nl, 5.0);
        let bound = grid.max_stable_ds(0.4);
        assert!(matches!(
            solver.step_checked(&mut state, 10.0 * bound, 0.4),
            Err(SimilarityError::CflViolation { .. })
        ));
        state.s = 0.5; // below s_min = 1
        assert!(matches!(
            solver.step_checked(&mut state, 0.5 * bound, 0.4),
            Err(SimilarityError::BelowSMin { .. })
        ));
    }

    #[test]
    fn transform_of_zero_is_zero() {
        let (grid, nl) = setup(3.0, 1.0, 1, 32);
        let mesh = PhysMesh::line(2.0, 512);
        let state = PhysicalState {
            u: vec![0.0; 512],
            ut: vec![0.0; 512],
            t: 0.0,
        };
        let ss = to_similarity(&mesh, &state, &grid, &nl, 0.0, 0.5).unwrap();
        assert!(ss.w.iter().all(|&v| v == 0.0));
        assert!(ss.ws.iter().all(|&v| v == 0.0));
        assert_relative_eq!(ss.s, -(0.5f64).ln());
    }

    #[test]
    fn transform_of_exact_ode_solution_is_stationary_kappa() {
        // a=0, p=3: u(x,t) = sqrt(2)/(1-t) transforms to w = kappa_0, ws = 0.
        let (grid, nl) = setup(3.0, 0.0, 1, 64);
        let mesh = PhysMesh::line(2.0, 512);
        let t = 0.6;
        let v = 2.0f64.sqrt() / (1.0 - t);
        let vdot = 2.0f64.sqrt() / ((1.0 - t) * (1.0 - t));
        let state = PhysicalState {
            u: vec![v; 512],
            ut: vec![vdot; 512],
            t,
        };
        let ss = to_similarity(&mesh, &state, &grid, &nl, 0.0, 1.0).unwrap();
        let kappa = 2.0f64.sqrt();
        for (&w, &ws) in ss.w.iter().zip(&ss.ws) {
            assert_relative_eq!(w, kappa, max_relative = 1e-6);
            assert!(ws.abs() < 1e-6);
        }
    }

    #[test]
    fn transform_rejects_out_of_domain_gaps() {
        let (grid, nl) = setup(3.0, 0.0, 1, 32);
        let mesh = PhysMesh::line(2.0, 128);
        let state = PhysicalState {
            u: vec![0.0; 128],
            ut: vec![0.0; 128],
            t: 0.0,
        };
        assert!(matches!(
            to_similarity(&mesh, &state, &grid, &nl, 0.0, 1.5),
            Err(SimilarityError::GapDomain(_))
        ));
        // ball pokes outside the mesh
        assert!(matches!(
            to_similarity(&mesh, &state, &grid, &nl, 1.9, 0.9),
            Err(SimilarityError::BallOutsideMesh { .. })
        ));
    }

    #[test]
    fn chain_rule_ws_matches_finite_difference_in_s() {
        // Evolve a smooth physical state and compare the chain-rule ws with
        // (w(s+d) - w(s-d)) / (2d).
        let params = ModelParams::new(3.0, 1.0, 1).unwrap();
        let nl = Nonlinearity::new(params).unwrap();
        let grid = SimilarityGrid::build(Geometry::Line, GridMap::Sine, 48, params.alpha()).unwrap();
        let mesh = PhysMesh::line(4.0, 2048);
        let solver = crate::phys::WaveSolver::new(mesh, &nl);
        let mut state = crate::phys::gaussian_data(&solver.mesh, 2.0, 1.0);
        let dt = 0.4 * solver.mesh.dx;
        while state.t < 0.25 {
            state = solver.step_rk4(&state, dt);
        }
        let t0 = 0.8;
        let s_mid = -((t0 - state.t) as f64).ln();
        let delta = 1e-3;
        // States at s_mid -/+ delta via short accurate integration.
        let t_minus = t0 - (-(s_mid - delta)).exp();
        let t_plus = t0 - (-(s_mid + delta)).exp();
        let mut s1 = state.clone();
        while s1.t < t_minus - 1e-12 {
            let step = (t_minus - s1.t).min(dt * 0.25);
            s1 = solver.step_rk4(&s1, step);
        }
        let mut s2 = s1.clone();
        let mid_t = t0 - (-s_mid).exp();
        while s2.t < mid_t - 1e-12 {
            let step = (mid_t - s2.t).min(dt * 0.25);
            s2 = solver.step_rk4(&s2, step);
        }
        let mut s3 = s2.clone();
        while s3.t < t_plus - 1e-12 {
            let step = (t_plus - s3.t).min(dt * 0.25);
            s3 = solver.step_rk4(&s3, step);
        }
        let w_minus = to_similarity(&solver.mesh, &s1, &grid, &nl, 0.0, t0).unwrap();
        let w_mid = to_similarity(&solver.mesh, &s2, &grid, &nl, 0.0, t0).unwrap();
        let w_plus = to_similarity(&solver.mesh, &s3, &grid, &nl, 0.0, t0).unwrap();
        let scale = w_mid
            .ws
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(1e-12);
        for j in 0..grid.n {
            let fd = (w_plus.w[j] - w_minus.w[j]) / (2.0 * delta);
            assert!(
                (fd - w_mid.ws[j]).abs() <= 1e-3 * scale.max(fd.abs()),
                "node {j}: fd {fd:.6e} vs ws {:.6e}",
                w_mid.ws[j]
            );
        }
    }
}
