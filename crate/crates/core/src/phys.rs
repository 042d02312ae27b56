//! Physical-space Cauchy solver for u_tt = Lap u + f(u) on a uniform 1-D or
//! radial mesh, with blow-up detection, amplitude recording at geometric
//! levels, and the rescaled light-cone norms.

use crate::model::{ModelError, ModelParams, Nonlinearity};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhysError {
    #[error("time step {dt} exceeds the CFL bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("no blow-up detected after {0} steps")]
    NoBlowup(usize),
    #[error("ball of radius {radius:.3e} spans fewer than 4 mesh cells (dx = {dx:.3e})")]
    ConeResolution { radius: f64, dx: f64 },
    #[error("cone norms need 0 < T - t < 1, got {0}")]
    ConeGap(f64),
    #[error("state and mesh sizes disagree: {state} vs {mesh}")]
    SizeMismatch { state: usize, mesh: usize },
    #[error("radial cone norms are centred at the origin; got x0 = {0}")]
    RadialOffCentre(f64),
    #[error("amplitude {amp:.3e} is outside the invertible range of kappa_a psi")]
    AmpOutOfRange { amp: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PhysGeometry {
    /// Periodic line mesh over [-half_width, half_width).
    Line,
    /// Radial mesh over [0, radius], frozen at the outer boundary.
    Radial(u32),
}

#[derive(Debug, Clone, Serialize)]
pub struct PhysMesh {
    pub geometry: PhysGeometry,
    pub x_min: f64,
    pub dx: f64,
    pub n: usize,
}

impl PhysMesh {
    pub fn line(half_width: f64, n: usize) -> Self {
        Self {
            geometry: PhysGeometry::Line,
            x_min: -half_width,
            dx: 2.0 * half_width / n as f64,
            n,
        }
    }

    pub fn radial(n_dim: u32, radius: f64, n: usize) -> Self {
        Self {
            geometry: PhysGeometry::Radial(n_dim),
            x_min: 0.0,
            dx: radius / (n - 1) as f64,
            n,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + self.dx * i as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

/// Mesh-sampled (u, du/dt) at one physical time.
#[derive(Debug, Clone)]
pub struct PhysicalState {
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
    pub t: f64,
}

impl PhysicalState {
    pub fn sup_norm(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.ut.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeScheme {
    Rk4,
    Leapfrog,
}

pub struct WaveSolver<'a> {
    pub mesh: PhysMesh,
    pub nl: &'a Nonlinearity,
}

impl<'a> WaveSolver<'a> {
    pub fn new(mesh: PhysMesh, nl: &'a Nonlinearity) -> Self {
        Self { mesh, nl }
    }

    fn params(&self) -> &ModelParams {
        self.nl.params()
    }

    /// Second-order Laplacian; periodic on the line, L'Hopital-regularised
    /// at the radial origin, frozen at the radial outer edge.
    pub fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        let n = self.mesh.n;
        let idx2 = 1.0 / (self.mesh.dx * self.mesh.dx);
        match self.mesh.geometry {
            PhysGeometry::Line => {
                for i in 0..n {
                    let um = u[(i + n - 1) % n];
                    let up = u[(i + 1) % n];
                    out[i] = (um - 2.0 * u[i] + up) * idx2;
                }
            }
            PhysGeometry::Radial(nd) => {
                let ndf = nd as f64;
                // r = 0: Lap u = N u_rr with even extension.
                out[0] = ndf * 2.0 * (u[1] - u[0]) * idx2;
                for i in 1..n - 1 {
                    let r = self.mesh.x(i);
                    let urr = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * idx2;
                    let ur = (u[i + 1] - u[i - 1]) / (2.0 * self.mesh.dx);
                    out[i] = urr + (ndf - 1.0) * ur / r;
                }
                out[n - 1] = 0.0;
            }
        }
    }

    fn accel(&self, u: &[f64], out: &mut [f64]) {
        self.laplacian(u, out);
        let params = self.params();
        let frozen_tail = matches!(self.mesh.geometry, PhysGeometry::Radial(_));
        let last = self.mesh.n - 1;
        for (i, o) in out.iter_mut().enumerate() {
            if frozen_tail && i == last {
                continue;
            }
            *o += params.f(u[i]);
        }
    }

    /// One explicit RK4 method-of-lines step.
    pub fn step_rk4(&self, state: &PhysicalState, dt: f64) -> PhysicalState {
        let n = self.mesh.n;
        let mut a = vec![0.0; n];
        // k1
        self.accel(&state.u, &mut a);
        let k1u: Vec<f64> = state.ut.clone();
        let k1v = a.clone();
        // k2
        let u2: Vec<f64> = (0..n).map(|i| state.u[i] + 0.5 * dt * k1u[i]).collect();
        self.accel(&u2, &mut a);
        let k2u: Vec<f64> = (0..n).map(|i| state.ut[i] + 0.5 * dt * k1v[i]).collect();
        let k2v = a.clone();
        // k3
        let u3: Vec<f64> = (0..n).map(|i| state.u[i] + 0.5 * dt * k2u[i]).collect();
        self.accel(&u3, &mut a);
        let k3u: Vec<f64> = (0..n).map(|i| state.ut[i] + 0.5 * dt * k2v[i]).collect();
        let k3v = a.clone();
        // k4
        let u4: Vec<f64> = (0..n).map(|i| state.u[i] + dt * k3u[i]).collect();
        self.accel(&u4, &mut a);
        let k4u: Vec<f64> = (0..n).map(|i| state.ut[i] + dt * k3v[i]).collect();
        let k4v = a;
        let sixth = dt / 6.0;
        PhysicalState {
            u: (0..n)
                .map(|i| state.u[i] + sixth * (k1u[i] + 2.0 * (k2u[i] + k3u[i]) + k4u[i]))
                .collect(),
            ut: (0..n)
                .map(|i| state.ut[i] + sixth * (k1v[i] + 2.0 * (k2v[i] + k3v[i]) + k4v[i]))
                .collect(),
            t: state.t + dt,
        }
    }

    /// One leapfrog step from (u_prev, u_cur); returns u_next.
    pub fn step_leapfrog(&self, u_prev: &[f64], u_cur: &[f64], dt: f64) -> Vec<f64> {
        let n = self.mesh.n;
        let mut a = vec![0.0; n];
        self.accel(u_cur, &mut a);
        (0..n)
            .map(|i| 2.0 * u_cur[i] - u_prev[i] + dt * dt * a[i])
            .collect()
    }

    /// Checked single step honouring the CFL bound (default factor 0.5).
    pub fn step_wave(
        &self,
        state: &PhysicalState,
        dt: f64,
        cfl: f64,
    ) -> Result<PhysicalState, PhysError> {
        let bound = cfl * self.mesh.dx;
        if dt > bound {
            return Err(PhysError::CflViolation { dt, bound });
        }
        if state.u.len() != self.mesh.n {
            return Err(PhysError::SizeMismatch {
                state: state.u.len(),
                mesh: self.mesh.n,
            });
        }
        Ok(self.step_rk4(state, dt))
    }

    /// Discrete energy int (1/2 u_t^2 + 1/2 |grad u|^2 - F(u)); conserved to
    /// O(dt^2) away from blow-up.
    pub fn discrete_energy(&self, state: &PhysicalState) -> f64 {
        let n = self.mesh.n;
        let dx = self.mesh.dx;
        let mut e = 0.0;
        match self.mesh.geometry {
            PhysGeometry::Line => {
                for i in 0..n {
                    let du = (state.u[(i + 1) % n] - state.u[i]) / dx;
                    e += 0.5 * state.ut[i] * state.ut[i] + 0.5 * du * du
                        - self.nl.potential(state.u[i]);
                }
                e * dx
            }
            PhysGeometry::Radial(nd) => {
                let area = 2.0 * std::f64::consts::PI.powf(nd as f64 / 2.0)
                    / crate::phys::gamma_half_pub(nd);
                for i in 0..n - 1 {
                    let du = (state.u[i + 1] - state.u[i]) / dx;
                    let r = self.mesh.x(i) + 0.5 * dx;
                    e += (0.5 * state.ut[i] * state.ut[i] + 0.5 * du * du
                        - self.nl.potential(state.u[i]))
                        * r.powi(nd as i32 - 1);
                }
                e * dx * area
            }
        }
    }
}

pub(crate) fn gamma_half_pub(n: u32) -> f64 {
    let mut x = if n % 2 == 0 { 1.0 } else { 0.5 };
    let mut val = if n % 2 == 0 {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    while 2.0 * x < n as f64 {
        val *= x;
        x += 1.0;
    }
    val
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AmpSample {
    pub t: f64,
    pub sup_norm: f64,
    pub dt: f64,
}

/// Outcome of a blow-up run: estimated blow-up time, first blow-up location,
/// the amplitude series at geometric levels, and full state snapshots at
/// those levels for cone diagnostics.
#[derive(Debug, Clone)]
pub struct BlowupRecord {
    pub t_est: f64,
    pub t_est_spread: f64,
    pub x_star: f64,
    pub amp_series: Vec<AmpSample>,
    pub snapshots: Vec<PhysicalState>,
    pub dx: f64,
    pub reached_nonfinite: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BlowupRunOptions {
    pub stop_amp: f64,
    pub cfl: f64,
    /// Nonlinear time-step factor: dt <= c_nl / sqrt(max f'(u)).
    pub c_nl: f64,
    pub max_steps: usize,
    /// Geometric spacing of recorded amplitude levels.
    pub level_ratio: f64,
}

impl Default for BlowupRunOptions {
    fn default() -> Self {
        Self {
            stop_amp: 1e6,
            cfl: 0.5,
            c_nl: 0.05,
            max_steps: 50_000_000,
            level_ratio: 10f64.powf(0.125),
        }
    }
}

/// Integrate until the sup-norm reaches `stop_amp`, shrinking dt as the
/// nonlinearity stiffens, and estimate the blow-up time by fitting the
/// final decade of amplitudes against kappa_a psi_T with T free.
pub fn run_to_blowup(
    solver: &WaveSolver,
    state0: PhysicalState,
    opts: &BlowupRunOptions,
) -> Result<BlowupRecord, PhysError> {
    let params = *solver.params();
    let mut state = state0;
    let mut amp_series = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_level = state.sup_norm().max(1e-12) * opts.level_ratio;
    if !(opts.stop_amp > next_level) {
        return Err(PhysError::AmpOutOfRange {
            amp: opts.stop_amp,
        });
    }
    let mut reached_nonfinite = false;
    let mut steps = 0usize;
    loop {
        let sup = state.sup_norm();
        if sup >= opts.stop_amp {
            break;
        }
        if steps >= opts.max_steps {
            return Err(PhysError::NoBlowup(steps));
        }
        // Adaptive dt: CFL cap and nonlinear stiffness cap.
        let fp_max = state
            .u
            .iter()
            .fold(0.0f64, |m, &v| m.max(params.f_prime(v).abs()));
        let mut dt = (opts.cfl * solver.mesh.dx).min(opts.c_nl / fp_max.sqrt().max(1e-30));
        let mut next = solver.step_rk4(&state, dt);
        let mut retries = 0;
        while !next.is_finite() && retries < 60 {
            dt *= 0.5;
            next = solver.step_rk4(&state, dt);
            retries += 1;
        }
        if !next.is_finite() {
            // Blow-up signal: keep the last finite state.
            reached_nonfinite = true;
            break;
        }
        state = next;
        steps += 1;
        let sup = state.sup_norm();
        if sup >= next_level {
            amp_series.push(AmpSample {
                t: state.t,
                sup_norm: sup,
                dt,
            });
            snapshots.push(state.clone());
            while next_level <= sup {
                next_level *= opts.level_ratio;
            }
        }
    }
    if amp_series.len() < 3 {
        return Err(PhysError::NoBlowup(steps));
    }
    let (t_est, spread) = estimate_blowup_time(&amp_series, &params)?;
    let last = snapshots.last().expect("at least one snapshot");
    let x_star = last
        .u
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| solver.mesh.x(i))
        .unwrap_or(0.0);
    Ok(BlowupRecord {
        t_est,
        t_est_spread: spread,
        x_star,
        amp_series,
        snapshots,
        dx: solver.mesh.dx,
        reached_nonfinite,
    })
}

/// Invert A = kappa_a psi(tau) for tau by bisection in log tau.
pub fn invert_rate_for_gap(params: &ModelParams, amp: f64) -> Result<f64, PhysError> {
    let kappa = params.kappa_a();
    let target = amp / kappa;
    if !(target > 1.0) {
        return Err(PhysError::AmpOutOfRange { amp });
    }
    let ln_target = target.ln();
    let g = |ln_tau: f64| {
        let sigma = -ln_tau;
        -2.0 / (params.p - 1.0) * ln_tau - params.a / (params.p - 1.0) * sigma.ln() - ln_target
    };
    let (mut lo, mut hi) = (-745.0, -1.0001);
    if g(hi) > 0.0 || g(lo) < 0.0 {
        return Err(PhysError::AmpOutOfRange { amp });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

fn estimate_blowup_time(
    amp_series: &[AmpSample],
    params: &ModelParams,
) -> Result<(f64, f64), PhysError> {
    let top = amp_series.last().expect("non-empty").sup_norm;
    let tail: Vec<&AmpSample> = amp_series
        .iter()
        .filter(|s| s.sup_norm >= top / 10.0)
        .collect();
    let mut estimates = Vec::with_capacity(tail.len());
    for s in &tail {
        let tau = invert_rate_for_gap(params, s.sup_norm)?;
        estimates.push(s.t + tau);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let spread = estimates
        .iter()
        .fold(0.0f64, |m, &e| m.max((e - mean).abs()));
    Ok((mean, spread))
}

/// L2 norm of nodal values over the ball B(x0, radius), trapezoidal with
/// linearly interpolated partial end cells.
fn ball_l2(
    mesh: &PhysMesh,
    vals: &[f64],
    x0: f64,
    radius: f64,
) -> Result<f64, PhysError> {
    if radius < 4.0 * mesh.dx {
        return Err(PhysError::ConeResolution {
            radius,
            dx: mesh.dx,
        });
    }
    let sq = |v: f64| v * v;
    match mesh.geometry {
        PhysGeometry::Line => {
            let (xa, xb) = (x0 - radius, x0 + radius);
            let ia = ((xa - mesh.x_min) / mesh.dx).ceil() as usize;
            let ib = ((xb - mesh.x_min) / mesh.dx).floor() as usize;
            let mut acc = 0.0;
            for i in ia..ib {
                acc += 0.5 * (sq(vals[i]) + sq(vals[i + 1])) * mesh.dx;
            }
            // Partial cells: integrate the square of the linear interpolant.
            let partial = |xlo: f64, xhi: f64, i0: usize| -> f64 {
                if xhi <= xlo {
                    return 0.0;
                }
                let (v0, v1) = (vals[i0], vals[i0 + 1]);
                let slope = (v1 - v0) / mesh.dx;
                let f = |x: f64| {
                    let d = x - mesh.x(i0);
                    let v = v0 + slope * d;
                    // antiderivative of (v0 + slope d)^2 in d
                    if slope.abs() < 1e-300 {
                        v0 * v0 * d
                    } else {
                        v * v * v / (3.0 * slope)
                    }
                };
                f(xhi) - f(xlo)
            };
            if ia > 0 {
                acc += partial(xa, mesh.x(ia), ia - 1);
            }
            if ib + 1 < mesh.n {
                acc += partial(mesh.x(ib), xb, ib);
            }
            Ok(acc.max(0.0).sqrt())
        }
        PhysGeometry::Radial(nd) => {
            if x0 != 0.0 {
                return Err(PhysError::RadialOffCentre(x0));
            }
            let area = 2.0 * std::f64::consts::PI.powf(nd as f64 / 2.0) / gamma_half_pub(nd);
            let ib = (radius / mesh.dx).floor() as usize;
            let w = |r: f64| r.powi(nd as i32 - 1);
            let mut acc = 0.0;
            for i in 0..ib {
                let (ra, rb) = (mesh.x(i), mesh.x(i + 1));
                acc += 0.5 * (sq(vals[i]) * w(ra) + sq(vals[i + 1]) * w(rb)) * mesh.dx;
            }
            if ib + 1 < mesh.n {
                let ra = mesh.x(ib);
                let frac = radius - ra;
                let vr = vals[ib] + (vals[ib + 1] - vals[ib]) * frac / mesh.dx;
                acc += 0.5 * (sq(vals[ib]) * w(ra) + sq(vr) * w(radius)) * frac;
            }
            Ok((acc * area).max(0.0).sqrt())
        }
    }
}

/// The three rescaled light-cone norms:
/// n0 = ||u|| / ((T-t)^(N/2) psi), and n1, n2 the analogous quantities for
/// u_t and grad u with the extra factor (T-t).
pub fn cone_norms(
    mesh: &PhysMesh,
    params: &ModelParams,
    state: &PhysicalState,
    x0: f64,
    t_blowup: f64,
) -> Result<(f64, f64, f64), PhysError> {
    let tau = t_blowup - state.t;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(PhysError::ConeGap(tau));
    }
    if state.u.len() != mesh.n {
        return Err(PhysError::SizeMismatch {
            state: state.u.len(),
            mesh: mesh.n,
        });
    }
    let nd = match mesh.geometry {
        PhysGeometry::Line => 1,
        PhysGeometry::Radial(d) => d,
    };
    let psi = params.psi_gap(tau)?;
    let scale0 = tau.powf(nd as f64 / 2.0) * psi;
    // Spatial gradient by central differences.
    let n = mesh.n;
    let mut ux = vec![0.0; n];
    match mesh.geometry {
        PhysGeometry::Line => {
            for i in 0..n {
                ux[i] = (state.u[(i + 1) % n] - state.u[(i + n - 1) % n]) / (2.0 * mesh.dx);
            }
        }
        PhysGeometry::Radial(_) => {
            ux[0] = 0.0;
            for i in 1..n - 1 {
                ux[i] = (state.u[i + 1] - state.u[i - 1]) / (2.0 * mesh.dx);
            }
            ux[n - 1] = (state.u[n - 1] - state.u[n - 2]) / mesh.dx;
        }
    }
    let n0 = ball_l2(mesh, &state.u, x0, tau)? / scale0;
    let n1 = tau * ball_l2(mesh, &state.ut, x0, tau)? / scale0;
    let n2 = tau * ball_l2(mesh, &ux, x0, tau)? / scale0;
    Ok((n0, n1, n2))
}

/// Convenience constructors for the standard initial data families.
pub fn constant_data(mesh: &PhysMesh, c: f64, c_dot: f64) -> PhysicalState {
    PhysicalState {
        u: vec![c; mesh.n],
        ut: vec![c_dot; mesh.n],
        t: 0.0,
    }
}

pub fn gaussian_data(mesh: &PhysMesh, amp: f64, width: f64) -> PhysicalState {
    let u: Vec<f64> = (0..mesh.n)
        .map(|i| {
            let x = mesh.x(i);
            amp * (-(x * x) / (width * width)).exp()
        })
        .collect();
    PhysicalState {
        u,
        ut: vec![0.0; mesh.n],
        t: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nl(p: f64, a: f64, n: u32) -> Nonlinearity {
        Nonlinearity::new(ModelParams::new(p, a, n).unwrap()).unwrap()
    }

    #[test]
    fn zero_solution_stays_zero() {
        let nl = nl(3.0, 1.0, 1);
        let solver = WaveSolver::new(PhysMesh::line(1.0, 64), &nl);
        let mut state = constant_data(&solver.mesh, 0.0, 0.0);
        for _ in 0..100 {
            state = solver.step_rk4(&state, 0.5 * solver.mesh.dx);
        }
        assert!(state.u.iter().all(|&v| v == 0.0));
        assert!(state.ut.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_wave_rejects_large_dt() {
        let nl = nl(3.0, 0.0, 1);
        let solver = WaveSolver::new(PhysMesh::line(1.0, 64), &nl);
        let state = constant_data(&solver.mesh, 0.1, 0.0);
        let dt = solver.mesh.dx; // over the CFL=0.5 bound
        assert!(matches!(
            solver.step_wave(&state, dt, 0.5),
            Err(PhysError::CflViolation { .. })
        ));
    }

    #[test]
    fn exact_ode_compatible_data_blows_up_at_one() {
        // a=0, p=3, u0 = sqrt(2), u1 = sqrt(2): matches v(t) = sqrt(2)/(1-t).
        let nl = nl(3.0, 0.0, 1);
        let solver = WaveSolver::new(PhysMesh::line(1.0, 16), &nl);
        let state = PhysicalState {
            u: vec![2.0f64.sqrt(); 16],
            ut: vec![2.0f64.sqrt(); 16],
            t: 0.0,
        };
        let rec = run_to_blowup(
            &solver,
            state,
            &BlowupRunOptions {
                stop_amp: 1e8,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((rec.t_est - 1.0).abs() < 1e-4, "t_est = {}", rec.t_est);
        // amplitude series increases in t and in sup-norm
        assert!(rec.amp_series.windows(2).all(|w| w[1].t > w[0].t));
        assert!(rec
            .amp_series
            .windows(2)
            .all(|w| w[1].sup_norm > w[0].sup_norm));
    }

    #[test]
    fn leapfrog_conserves_discrete_energy() {
        // Smooth non-blow-up data, unit time, 1e-4 relative drift.
        let nl = nl(3.0, 1.0, 1);
        let mesh = PhysMesh::line(1.0, 256);
        let solver = WaveSolver::new(mesh, &nl);
        let u0: Vec<f64> = (0..256)
            .map(|i| 0.05 * (std::f64::consts::PI * solver.mesh.x(i)).sin())
            .collect();
        let dt = 0.25 * solver.mesh.dx;
        // Taylor start-up for u^1.
        let mut a = vec![0.0; 256];
        solver.accel(&u0, &mut a);
        let u1: Vec<f64> = (0..256).map(|i| u0[i] + 0.5 * dt * dt * a[i]).collect();
        let mut prev = u0.clone();
        let mut cur = u1;
        let steps = (1.0 / dt) as usize;
        let mut e0 = None;
        for step in 0..steps {
            let next = solver.step_leapfrog(&prev, &cur, dt);
            let ut: Vec<f64> = (0..256)
                .map(|i| (next[i] - prev[i]) / (2.0 * dt))
                .collect();
            let state = PhysicalState {
                u: cur.clone(),
                ut,
                t: (step + 1) as f64 * dt,
            };
            let e = solver.discrete_energy(&state);
            match e0 {
                None => e0 = Some(e),
                Some(e0) => {
                    assert!(
                        (e - e0).abs() <= 1e-4 * e0.abs().max(1e-3),
                        "energy drift {:.3e} at step {step}",
                        (e - e0).abs()
                    );
                }
            }
            prev = cur;
            cur = next;
        }
    }

    #[test]
    fn finite_speed_of_propagation() {
        // Perturbing the data outside a cone cannot affect its interior.
        let nl = nl(3.0, 1.0, 1);
        let mesh = PhysMesh::line(4.0, 1024);
        let solver = WaveSolver::new(mesh, &nl);
        let base = gaussian_data(&solver.mesh, 1.0, 0.5);
        let mut pert = base.clone();
        for i in 0..solver.mesh.n {
            let x = solver.mesh.x(i);
            if x.abs() > 1.5 {
                pert.u[i] += 0.5 * ((x.abs() - 1.5) * 3.0).tanh();
            }
        }
        let dt = 0.4 * solver.mesh.dx;
        let mut s1 = base;
        let mut s2 = pert;
        while s1.t < 1.0 {
            s1 = solver.step_rk4(&s1, dt);
            s2 = solver.step_rk4(&s2, dt);
        }
        // After t = 1 the perturbation front has reached |x| ~ 0.5; compare
        // well inside, with a buffer for the exponentially small lattice tail.
        for i in 0..solver.mesh.n {
            if solver.mesh.x(i).abs() < 0.3 {
                assert!(
                    (s1.u[i] - s2.u[i]).abs() < 1e-12,
                    "leak {:.3e} at x = {}",
                    (s1.u[i] - s2.u[i]).abs(),
                    solver.mesh.x(i)
                );
            }
        }
    }

    #[test]
    fn cone_norms_of_zero_state_are_zero() {
        let nl = nl(3.0, 0.0, 1);
        let mesh = PhysMesh::line(1.0, 256);
        let solver = WaveSolver::new(mesh, &nl);
        let state = constant_data(&solver.mesh, 0.0, 0.0);
        let (n0, n1, n2) = cone_norms(&solver.mesh, nl.params(), &state, 0.0, 0.5).unwrap();
        assert_eq!((n0, n1, n2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn cone_norms_constant_state_measure_factor() {
        // u = v const in space: n0 = sqrt(2) v / psi in 1-D.
        let pr = ModelParams::new(3.0, 0.0, 1).unwrap();
        let nl = Nonlinearity::new(pr).unwrap();
        let mesh = PhysMesh::line(1.0, 2048);
        let solver = WaveSolver::new(mesh, &nl);
        let v = 7.3;
        let mut state = constant_data(&solver.mesh, v, 0.0);
        state.t = 0.0;
        let tau = 0.25f64;
        let (n0, _n1, n2) = cone_norms(&solver.mesh, &pr, &state, 0.0, tau).unwrap();
        let psi = pr.psi_gap(tau).unwrap();
        assert_relative_eq!(n0, 2.0f64.sqrt() * v / psi, max_relative = 1e-10);
        assert!(n2.abs() < 1e-12);
    }

    #[test]
    fn cone_norms_reject_under_resolved_balls() {
        let nl = nl(3.0, 0.0, 1);
        let mesh = PhysMesh::line(1.0, 32);
        let solver = WaveSolver::new(mesh, &nl);
        let state = constant_data(&solver.mesh, 1.0, 0.0);
        assert!(matches!(
            cone_norms(&solver.mesh, nl.params(), &state, 0.0, state.t + 0.1),
            Err(PhysError::ConeResolution { .. })
        ));
    }
}
