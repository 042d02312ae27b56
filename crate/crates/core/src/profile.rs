//! Backward integration of the blow-up ODE v'' = f(v) from an asymptotic seed
//! v ~ kappa_a psi_T near the singularity, plus the ratio diagnostics against
//! the explicit rate kappa_a psi_T.

use crate::model::{ModelError, ModelParams};
use crate::ode::{integrate_adaptive, OdeError, Rk45Options};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("eps_init must lie in (0, 1), got {0}")]
    BadSeedGap(f64),
    #[error("t_start = {t_start} must be below the seed time T - eps_init = {seed_time}")]
    BadStartTime { t_start: f64, seed_time: f64 },
    #[error("trajectory leaves the psi_T domain: T - t = {0} >= 1")]
    RatioDomain(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub t: f64,
    pub v: f64,
    pub v_dot: f64,
}

/// A backward-integrated blow-up trajectory; samples are ordered by
/// increasing t and all lie strictly below the blow-up time.
#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub samples: Vec<TrajectorySample>,
    pub blowup_time: f64,
    pub params: ModelParams,
    /// Set when the integrator stopped early (step-size underflow); the
    /// recorded samples are still valid.
    pub truncated: bool,
}

/// Integrate v'' = f(v) backward from t = T - eps_init down to t_start,
/// seeding with the explicit equivalent v = kappa_a psi_T and its exact time
/// derivative (including the log factor).
pub fn solve_profile(
    params: &ModelParams,
    t_blowup: f64,
    t_start: f64,
    eps_init: f64,
    opts: &Rk45Options,
) -> Result<OdeTrajectory, ProfileError> {
    if !(eps_init > 0.0 && eps_init < 1.0) {
        return Err(ProfileError::BadSeedGap(eps_init));
    }
    if t_start >= t_blowup - eps_init {
        return Err(ProfileError::BadStartTime {
            t_start,
            seed_time: t_blowup - eps_init,
        });
    }
    let kappa = params.kappa_a();
    let v0 = kappa * params.psi_gap(eps_init)?;
    // State in the gap variable tau = T - t (d^2/dtau^2 = d^2/dt^2, so the
    // ODE is unchanged and the integration is a plain forward sweep in tau).
    let dv_dtau0 = kappa * params.psi_gap_dtau(eps_init)?;
    let tau_end = t_blowup - t_start;

    let p = *params;
    let mut samples = Vec::new();
    let result = integrate_adaptive(
        |_tau, y: &[f64; 2]| [y[1], p.f(y[0])],
        eps_init,
        tau_end,
        [v0, dv_dtau0],
        opts,
        |tau, y| {
            samples.push(TrajectorySample {
                t: t_blowup - tau,
                v: y[0],
                v_dot: -y[1],
            });
        },
    );
    let truncated = match result {
        Ok(_) => false,
        Err(OdeError::StepUnderflow { .. }) => true,
        Err(e) => return Err(ProfileError::Ode(e)),
    };
    samples.reverse();
    Ok(OdeTrajectory {
        samples,
        blowup_time: t_blowup,
        params: p,
        truncated,
    })
}

/// ratio(t) = v(t) / (kappa_a psi_T(t)) along a trajectory.
pub fn profile_ratio(traj: &OdeTrajectory) -> Result<Vec<(f64, f64)>, ProfileError> {
    let kappa = traj.params.kappa_a();
    let mut out = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let tau = traj.blowup_time - s.t;
        if tau >= 1.0 {
            return Err(ProfileError::RatioDomain(tau));
        }
        out.push((s.t, s.v / (kappa * traj.params.psi_gap(tau)?)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct GapSample {
    pub tau: f64,
    pub v: f64,
    pub v_dot: f64,
    pub ratio: f64,
}

/// Integrate backward and report (v, ratio) at the exact requested gaps
/// tau = T - t. Gaps must exceed the seed gap.
pub fn values_at_gaps(
    params: &ModelParams,
    eps_init: f64,
    gaps: &[f64],
    opts: &Rk45Options,
) -> Result<Vec<GapSample>, ProfileError> {
    if !(eps_init > 0.0 && eps_init < 1.0) {
        return Err(ProfileError::BadSeedGap(eps_init));
    }
    let kappa = params.kappa_a();
    let mut targets: Vec<f64> = gaps.to_vec();
    targets.sort_by(f64::total_cmp);
    let p = *params;
    let mut y = [
        kappa * params.psi_gap(eps_init)?,
        kappa * params.psi_gap_dtau(eps_init)?,
    ];
    let mut tau = eps_init;
    let mut out = Vec::with_capacity(targets.len());
    for &target in &targets {
        if target <= eps_init {
            return Err(ProfileError::BadSeedGap(target));
        }
        y = integrate_adaptive(
            |_tau, y: &[f64; 2]| [y[1], p.f(y[0])],
            tau,
            target,
            y,
            opts,
            |_, _| {},
        )?;
        tau = target;
        out.push(GapSample {
            tau,
            v: y[0],
            v_dot: -y[1],
            ratio: y[0] / (kappa * params.psi_gap(tau)?),
        });
    }
    Ok(out)
}
