//! The nonlinearity family f(u) = |u|^(p-1) u log^a(2+u^2), its antiderivative
//! F and the split pieces F1/F2, the rate function psi_T, the similarity-frame
//! coefficients phi(s), gamma(s), and the ODE amplitude kappa_a.
//!
//! Everything downstream (ODE profile, physical solver, self-similar solver,
//! functionals) evaluates the model exclusively through this module.

use crate::quad::{adaptive_gk, QuadError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("p must satisfy p > 1, got {0}")]
    ExponentTooSmall(f64),
    #[error("subconformal constraint violated: p = {p} but p < 1 + 4/(N-1) = {p_c} is required for N = {n}")]
    NotSubconformal { p: f64, p_c: f64, n: u32 },
    #[error("space dimension must be >= 1, got {0}")]
    BadDimension(u32),
    #[error("parameter {name} must be finite, got {value}")]
    NotFinite { name: &'static str, value: f64 },
    #[error("{name} must be strictly positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("psi_T requires 0 < T - t < 1, got T - t = {0}")]
    PsiDomain(f64),
    #[error("phi(s) and gamma(s) require s > 0, got s = {0}")]
    SDomain(f64),
    #[error("evaluation overflows the floating range at u = {0:.6e}")]
    RangeOverflow(f64),
    #[error("antiderivative table failed verification: max interpolation error {0:.3e}")]
    TableAccuracy(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("u grid must be positive, strictly increasing and span at least {need} decades (got {got:.2})")]
    GridSpan { need: f64, got: f64 },
}

/// The model triple (p, a, N) with the derived weight exponent alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub p: f64,
    pub a: f64,
    pub n: u32,
}

impl ModelParams {
    pub fn new(p: f64, a: f64, n: u32) -> Result<Self, ModelError> {
        if !p.is_finite() {
            return Err(ModelError::NotFinite {
                name: "p",
                value: p,
            });
        }
        if !a.is_finite() {
            return Err(ModelError::NotFinite {
                name: "a",
                value: a,
            });
        }
        if n == 0 {
            return Err(ModelError::BadDimension(n));
        }
        if p <= 1.0 {
            return Err(ModelError::ExponentTooSmall(p));
        }
        let params = Self { p, a, n };
        if n >= 2 && p >= params.p_conformal() {
            return Err(ModelError::NotSubconformal {
                p,
                p_c: params.p_conformal(),
                n,
            });
        }
        debug_assert!(params.alpha() > 0.0);
        Ok(params)
    }

    /// Conformal exponent 1 + 4/(N-1); infinite in one space dimension.
    pub fn p_conformal(&self) -> f64 {
        if self.n == 1 {
            f64::INFINITY
        } else {
            1.0 + 4.0 / (self.n as f64 - 1.0)
        }
    }

    /// Weight exponent alpha = 2/(p-1) - (N-1)/2 of rho(y) = (1-|y|^2)^alpha.
    pub fn alpha(&self) -> f64 {
        2.0 / (self.p - 1.0) - (self.n as f64 - 1.0) / 2.0
    }

    /// ODE amplitude kappa_a = (2^(1-2a)(p+1)/(p-1)^(2-a))^(1/(p-1)).
    pub fn kappa_a(&self) -> f64 {
        let ln_k = ((1.0 - 2.0 * self.a) * std::f64::consts::LN_2 + (self.p + 1.0).ln()
            - (2.0 - self.a) * (self.p - 1.0).ln())
            / (self.p - 1.0);
        ln_k.exp()
    }

    /// The nonlinearity f(u) = |u|^(p-1) u log^a(2+u^2).
    pub fn f(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let au = u.abs();
        au.powf(self.p - 1.0) * u * (2.0 + u * u).ln().powf(self.a)
    }

    /// f with the floating-range error surfaced.
    pub fn f_checked(&self, u: f64) -> Result<f64, ModelError> {
        if !u.is_finite() {
            return Err(ModelError::RangeOverflow(u));
        }
        let v = self.f(u);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::RangeOverflow(u))
        }
    }

    /// f'(u), used for nonlinear time-step control.
    pub fn f_prime(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let au = u.abs();
        let l = (2.0 + u * u).ln();
        au.powf(self.p - 1.0)
            * (self.p * l.powf(self.a) + 2.0 * self.a * u * u * l.powf(self.a - 1.0) / (2.0 + u * u))
    }

    /// F1(x) = -2a/(p+1)^2 |x|^(p+1) log^(a-1)(2+x^2); identically 0 when a = 0.
    pub fn f1(&self, u: f64) -> f64 {
        if self.a == 0.0 || u == 0.0 {
            return 0.0;
        }
        let l = (2.0 + u * u).ln();
        -2.0 * self.a / ((self.p + 1.0) * (self.p + 1.0))
            * u.abs().powf(self.p + 1.0)
            * l.powf(self.a - 1.0)
    }

    /// psi_T as a function of the gap tau = T - t; requires 0 < tau < 1.
    pub fn psi_gap(&self, tau: f64) -> Result<f64, ModelError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(ModelError::PsiDomain(tau));
        }
        let sigma = -tau.ln();
        Ok(tau.powf(-2.0 / (self.p - 1.0)) * sigma.powf(-self.a / (self.p - 1.0)))
    }

    /// psi_T(t) = (T-t)^(-2/(p-1)) (-log(T-t))^(-a/(p-1)).
    pub fn psi(&self, t: f64, t_blowup: f64) -> Result<f64, ModelError> {
        self.psi_gap(t_blowup - t)
    }

    /// d/dtau of psi_gap, used to seed the ODE profile analytically.
    pub fn psi_gap_dtau(&self, tau: f64) -> Result<f64, ModelError> {
        let psi = self.psi_gap(tau)?;
        let sigma = -tau.ln();
        let b = 2.0 / (self.p - 1.0);
        let beta = self.a / (self.p - 1.0);
        Ok(-(psi / tau) * (b - beta / sigma))
    }

    /// Logarithmic time-derivative factor of psi along s = -log(T-t):
    /// (d/dt psi)/psi * e^(-s) = 2/(p-1) + a/((p-1) s).
    pub fn psi_log_slope(&self, s: f64) -> f64 {
        2.0 / (self.p - 1.0) + self.a / ((self.p - 1.0) * s)
    }

    /// phi(s) = e^(2s/(p-1)) s^(-a/(p-1)); requires s > 0.
    pub fn phi(&self, s: f64) -> Result<f64, ModelError> {
        Ok(self.ln_phi(s)?.exp())
    }

    pub fn ln_phi(&self, s: f64) -> Result<f64, ModelError> {
        if s <= 0.0 {
            return Err(ModelError::SDomain(s));
        }
        Ok(2.0 * s / (self.p - 1.0) - self.a / (self.p - 1.0) * s.ln())
    }

    /// gamma(s) = a(p+5)/((p-1)^2 s) - a(p+a-1)/((p-1)^2 s^2); 0 when a = 0.
    pub fn gamma_coeff(&self, s: f64) -> Result<f64, ModelError> {
        if s <= 0.0 {
            return Err(ModelError::SDomain(s));
        }
        let pm1sq = (self.p - 1.0) * (self.p - 1.0);
        Ok(self.a * (self.p + 5.0) / (pm1sq * s) - self.a * (self.p + self.a - 1.0) / (pm1sq * s * s))
    }
}

/// Derived constants echoed into every report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivedConstants {
    pub alpha: f64,
    pub kappa_a: f64,
    pub p_c: f64,
    /// Lyapunov offset weight ("sufficiently large" in the analysis; config-supplied).
    pub theta: f64,
    /// H functional weight ("sufficiently large"; config-supplied).
    pub m0: f64,
}

impl DerivedConstants {
    pub const DEFAULT_THETA: f64 = 100.0;
    pub const DEFAULT_M0: f64 = 10.0;

    pub fn new(params: &ModelParams, theta: f64, m0: f64) -> Result<Self, ModelError> {
        if !(theta > 0.0) {
            return Err(ModelError::NotPositive {
                name: "theta",
                value: theta,
            });
        }
        if !(m0 > 0.0) {
            return Err(ModelError::NotPositive {
                name: "m0",
                value: m0,
            });
        }
        Ok(Self {
            alpha: params.alpha(),
            kappa_a: params.kappa_a(),
            p_c: params.p_conformal(),
            theta,
            m0,
        })
    }

    pub fn with_defaults(params: &ModelParams) -> Self {
        Self::new(params, Self::DEFAULT_THETA, Self::DEFAULT_M0).expect("defaults are positive")
    }
}

/// log(2 + e^z) without overflow for any z.
pub fn ln_2_plus_exp(z: f64) -> f64 {
    if z > 40.0 {
        z + (2.0 * (-z).exp()).ln_1p()
    } else if z < -40.0 {
        std::f64::consts::LN_2 + (0.5 * z.exp()).ln_1p()
    } else {
        (2.0 + z.exp()).ln()
    }
}

const XI_MIN: f64 = -14.0;
const XI_MAX: f64 = 300.0;

/// Log-spaced table of the correction ratio r(u) = F(u)(p+1)/(u f(u)),
/// indexed by xi = ln u. r is smooth, slowly varying, tends to 1 at both
/// ends of the range, and turns every F evaluation into one table lookup.
#[derive(Debug, Clone)]
struct RatioTable {
    h: f64,
    values: Vec<f64>,
}

impl RatioTable {
    fn build(params: &ModelParams) -> Result<(Self, f64), ModelError> {
        let mut h = 0.02;
        let mut last_err = f64::INFINITY;
        for _attempt in 0..3 {
            let table = Self::build_with_step(params, h)?;
            let err = table.verify(params)?;
            if err <= 1e-11 {
                return Ok((table, err));
            }
            last_err = err;
            h *= 0.5;
        }
        Err(ModelError::TableAccuracy(last_err))
    }

    /// Cumulative construction in overflow-safe scaled form:
    /// S(xi) = F(e^xi) e^(-(p+1) xi) obeys
    /// S(xi+h) = S(xi) e^(-(p+1)h) + int_{e^-h}^1 eta^p log^a(2 + e^(2(xi+h)) eta^2) d eta.
    fn build_with_step(params: &ModelParams, h: f64) -> Result<Self, ModelError> {
        let p = params.p;
        let a = params.a;
        let n_nodes = ((XI_MAX - XI_MIN) / h).round() as usize + 1;
        let decay = (-(p + 1.0) * h).exp();
        let seg = |xi: f64, eta_lo: f64| -> Result<f64, ModelError> {
            let integrand =
                |eta: f64| eta.powf(p) * ln_2_plus_exp(2.0 * (xi + eta.ln())).powf(a);
            Ok(adaptive_gk(&integrand, eta_lo, 1.0, 1e-13, 1e-300)?.value)
        };
        let mut values = Vec::with_capacity(n_nodes);
        let mut s = seg(XI_MIN, 0.0)?;
        values.push(Self::ratio_from_scaled(params, XI_MIN, s));
        for k in 1..n_nodes {
            let xi = XI_MIN + h * k as f64;
            s = s * decay + seg(xi, (-h).exp())?;
            values.push(Self::ratio_from_scaled(params, xi, s));
        }
        Ok(Self { h, values })
    }

    fn ratio_from_scaled(params: &ModelParams, xi: f64, s: f64) -> f64 {
        // r = S (p+1) / log^a(2 + e^(2 xi))
        s * (params.p + 1.0) / ln_2_plus_exp(2.0 * xi).powf(params.a)
    }

    /// Spot-check cubic interpolation at panel midpoints against directly
    /// integrated values; returns the worst relative error seen.
    fn verify(&self, params: &ModelParams) -> Result<f64, ModelError> {
        let p = params.p;
        let a = params.a;
        let mut worst = 0.0f64;
        // Rebuild the running scaled antiderivative, checking midpoints of
        // every 41st panel.
        let decay_half = (-(p + 1.0) * self.h * 0.5).exp();
        let seg = |xi: f64, eta_lo: f64| -> Result<f64, ModelError> {
            let integrand =
                |eta: f64| eta.powf(p) * ln_2_plus_exp(2.0 * (xi + eta.ln())).powf(a);
            Ok(adaptive_gk(&integrand, eta_lo, 1.0, 1e-13, 1e-300)?.value)
        };
        let mut s = seg(XI_MIN, 0.0)?;
        let half_step = (-self.h * 0.5).exp();
        for k in 0..self.values.len() - 1 {
            let xi = XI_MIN + self.h * k as f64;
            if k % 41 == 0 {
                let xi_mid = xi + 0.5 * self.h;
                let s_mid = s * decay_half + seg(xi_mid, half_step)?;
                let direct = Self::ratio_from_scaled(params, xi_mid, s_mid);
                let interp = self.eval(xi_mid);
                worst = worst.max(((interp - direct) / direct).abs());
            }
            s = s * decay_half * decay_half + seg(xi + self.h, half_step * half_step)?;
        }
        Ok(worst)
    }

    /// Cubic Lagrange interpolation on the uniform xi grid.
    fn eval(&self, xi: f64) -> f64 {
        let m = self.values.len();
        let pos = (xi - XI_MIN) / self.h;
        let i = (pos.floor() as isize).clamp(1, m as isize - 3) as usize;
        let t = pos - i as f64; // in [0,1] away from the clamped ends
        let (ym1, y0, y1, y2) = (
            self.values[i - 1],
            self.values[i],
            self.values[i + 1],
            self.values[i + 2],
        );
        // Lagrange basis at nodes -1, 0, 1, 2.
        let lm1 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let l0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let l1 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let l2 = (t + 1.0) * t * (t - 1.0) / 6.0;
        ym1 * lm1 + y0 * l0 + y1 * l1 + y2 * l2
    }
}

/// Evaluator bundling the model parameters with the antiderivative table.
///
/// Construction performs the single-threaded warm-up; afterwards the value is
/// immutable and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    params: ModelParams,
    table: Option<RatioTable>,
    /// Worst verified interpolation error of the table (0 for a = 0).
    pub table_error: f64,
}

impl Nonlinearity {
    pub fn new(params: ModelParams) -> Result<Self, ModelError> {
        if params.a == 0.0 {
            return Ok(Self {
                params,
                table: None,
                table_error: 0.0,
            });
        }
        let (table, err) = RatioTable::build(&params)?;
        Ok(Self {
            params,
            table: Some(table),
            table_error: err,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Correction ratio r(u) = F(u)(p+1)/(u f(u)) at xi = ln u.
    fn ratio_at_ln(&self, xi: f64) -> f64 {
        let table = match &self.table {
            None => return 1.0,
            Some(t) => t,
        };
        let (p, a) = (self.params.p, self.params.a);
        if xi < XI_MIN {
            // Small-u closed form: F ~ log^a(2) u^(p+1)/(p+1).
            (std::f64::consts::LN_2 / ln_2_plus_exp(2.0 * xi)).powf(a)
        } else if xi > XI_MAX {
            let l = ln_2_plus_exp(2.0 * xi);
            1.0 - 2.0 * a / ((p + 1.0) * l) + 4.0 * a * (a - 1.0) / ((p + 1.0) * (p + 1.0) * l * l)
        } else {
            table.eval(xi)
        }
    }

    /// F(u) = int_0^u f(v) dv.
    pub fn potential(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let x = u.abs();
        if self.params.a == 0.0 {
            return x.powf(self.params.p + 1.0) / (self.params.p + 1.0);
        }
        let r = self.ratio_at_ln(x.ln());
        r * x * self.params.f(x) / (self.params.p + 1.0)
    }

    pub fn potential_checked(&self, u: f64) -> Result<f64, ModelError> {
        if !u.is_finite() {
            return Err(ModelError::RangeOverflow(u));
        }
        let v = self.potential(u);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::RangeOverflow(u))
        }
    }

    /// F2(u) = F(u) - u f(u)/(p+1) - F1(u), computed from its own
    /// cancellation-free integral representation
    /// F2(u) = int_0^|u| [ 4a/(p+1) v^p L^(a-1) + 4a(a-1)/(p+1)^2 v^(p+2) L^(a-2) ] / (2+v^2) dv.
    pub fn f2(&self, u: f64) -> Result<f64, ModelError> {
        let (p, a) = (self.params.p, self.params.a);
        if a == 0.0 || u == 0.0 {
            return Ok(0.0);
        }
        let x = u.abs();
        let c1 = 4.0 * a / (p + 1.0);
        let c2 = 4.0 * a * (a - 1.0) / ((p + 1.0) * (p + 1.0));
        let integrand = |v: f64| {
            if v == 0.0 {
                return 0.0;
            }
            let l = (2.0 + v * v).ln();
            let vp = v.powf(p);
            (c1 * vp * l.powf(a - 1.0) + c2 * vp * v * v * l.powf(a - 2.0)) / (2.0 + v * v)
        };
        let r = adaptive_gk(&integrand, 0.0, x, 1e-11, 1e-300)?;
        if r.value.is_finite() {
            Ok(r.value)
        } else {
            Err(ModelError::RangeOverflow(u))
        }
    }

    /// log(2 + phi(s)^2 w^2) without forming phi explicitly.
    pub fn log_2_plus_phi2w2(&self, w: f64, s: f64) -> f64 {
        if w == 0.0 {
            return std::f64::consts::LN_2;
        }
        let ln_phi = self
            .params
            .ln_phi(s)
            .expect("s > 0 enforced by the caller");
        ln_2_plus_exp(2.0 * (ln_phi + w.abs().ln()))
    }

    /// e^(-2ps/(p-1)) s^(a/(p-1)) f(phi(s) w), via the exact identity
    /// = s^(-a) |w|^(p-1) w log^a(2 + phi^2 w^2). Never overflows for
    /// moderate w.
    pub fn scaled_source(&self, w: f64, s: f64) -> f64 {
        if w == 0.0 {
            return 0.0;
        }
        let (p, a) = (self.params.p, self.params.a);
        let l = self.log_2_plus_phi2w2(w, s);
        s.powf(-a) * w.abs().powf(p - 1.0) * w * l.powf(a)
    }

    /// e^(-2(p+1)s/(p-1)) s^(2a/(p-1)) F(phi(s) w)
    /// = r(phi |w|) s^(-a) |w|^(p+1) log^a(2 + phi^2 w^2) / (p+1).
    pub fn scaled_potential(&self, w: f64, s: f64) -> f64 {
        if w == 0.0 {
            return 0.0;
        }
        let (p, a) = (self.params.p, self.params.a);
        let ln_phi = self
            .params
            .ln_phi(s)
            .expect("s > 0 enforced by the caller");
        let xi = ln_phi + w.abs().ln();
        let l = ln_2_plus_exp(2.0 * xi);
        let r = self.ratio_at_ln(xi);
        r * s.powf(-a) * w.abs().powf(p + 1.0) * l.powf(a) / (p + 1.0)
    }

    /// s^(-a) |w|^(p+1) log^a(2 + phi^2 w^2): the integrand of the
    /// log-weighted p+1 norm.
    pub fn log_weighted_power(&self, w: f64, s: f64) -> f64 {
        if w == 0.0 {
            return 0.0;
        }
        let (p, a) = (self.params.p, self.params.a);
        let l = self.log_2_plus_phi2w2(w, s);
        s.powf(-a) * w.abs().powf(p + 1.0) * l.powf(a)
    }

    /// e^(-2ps/(p-1)) s^(a/(p-1)) |f(phi(s) z)| in stable form.
    pub fn scaled_source_abs(&self, z: f64, s: f64) -> f64 {
        self.scaled_source(z, s).abs()
    }

    /// Precompute the s-dependent pieces of the scaled source term for a
    /// whole right-hand-side sweep.
    pub fn source_coeffs(&self, s: f64) -> SourceCoeffs {
        SourceCoeffs {
            ln_phi: self.params.ln_phi(s).expect("s > 0 enforced by the caller"),
            s_neg_a: s.powf(-self.params.a),
            p: self.params.p,
            a: self.params.a,
        }
    }
}

/// s-frozen coefficients of the scaled source e^(-2ps/(p-1)) s^(a/(p-1)) f(phi w).
#[derive(Debug, Clone, Copy)]
pub struct SourceCoeffs {
    ln_phi: f64,
    s_neg_a: f64,
    p: f64,
    a: f64,
}

impl SourceCoeffs {
    #[inline]
    pub fn eval(&self, w: f64) -> f64 {
        if w == 0.0 {
            return 0.0;
        }
        let aw = w.abs();
        let l = ln_2_plus_exp(2.0 * (self.ln_phi + aw.ln()));
        self.s_neg_a * aw.powf(self.p - 1.0) * w * l.powf(self.a)
    }
}

/// One row of the appendix asymptotics report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AsymptoticsRow {
    pub u: f64,
    /// r1(u) = F(u)(p+1)/(u f(u)); tends to 1.
    pub r1: f64,
    /// r2(u) = F2(u) log^2(2+u^2)/(u f(u)); tends to a finite limit.
    pub r2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticsReport {
    pub rows: Vec<AsymptoticsRow>,
    /// |r1 - 1| non-increasing over the last half of the grid.
    pub r1_tail_monotone: bool,
}

/// Evaluate the ratio sequences of the appendix lemma on a grid spanning at
/// least six decades.
pub fn check_appendix_asymptotics(
    nl: &Nonlinearity,
    u_grid: &[f64],
) -> Result<AsymptoticsReport, ModelError> {
    let ok_grid = u_grid.len() >= 2
        && u_grid.iter().all(|&u| u > 0.0 && u.is_finite())
        && u_grid.windows(2).all(|w| w[1] > w[0]);
    let span = if ok_grid {
        (u_grid[u_grid.len() - 1] / u_grid[0]).log10()
    } else {
        0.0
    };
    if !ok_grid || span < 6.0 {
        return Err(ModelError::GridSpan {
            need: 6.0,
            got: span,
        });
    }
    let params = *nl.params();
    let mut rows = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        let uf = u * params.f(u);
        let l = (2.0 + u * u).ln();
        let r1 = nl.potential_checked(u)? * (params.p + 1.0) / uf;
        let r2 = nl.f2(u)? * l * l / uf;
        rows.push(AsymptoticsRow { u, r1, r2 });
    }
    let tail = &rows[rows.len() / 2..];
    let r1_tail_monotone = tail
        .windows(2)
        .all(|w| (w[1].r1 - 1.0).abs() <= (w[0].r1 - 1.0).abs() * (1.0 + 1e-9));
    Ok(AsymptoticsReport {
        rows,
        r1_tail_monotone,
    })
}

/// Empirical constants for the sandwich bounds relating F and u f(u).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SandwichConstants {
    /// sup of phi z f(phi z) / (1 + F(phi z)).
    pub c_lower: f64,
    /// sup of F(phi z) / (1 + phi z f(phi z)).
    pub c_upper: f64,
}

pub fn empirical_sandwich_constants(
    nl: &Nonlinearity,
    n_s: usize,
    n_z: usize,
) -> SandwichConstants {
    let params = *nl.params();
    let (p, a) = (params.p, params.a);
    let mut c_lower = 0.0f64;
    let mut c_upper = 0.0f64;
    for i in 0..n_s {
        let s = 1.0 + 49.0 * i as f64 / (n_s - 1) as f64;
        let ln_phi = params.ln_phi(s).expect("s >= 1");
        for j in 0..n_z {
            let z = -10.0 + 20.0 * j as f64 / (n_z - 1) as f64;
            if z == 0.0 {
                continue;
            }
            // ln(u f(u)) at u = phi z; u f(u) = |u|^(p+1) log^a(2+u^2) >= 0.
            let xi = ln_phi + z.abs().ln();
            let l = ln_2_plus_exp(2.0 * xi);
            let ln_uf = (p + 1.0) * xi + a * l.ln();
            let r = nl.ratio_at_ln(xi);
            if ln_uf > 700.0 {
                // Both u f and F are astronomically large; the ratios have
                // exact finite limits.
                c_lower = c_lower.max((p + 1.0) / r);
                c_upper = c_upper.max(r / (p + 1.0));
            } else {
                let uf = ln_uf.exp();
                let big_f = r * uf / (p + 1.0);
                c_lower = c_lower.max(uf / (1.0 + big_f));
                c_upper = c_upper.max(big_f / (1.0 + uf));
            }
        }
    }
    SandwichConstants { c_lower, c_upper }
}

/// Empirical constants for the one-sided epsilon-power bounds on the scaled
/// nonlinearity and its antiderivative.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerBoundConstants {
    pub eps: f64,
    /// sup scaled |f| / (1 + |z|^(p+eps)).
    pub c_f_upper: f64,
    /// sup |z|^(p-eps) / (1 + scaled |f|).
    pub c_f_lower: f64,
    /// sup scaled F / (1 + |z|^(p+1+eps)).
    pub c_big_f_upper: f64,
    /// sup |z|^(p+1-eps) / (1 + scaled F).
    pub c_big_f_lower: f64,
}

pub fn empirical_power_constants(
    nl: &Nonlinearity,
    eps: f64,
    n_s: usize,
    n_z: usize,
) -> PowerBoundConstants {
    let p = nl.params().p;
    let mut out = PowerBoundConstants {
        eps,
        c_f_upper: 0.0,
        c_f_lower: 0.0,
        c_big_f_upper: 0.0,
        c_big_f_lower: 0.0,
    };
    for i in 0..n_s {
        let s = 1.0 + 49.0 * i as f64 / (n_s - 1) as f64;
        for j in 0..n_z {
            let z = -10.0 + 20.0 * j as f64 / (n_z - 1) as f64;
            let az = z.abs();
            let sf = nl.scaled_source_abs(z, s);
            let sbf = nl.scaled_potential(z, s);
            out.c_f_upper = out.c_f_upper.max(sf / (1.0 + az.powf(p + eps)));
            out.c_f_lower = out.c_f_lower.max(az.powf(p - eps) / (1.0 + sf));
            out.c_big_f_upper = out.c_big_f_upper.max(sbf / (1.0 + az.powf(p + 1.0 + eps)));
            out.c_big_f_lower = out
                .c_big_f_lower
                .max(az.powf(p + 1.0 - eps) / (1.0 + sbf));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(p: f64, a: f64, n: u32) -> ModelParams {
        ModelParams::new(p, a, n).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ModelParams::new(1.0, 0.0, 1).is_err());
        assert!(ModelParams::new(0.5, 1.0, 1).is_err());
        // p_c = 3 for N = 3; p = 3 is not subconformal there.
        assert!(ModelParams::new(3.0, 0.0, 3).is_err());
        assert!(ModelParams::new(2.9, 0.0, 3).is_ok());
        assert!(ModelParams::new(3.0, 0.0, 0).is_err());
    }

    #[test]
    fn f_matches_direct_substitution() {
        // f(0) = 0 for any parameters
        assert_eq!(params(3.0, 1.0, 1).f(0.0), 0.0);
        // f(1) with p=3, a=1 is log 3
        assert_relative_eq!(
            params(3.0, 1.0, 1).f(1.0),
            3.0f64.ln(),
            max_relative = 1e-15
        );
        // a=0 reduces to the pure power
        assert_relative_eq!(params(3.0, 0.0, 1).f(2.0), 8.0, max_relative = 1e-15);
    }

    #[test]
    fn f_is_odd() {
        let pr = params(2.5, -0.7, 2);
        for &u in &[0.3, 1.7, 42.0, 1e4] {
            assert_eq!(pr.f(-u), -pr.f(u));
        }
    }

    #[test]
    fn f_overflow_signals_range_error() {
        let pr = params(3.0, 1.0, 1);
        assert!(matches!(
            pr.f_checked(1e300),
            Err(ModelError::RangeOverflow(_))
        ));
        assert!(pr.f_checked(1e10).is_ok());
    }

    #[test]
    fn f1_direct_substitution() {
        // F1(1) with p=3, a=1: -(2/16) log^0(3) = -0.125
        assert_relative_eq!(params(3.0, 1.0, 1).f1(1.0), -0.125, max_relative = 1e-15);
        // factor a kills it
        assert_eq!(params(3.0, 0.0, 1).f1(5.0), 0.0);
        // even
        let pr = params(2.2, 1.3, 1);
        assert_eq!(pr.f1(-3.0), pr.f1(3.0));
    }

    #[test]
    fn psi_direct_substitution() {
        let e = std::f64::consts::E;
        // T - t = e^-1, p = 3, any a: psi = e
        assert_relative_eq!(
            params(3.0, 2.0, 1).psi_gap(1.0 / e).unwrap(),
            e,
            max_relative = 1e-14
        );
        // p = 2, a = 0: psi = e^2
        assert_relative_eq!(
            params(2.0, 0.0, 1).psi_gap(1.0 / e).unwrap(),
            e * e,
            max_relative = 1e-14
        );
        // ratio at gaps e^-4 vs e^-1 for p=3, a=2: e^3 / 4
        let pr = params(3.0, 2.0, 1);
        let ratio = pr.psi_gap((-4.0f64).exp()).unwrap() / pr.psi_gap((-1.0f64).exp()).unwrap();
        assert_relative_eq!(ratio, e.powi(3) / 4.0, max_relative = 1e-13);
    }

    #[test]
    fn psi_domain_errors() {
        let pr = params(3.0, 1.0, 1);
        assert!(matches!(pr.psi_gap(1.0), Err(ModelError::PsiDomain(_))));
        assert!(matches!(pr.psi_gap(0.0), Err(ModelError::PsiDomain(_))));
        assert!(matches!(pr.psi_gap(-0.5), Err(ModelError::PsiDomain(_))));
        assert!(pr.psi_gap(0.999).is_ok());
    }

    #[test]
    fn phi_direct_substitution() {
        let e = std::f64::consts::E;
        assert_relative_eq!(params(3.0, 5.0, 1).phi(1.0).unwrap(), e, max_relative = 1e-14);
        assert_relative_eq!(
            params(2.0, 0.0, 1).phi(1.0).unwrap(),
            e * e,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            params(3.0, 2.0, 1).phi(4.0).unwrap(),
            e.powi(4) / 4.0,
            max_relative = 1e-13
        );
        assert!(params(3.0, 1.0, 1).phi(0.0).is_err());
    }

    #[test]
    fn gamma_direct_substitution() {
        assert_relative_eq!(
            params(3.0, 1.0, 1).gamma_coeff(1.0).unwrap(),
            1.25,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            params(3.0, 1.0, 1).gamma_coeff(2.0).unwrap(),
            0.8125,
            max_relative = 1e-15
        );
        assert_eq!(params(3.0, 0.0, 1).gamma_coeff(7.3).unwrap(), 0.0);
        assert!(params(3.0, 1.0, 1).gamma_coeff(-1.0).is_err());
    }

    #[test]
    fn kappa_direct_substitution() {
        assert_relative_eq!(
            params(3.0, 0.0, 1).kappa_a(),
            2.0f64.sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(params(2.0, 0.0, 1).kappa_a(), 6.0, max_relative = 1e-14);
        assert_relative_eq!(params(3.0, 1.0, 1).kappa_a(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn potential_closed_form_when_a_is_zero() {
        let nl = Nonlinearity::new(params(3.0, 0.0, 1)).unwrap();
        for &u in &[0.0, 0.5, -2.0, 17.0] {
            assert_relative_eq!(
                nl.potential(u),
                u.abs().powi(4) / 4.0,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn potential_is_even_and_zero_at_origin() {
        let nl = Nonlinearity::new(params(3.0, 1.0, 1)).unwrap();
        assert_eq!(nl.potential(0.0), 0.0);
        for &u in &[0.3, 2.0, 1e5] {
            assert_relative_eq!(nl.potential(-u), nl.potential(u), max_relative = 1e-13);
        }
    }

    #[test]
    fn potential_derivative_matches_f() {
        // centered difference of F reproduces f to 1e-6 relative on [0.1, 100]
        for (p, a) in [(3.0, 1.0), (2.0, -1.0), (2.5, 0.5)] {
            let pr = params(p, a, 1);
            let nl = Nonlinearity::new(pr).unwrap();
            let mut u = 0.1;
            while u <= 100.0 {
                let h = 1e-4 * u;
                let fd = (nl.potential(u + h) - nl.potential(u - h)) / (2.0 * h);
                assert_relative_eq!(fd, pr.f(u), max_relative = 1e-6);
                u *= 3.7;
            }
        }
    }

    #[test]
    fn f2_vanishes_when_a_is_zero() {
        let nl = Nonlinearity::new(params(3.0, 0.0, 1)).unwrap();
        assert_eq!(nl.f2(12.3).unwrap(), 0.0);
        assert_eq!(nl.f2(0.0).unwrap(), 0.0);
    }

    #[test]
    fn scaled_source_matches_unscaled_at_moderate_s() {
        // e^(-2ps/(p-1)) s^(a/(p-1)) f(phi w) computed both ways
        let pr = params(3.0, 1.0, 1);
        let nl = Nonlinearity::new(pr).unwrap();
        let s = 3.0;
        let phi = pr.phi(s).unwrap();
        for &w in &[0.4, -1.2, 2.0] {
            let direct =
                (-2.0 * pr.p * s / (pr.p - 1.0)).exp() * s.powf(pr.a / (pr.p - 1.0)) * pr.f(phi * w);
            assert_relative_eq!(nl.scaled_source(w, s), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn scaled_potential_matches_unscaled_at_moderate_s() {
        let pr = params(2.0, -1.0, 3);
        let nl = Nonlinearity::new(pr).unwrap();
        let s = 4.0;
        let phi = pr.phi(s).unwrap();
        for &w in &[0.7, -2.5, 24.0] {
            let direct = (-2.0 * (pr.p + 1.0) * s / (pr.p - 1.0)).exp()
                * s.powf(2.0 * pr.a / (pr.p - 1.0))
                * nl.potential(phi * w);
            assert_relative_eq!(nl.scaled_potential(w, s), direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn appendix_report_rejects_short_grids() {
        let nl = Nonlinearity::new(params(3.0, 1.0, 1)).unwrap();
        let grid: Vec<f64> = (0..10).map(|k| 1.0 + k as f64).collect();
        assert!(matches!(
            check_appendix_asymptotics(&nl, &grid),
            Err(ModelError::GridSpan { .. })
        ));
    }

    #[test]
    fn appendix_r1_identity_when_a_is_zero() {
        let nl = Nonlinearity::new(params(3.0, 0.0, 1)).unwrap();
        let grid: Vec<f64> = (0..29).map(|k| 10f64.powf(k as f64 * 0.25)).collect();
        let report = check_appendix_asymptotics(&nl, &grid).unwrap();
        for row in &report.rows {
            assert_abs_diff_eq!(row.r1, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.r2, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ln_2_plus_exp_extremes() {
        assert_relative_eq!(ln_2_plus_exp(0.0), 3.0f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(ln_2_plus_exp(800.0), 800.0, max_relative = 1e-14);
        assert_relative_eq!(
            ln_2_plus_exp(-800.0),
            std::f64::consts::LN_2,
            max_relative = 1e-15
        );
    }
}
