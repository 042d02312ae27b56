//! Adaptive embedded Runge-Kutta integration (Dormand-Prince 5(4)) for the
//! small fixed-size systems used by the profile solver and its oracles.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:.12e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {0} exceeded")]
    TooManySteps(usize),
    #[error("right-hand side returned a non-finite value at t = {0:.12e}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Rk45Options {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: Option<f64>,
    /// Optional cap on |h| as a fraction of |t| (useful when the solution
    /// lives on a logarithmic scale in t).
    pub max_step_fraction: Option<f64>,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            h_init: None,
            max_step_fraction: None,
            max_steps: 2_000_000,
        }
    }
}

// Dormand-Prince coefficients.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
// Embedded 4th-order weights.
const E1: f64 = 5179.0 / 57600.0;
const E3: f64 = 7571.0 / 16695.0;
const E4: f64 = 393.0 / 640.0;
const E5: f64 = -92097.0 / 339200.0;
const E6: f64 = 187.0 / 2100.0;
const E7: f64 = 1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrate dy/dt = f(t, y) from t0 to t1 (either direction), calling
/// `observer(t, y)` after every accepted step (and once at t0).
pub fn integrate_adaptive<const N: usize, F, O>(
    f: F,
    t0: f64,
    t1: f64,
    y0: [f64; N],
    opts: &Rk45Options,
    mut observer: O,
) -> Result<[f64; N], OdeError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]),
{
    if t0 == t1 {
        observer(t0, &y0);
        return Ok(y0);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    observer(t, &y);

    let mut h = opts.h_init.unwrap_or(span * 1e-4).abs() * dir;
    let mut n_steps = 0usize;
    loop {
        if (t - t1) * dir >= 0.0 {
            return Ok(y);
        }
        n_steps += 1;
        if n_steps > opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        // Clamp the step to the interval end and the optional log-scale cap.
        if let Some(frac) = opts.max_step_fraction {
            let cap = (t.abs() * frac).max(1e-300);
            if h.abs() > cap {
                h = cap * dir;
            }
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }

        let k2 = f(t + C2 * h, &axpy(&y, &[(A21, &k1)], h));
        let k3 = f(t + C3 * h, &axpy(&y, &[(A31, &k1), (A32, &k2)], h));
        let k4 = f(t + C4 * h, &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
        let k5 = f(
            t + C5 * h,
            &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                h,
            ),
        );
        let y5 = axpy(&y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
        let k7 = f(t + h, &y5);
        let y4 = axpy(
            &y,
            &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
            h,
        );

        let mut err = 0.0f64;
        let mut finite = true;
        for i in 0..N {
            finite &= y5[i].is_finite();
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y5[i].abs());
            err = err.max(((y5[i] - y4[i]) / scale).abs());
        }
        if !finite {
            // Retry with a smaller step before giving up.
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::NonFinite(t));
            }
            h *= 0.25;
            continue;
        }

        if err <= 1.0 {
            t += h;
            y = y5;
            k1 = k7; // FSAL
            observer(t, &y);
        }
        // PI-free classical step-size update with safety factor.
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h.abs() < f64::MIN_POSITIVE * 1e4 || t + h == t {
            return Err(OdeError::StepUnderflow { t, h });
        }
    }
}
