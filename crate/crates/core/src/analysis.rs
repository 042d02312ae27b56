//! Rate-exponent fitting against the explicit blow-up rate, the Theorem-2
//! window diagnostics for the rescaled cone norms, and the sloped T*(x)
//! slicing used for uniform-in-x monitoring.

use crate::model::ModelParams;
use crate::phys::invert_rate_for_gap;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("amplitude span is {got:.2} decades; need >= {need}")]
    AmpSpanTooSmall { need: f64, got: f64 },
    #[error("gap span is {got:.2} decades; need >= {need}")]
    GapSpanTooSmall { need: f64, got: f64 },
    #[error("no samples fall inside the fit window [{lo:.3e}, {hi:.3e}]")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("fit did not converge after {iters} iterations (cost {cost:.6e}); best iterate attached")]
    NonConvergence {
        iters: usize,
        cost: f64,
        best: Box<BlowupFit>,
    },
    #[error("optimum violates T - t < 1 (gap {0:.3e})")]
    GapDomain(f64),
    #[error("delta0 must lie in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("blow-up time initialisation failed: {0}")]
    InitFailed(String),
    #[error("singular normal equations in the least-squares step")]
    Singular,
}

/// Result of the nonlinear least-squares fit of
/// log A = log c - beta log(T-t) - gamma log(-log(T-t)).
#[derive(Debug, Clone, Serialize)]
pub struct BlowupFit {
    pub t_fit: f64,
    pub beta_fit: f64,
    pub gamma_fit: f64,
    pub amp_fit: f64,
    /// RMS residual in log-amplitude units.
    pub residual_rms: f64,
    /// 1-sigma uncertainties (log c, beta, gamma, T) from the covariance.
    pub sigma: [f64; 4],
    pub window: (f64, f64),
    pub pinned_gamma: bool,
    pub n_used: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Fit window in the gap variable T - t.
    pub window: (f64, f64),
    /// Pin the log-correction exponent to zero (useful when |a| < 0.05).
    pub pin_gamma: bool,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: (1e-6, 1e-2),
            pin_gamma: false,
            max_iter: 300,
        }
    }
}

struct FitProblem {
    t: Vec<f64>,
    ln_a: Vec<f64>,
    t_max: f64,
    pin_gamma: bool,
}

impl FitProblem {
    /// theta = (ln c, beta, gamma, q) with T = t_max + e^q.
    fn residuals(&self, th: &[f64; 4], r: &mut Vec<f64>) {
        r.clear();
        let t_b = self.t_max + th[3].exp();
        for (&t, &ln_a) in self.t.iter().zip(&self.ln_a) {
            let tau = t_b - t;
            let sigma = -tau.ln();
            r.push(ln_a - th[0] + th[1] * tau.ln() + th[2] * sigma.ln());
        }
    }

    fn jacobian(&self, th: &[f64; 4], jac: &mut Vec<[f64; 4]>) {
        jac.clear();
        let eq = th[3].exp();
        let t_b = self.t_max + eq;
        for &t in &self.t {
            let tau = t_b - t;
            let sigma = -tau.ln();
            let dr_dt = (th[1] - th[2] / sigma) / tau;
            let mut row = [-1.0, tau.ln(), sigma.ln(), dr_dt * eq];
            if self.pin_gamma {
                row[2] = 0.0;
            }
            jac.push(row);
        }
    }
}

fn solve4(mut m: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in 0..4 {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Some([
        b[0] / m[0][0],
        b[1] / m[1][1],
        b[2] / m[2][2],
        b[3] / m[3][3],
    ])
}

/// Levenberg-Marquardt fit of the blow-up rate ansatz to an amplitude series.
pub fn fit_rate(
    series: &[(f64, f64)],
    params: &ModelParams,
    opts: &FitOptions,
) -> Result<BlowupFit, AnalysisError> {
    if series.len() < 30 {
        return Err(AnalysisError::TooFewSamples {
            need: 30,
            got: series.len(),
        });
    }
    let amp_min = series.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let amp_max = series.iter().map(|s| s.1).fold(0.0f64, f64::max);
    let span = (amp_max / amp_min).log10();
    if span < 3.0 {
        return Err(AnalysisError::AmpSpanTooSmall {
            need: 3.0,
            got: span,
        });
    }
    let t_max_all = series.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let (_, amp_last) = series
        .iter()
        .cloned()
        .max_by(|x, y| x.0.total_cmp(&y.0))
        .expect("non-empty");
    // Provisional blow-up time from inverting the explicit rate at the last
    // sample.
    let tau_last = invert_rate_for_gap(params, amp_last)
        .map_err(|e| AnalysisError::InitFailed(e.to_string()))?;
    let mut t_b = t_max_all + tau_last;

    let mut fit = None;
    for _pass in 0..2 {
        // Window in the gap variable using the current blow-up time estimate.
        let mut t = Vec::new();
        let mut ln_a = Vec::new();
        for &(ti, ai) in series {
            let tau = t_b - ti;
            if tau >= opts.window.0 && tau <= opts.window.1 {
                t.push(ti);
                ln_a.push(ai.ln());
            }
        }
        if t.len() < 5 {
            return Err(AnalysisError::EmptyWindow {
                lo: opts.window.0,
                hi: opts.window.1,
            });
        }
        let t_max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let problem = FitProblem {
            t,
            ln_a,
            t_max,
            pin_gamma: opts.pin_gamma,
        };
        let b0 = 2.0 / (params.p - 1.0);
        let g0 = if opts.pin_gamma {
            0.0
        } else {
            params.a / (params.p - 1.0)
        };
        let mut th = [
            params.kappa_a().ln(),
            b0,
            g0,
            (t_b - t_max).max(1e-14).ln(),
        ];
        let mut r = Vec::new();
        let mut jac = Vec::new();
        problem.residuals(&th, &mut r);
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut iters = 0;
        for it in 0..opts.max_iter {
            iters = it + 1;
            problem.jacobian(&th, &mut jac);
            // Normal equations.
            let mut jtj = [[0.0f64; 4]; 4];
            let mut jtr = [0.0f64; 4];
            for (row, &ri) in jac.iter().zip(&r) {
                for i in 0..4 {
                    jtr[i] += row[i] * ri;
                    for j in 0..4 {
                        jtj[i][j] += row[i] * row[j];
                    }
                }
            }
            if opts.pin_gamma {
                jtj[2] = [0.0, 0.0, 1.0, 0.0];
                jtj[0][2] = 0.0;
                jtj[1][2] = 0.0;
                jtj[3][2] = 0.0;
                jtr[2] = 0.0;
            }
            let grad_norm = jtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if grad_norm < 1e-13 * (1.0 + cost) {
                converged = true;
                break;
            }
            let mut improved = false;
            for _try in 0..25 {
                let mut m = jtj;
                for i in 0..4 {
                    m[i][i] += lambda * jtj[i][i].max(1e-12);
                }
                let delta = match solve4(m, [-jtr[0], -jtr[1], -jtr[2], -jtr[3]]) {
                    Some(d) => d,
                    None => return Err(AnalysisError::Singular),
                };
                let trial = [
                    th[0] + delta[0],
                    th[1] + delta[1],
                    th[2] + delta[2],
                    (th[3] + delta[3]).clamp(th[3] - 2.0, th[3] + 2.0),
                ];
                let mut r_trial = Vec::new();
                problem.residuals(&trial, &mut r_trial);
                let cost_trial: f64 = r_trial.iter().map(|v| v * v).sum();
                if cost_trial.is_finite() && cost_trial <= cost {
                    let rel_drop = (cost - cost_trial) / cost.max(1e-300);
                    th = trial;
                    r = r_trial;
                    cost = cost_trial;
                    lambda = (lambda / 3.0).max(1e-14);
                    improved = true;
                    if rel_drop < 1e-14 || cost < 1e-28 {
                        converged = true;
                    }
                    break;
                }
                lambda *= 4.0;
            }
            if !improved || converged {
                converged = converged || !improved && grad_norm < 1e-8 * (1.0 + cost);
                break;
            }
        }
        let n_used = problem.t.len();
        let dof = (n_used as f64 - if opts.pin_gamma { 3.0 } else { 4.0 }).max(1.0);
        let sigma2 = cost / dof;
        // Covariance diag from (J^T J)^-1 via solving for unit vectors.
        problem.jacobian(&th, &mut jac);
        let mut jtj = [[0.0f64; 4]; 4];
        for row in &jac {
            for i in 0..4 {
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        if opts.pin_gamma {
            jtj[2] = [0.0, 0.0, 1.0, 0.0];
            jtj[0][2] = 0.0;
            jtj[1][2] = 0.0;
            jtj[3][2] = 0.0;
        }
        let mut sigma = [0.0f64; 4];
        for i in 0..4 {
            let mut e = [0.0; 4];
            e[i] = 1.0;
            if let Some(col) = solve4(jtj, e) {
                sigma[i] = (col[i].max(0.0) * sigma2).sqrt();
            }
        }
        // Map the T-direction uncertainty through T = t_max + e^q.
        sigma[3] *= th[3].exp();
        let t_fit = t_max + th[3].exp();
        let gap_at_first = t_fit - problem.t[0];
        if gap_at_first >= 1.0 {
            return Err(AnalysisError::GapDomain(gap_at_first));
        }
        let result = BlowupFit {
            t_fit,
            beta_fit: th[1],
            gamma_fit: th[2],
            amp_fit: th[0].exp(),
            residual_rms: (cost / n_used as f64).sqrt(),
            sigma,
            window: opts.window,
            pinned_gamma: opts.pin_gamma,
            n_used,
        };
        if !converged {
            return Err(AnalysisError::NonConvergence {
                iters,
                cost,
                best: Box::new(result),
            });
        }
        let moved = (t_fit - t_b).abs();
        t_b = t_fit;
        fit = Some(result);
        if moved < 1e-12 {
            break;
        }
    }
    Ok(fit.expect("fit populated in the loop"))
}

/// Window report for the Theorem-2 double bound on n0 + n1 + n2.
#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    pub n_min: f64,
    pub n_max: f64,
    pub ratio: f64,
    pub tail_min_n0: f64,
    pub tail_max_n0: f64,
    pub tail_ok: bool,
    pub degenerate: bool,
    pub pass: bool,
}

/// Assess boundedness (above and away from zero) of the rescaled cone
/// quantities over the observed range of T - t.
pub fn theorem2_window(
    cone_series: &[(f64, f64, f64, f64)],
    t_blowup: f64,
) -> Result<WindowReport, AnalysisError> {
    if cone_series.len() < 8 {
        return Err(AnalysisError::TooFewSamples {
            need: 8,
            got: cone_series.len(),
        });
    }
    let gaps: Vec<f64> = cone_series.iter().map(|r| t_blowup - r.0).collect();
    let gmin = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let gmax = gaps.iter().cloned().fold(0.0f64, f64::max);
    let span = (gmax / gmin).log10();
    if !(span >= 2.0) {
        return Err(AnalysisError::GapSpanTooSmall {
            need: 2.0,
            got: span,
        });
    }
    let sums: Vec<f64> = cone_series
        .iter()
        .map(|&(_, n0, n1, n2)| n0 + n1 + n2)
        .collect();
    let n_max = sums.iter().cloned().fold(0.0f64, f64::max);
    if n_max < 1e-12 {
        return Ok(WindowReport {
            n_min: 0.0,
            n_max,
            ratio: f64::NAN,
            tail_min_n0: 0.0,
            tail_max_n0: 0.0,
            tail_ok: false,
            degenerate: true,
            pass: false,
        });
    }
    let n_min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = n_max / n_min;
    // Tail = latest quarter of the series in t.
    let mut order: Vec<usize> = (0..cone_series.len()).collect();
    order.sort_by(|&i, &j| cone_series[i].0.total_cmp(&cone_series[j].0));
    let tail = &order[order.len() - order.len() / 4 - 1..];
    let tail_n0: Vec<f64> = tail.iter().map(|&i| cone_series[i].1).collect();
    let tail_max_n0 = tail_n0.iter().cloned().fold(0.0f64, f64::max);
    let tail_min_n0 = tail_n0.iter().cloned().fold(f64::INFINITY, f64::min);
    let tail_ok = tail_min_n0 > 1e-3 * tail_max_n0;
    let pass = ratio < 1e3 && tail_ok;
    Ok(WindowReport {
        n_min,
        n_max,
        ratio,
        tail_min_n0,
        tail_max_n0,
        tail_ok,
        degenerate: false,
        pass,
    })
}

/// The sloped slicing times T*(x) = T0 - delta0 (x - x0).
pub fn cone_slices(
    x0: f64,
    t0: f64,
    delta0: f64,
    xs: &[f64],
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return Err(AnalysisError::BadDelta(delta0));
    }
    Ok(xs.iter().map(|&x| (x, t0 - delta0 * (x - x0))).collect())
}
