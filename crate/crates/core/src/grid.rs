//! Spatial discretization of the unit ball for the self-similar frame:
//! cell-centered nodes strictly inside |y| < 1, conservative fluxes whose
//! weight (1-y^2)^(alpha+1) vanishes identically on the boundary faces, and
//! moment-fitted quadrature rules for the degenerate weights rho,
//! rho/(1-y^2), rho (1-y^2) and the plain Lebesgue measure.

use crate::quad::{adaptive_gk, tanh_sinh};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least 8 nodes, got {0}")]
    TooCoarse(usize),
    #[error("weight exponent alpha must be positive, got {0} (violates the subconformal constraint)")]
    BadAlpha(f64),
    #[error("cell moment quadrature failed: {0}")]
    Moment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Geometry {
    /// y in (-1, 1), one space dimension.
    Line,
    /// r in [0, 1), radially symmetric in the given dimension.
    Radial(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridMap {
    /// Equispaced nodes in y.
    Uniform,
    /// y = sin(pi xi / 2) with equispaced xi; clusters nodes at the light cone.
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// rho = (1 - y^2)^alpha
    Rho,
    /// rho / (1 - y^2), integrable since alpha > 0
    RhoOver1mY2,
    /// rho (1 - y^2)
    RhoTimes1mY2,
    /// plain Lebesgue measure on the ball
    Lebesgue,
}

/// Gamma(n/2) for positive integer n.
fn gamma_half(n: u32) -> f64 {
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

/// Surface area of the unit sphere S^(n-1).
fn sphere_area(n: u32) -> f64 {
    2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / gamma_half(n)
}

#[derive(Debug, Clone)]
pub struct SimilarityGrid {
    pub geometry: Geometry,
    pub map: GridMap,
    pub n: usize,
    pub alpha: f64,
    /// Cell-center coordinates, strictly inside the ball.
    pub nodes: Vec<f64>,
    /// Cell faces; the outermost faces sit exactly on the boundary.
    pub faces: Vec<f64>,
    h_xi: f64,
    dy_dxi: Vec<f64>,
    w_rho: Vec<f64>,
    w_rho_over: Vec<f64>,
    w_rho_times: Vec<f64>,
    w_plain: Vec<f64>,
    cell_mass_rho: Vec<f64>,
    face_kappa: Vec<f64>,
}

impl SimilarityGrid {
    pub fn build(
        geometry: Geometry,
        map: GridMap,
        n: usize,
        alpha: f64,
    ) -> Result<Self, GridError> {
        if n < 8 {
            return Err(GridError::TooCoarse(n));
        }
        if !(alpha > 0.0) {
            return Err(GridError::BadAlpha(alpha));
        }
        let (xi_lo, xi_hi) = match geometry {
            Geometry::Line => (-1.0, 1.0),
            Geometry::Radial(_) => (0.0, 1.0),
        };
        let h_xi = (xi_hi - xi_lo) / n as f64;
        let to_y = |xi: f64| -> f64 {
            match map {
                GridMap::Uniform => xi,
                GridMap::Sine => (std::f64::consts::FRAC_PI_2 * xi).sin(),
            }
        };
        let dy_dxi_at = |xi: f64| -> f64 {
            match map {
                GridMap::Uniform => 1.0,
                GridMap::Sine => {
                    std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * xi).cos()
                }
            }
        };
        let faces: Vec<f64> = (0..=n).map(|i| to_y(xi_lo + h_xi * i as f64)).collect();
        let nodes: Vec<f64> = (0..n)
            .map(|j| to_y(xi_lo + h_xi * (j as f64 + 0.5)))
            .collect();
        let dy_dxi: Vec<f64> = (0..n)
            .map(|j| dy_dxi_at(xi_lo + h_xi * (j as f64 + 0.5)))
            .collect();

        let geom = |y: f64| -> f64 {
            match geometry {
                Geometry::Line => 1.0,
                Geometry::Radial(nd) => sphere_area(nd) * y.powi(nd as i32 - 1),
            }
        };
        let density = |y: f64, mode: WeightMode| -> f64 {
            let one_my2 = (1.0 - y * y).max(0.0);
            let g = geom(y);
            match mode {
                WeightMode::Rho => one_my2.powf(alpha) * g,
                WeightMode::RhoOver1mY2 => one_my2.powf(alpha - 1.0) * g,
                WeightMode::RhoTimes1mY2 => one_my2.powf(alpha + 1.0) * g,
                WeightMode::Lebesgue => g,
            }
        };

        // Per-cell moments about the cell's node, spread onto a 3-node
        // quadratic so the rule is exact on quadratics.
        let modes = [
            WeightMode::Rho,
            WeightMode::RhoOver1mY2,
            WeightMode::RhoTimes1mY2,
            WeightMode::Lebesgue,
        ];
        let mut weights = [
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
        ];
        let mut cell_mass_rho = vec![0.0; n];
        for j in 0..n {
            let (ya, yb) = (faces[j], faces[j + 1]);
            let yj = nodes[j];
            let boundary_cell = j == 0 && matches!(geometry, Geometry::Line) || j == n - 1;
            for (mi, &mode) in modes.iter().enumerate() {
                let moment = |m: i32| -> Result<f64, GridError> {
                    let f = |y: f64| (y - yj).powi(m) * density(y, mode);
                    if boundary_cell || (alpha - 1.0) < 0.0 && (ya.abs() > 0.999 || yb.abs() > 0.999)
                    {
                        Ok(tanh_sinh(&f, ya, yb, 1e-13).value)
                    } else {
                        adaptive_gk(&f, ya, yb, 1e-12, 1e-300)
                            .map(|r| r.value)
                            .map_err(|e| GridError::Moment(e.to_string()))
                    }
                };
                let m0 = moment(0)?;
                let m1 = moment(1)?;
                let m2 = moment(2)?;
                if mode == WeightMode::Rho {
                    cell_mass_rho[j] = m0;
                }
                // Stencil nodes for the quadratic reconstruction.
                let k0 = if j == 0 {
                    0
                } else if j == n - 1 {
                    n - 3
                } else {
                    j - 1
                };
                let ys = [nodes[k0], nodes[k0 + 1], nodes[k0 + 2]];
                for i in 0..3 {
                    let mut c1 = 0.0; // sum of (yj - y_m) over m != i
                    let mut c0 = 1.0; // product of (yj - y_m)
                    let mut den = 1.0;
                    for m in 0..3 {
                        if m == i {
                            continue;
                        }
                        c1 += yj - ys[m];
                        c0 *= yj - ys[m];
                        den *= ys[i] - ys[m];
                    }
                    // integral of l_i over the cell: (M2 + c1 M1 + c0 M0)/den
                    weights[mi][k0 + i] += (m2 + c1 * m1 + c0 * m0) / den;
                }
            }
        }

        let face_kappa: Vec<f64> = faces
            .iter()
            .map(|&y| {
                let one_my2 = (1.0 - y * y).max(0.0);
                one_my2.powf(alpha + 1.0) * geom(y)
            })
            .collect();

        let [w_rho, w_rho_over, w_rho_times, w_plain] = weights;
        Ok(Self {
            geometry,
            map,
            n,
            alpha,
            nodes,
            faces,
            h_xi,
            dy_dxi,
            w_rho,
            w_rho_over,
            w_rho_times,
            w_plain,
            cell_mass_rho,
            face_kappa,
        })
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.geometry, Geometry::Radial(_))
    }

    /// Composite quadrature of nodal values against the chosen weight.
    pub fn integrate(&self, g: &[f64], mode: WeightMode) -> f64 {
        let w = match mode {
            WeightMode::Rho => &self.w_rho,
            WeightMode::RhoOver1mY2 => &self.w_rho_over,
            WeightMode::RhoTimes1mY2 => &self.w_rho_times,
            WeightMode::Lebesgue => &self.w_plain,
        };
        w.iter().zip(g).map(|(wi, gi)| wi * gi).sum()
    }

    /// d/dy of a nodal field, fourth-order in the mapped coordinate,
    /// one-sided at the boundary-adjacent nodes. Radial grids mirror across
    /// the origin (all radial fields are even).
    pub fn derivative(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n;
        let h = self.h_xi;
        let at = |idx: isize| -> f64 {
            if idx >= 0 {
                w[idx as usize]
            } else {
                // even reflection: xi_{-1-k} = -xi_k
                w[(-idx - 1) as usize]
            }
        };
        for j in 0..n {
            let ji = j as isize;
            let dw_dxi = if self.is_radial() && j <= 1 {
                (at(ji - 2) - 8.0 * at(ji - 1) + 8.0 * at(ji + 1) - at(ji + 2)) / (12.0 * h)
            } else if j >= 2 && j + 2 < n {
                (w[j - 2] - 8.0 * w[j - 1] + 8.0 * w[j + 1] - w[j + 2]) / (12.0 * h)
            } else if j == 0 {
                (-25.0 * w[0] + 48.0 * w[1] - 36.0 * w[2] + 16.0 * w[3] - 3.0 * w[4]) / (12.0 * h)
            } else if j == 1 {
                (-3.0 * w[0] - 10.0 * w[1] + 18.0 * w[2] - 6.0 * w[3] + w[4]) / (12.0 * h)
            } else if j == n - 2 {
                (3.0 * w[n - 1] + 10.0 * w[n - 2] - 18.0 * w[n - 3] + 6.0 * w[n - 4] - w[n - 5])
                    / (12.0 * h)
            } else {
                (25.0 * w[n - 1] - 48.0 * w[n - 2] + 36.0 * w[n - 3] - 16.0 * w[n - 4]
                    + 3.0 * w[n - 5])
                    / (12.0 * h)
            };
            out[j] = dw_dxi / self.dy_dxi[j];
        }
    }

    /// Conservative divergence-form operator
    /// (1/(rho omega)) D^- [ omega rho (1-y^2) D^+ w ],
    /// with fluxes that vanish identically on the boundary faces (and at the
    /// radial origin by symmetry), so no boundary condition is imposed.
    pub fn divergence_form(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut flux_left = 0.0; // boundary / origin face
        for j in 0..n {
            let flux_right = if j + 1 < n {
                self.face_kappa[j + 1] * (w[j + 1] - w[j]) / (self.nodes[j + 1] - self.nodes[j])
            } else {
                0.0
            };
            out[j] = (flux_right - flux_left) / self.cell_mass_rho[j];
            flux_left = flux_right;
        }
    }

    /// Largest stable time step for the explicit self-similar stepper:
    /// c times the smallest cell-width over local characteristic speed
    /// (1 + |y|); this also respects the degenerate bound
    /// c * min dy / sqrt(1-y^2).
    pub fn max_stable_ds(&self, c: f64) -> f64 {
        let mut ds = f64::INFINITY;
        for j in 0..self.n {
            let width = self.faces[j + 1] - self.faces[j];
            ds = ds.min(width / (1.0 + self.nodes[j].abs()));
        }
        c * ds
    }

    /// Width of the widest cell (the resolution scale h entering discrete
    /// tolerance budgets).
    pub fn h_max(&self) -> f64 {
        (0..self.n)
            .map(|j| self.faces[j + 1] - self.faces[j])
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rho_mass_closed_forms_line() {
        // alpha = 1: int (1-y^2) dy = 4/3 ; alpha = 2: 16/15
        for (alpha, exact) in [(1.0, 4.0 / 3.0), (2.0, 16.0 / 15.0)] {
            let g = SimilarityGrid::build(Geometry::Line, GridMap::Sine, 64, alpha).unwrap();
            let ones = vec![1.0; g.n];
            assert_relative_eq!(
                g.integrate(&ones, WeightMode::Rho),
                exact,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn rho_over_mass_closed_forms() {
        // alpha = 1: int (1-y^2)^0 dy = 2
        let g = SimilarityGrid::build(Geometry::Line, GridMap::Sine, 64, 1.0).unwrap();
        let ones = vec![1.0; g.n];
        assert_relative_eq!(
            g.integrate(&ones, WeightMode::RhoOver1mY2),
            2.0,
            max_relative = 1e-10
        );
        // alpha = 1/2: int (1-y^2)^(-1/2) dy = pi (singular endpoints)
        let g = SimilarityGrid::build(Geometry::Line, GridMap::Uniform, 128, 0.5).unwrap();
        let ones = vec![1.0; g.n];
        assert_relative_eq!(
            g.integrate(&ones, WeightMode::RhoOver1mY2),
            std::f64::consts::PI,
            max_relative = 1e-8
        );
    }

    #[test]
    fn radial_rho_mass() {
        // N = 3, alpha = 1: 4 pi int_0^1 (1-r^2) r^2 dr = 8 pi / 15
        let g = SimilarityGrid::build(Geometry::Radial(3), GridMap::Sine, 64, 1.0).unwrap();
        let ones = vec![1.0; g.n];
        assert_relative_eq!(
            g.integrate(&ones, WeightMode::Rho),
            8.0 * std::f64::consts::PI / 15.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        let exact = {
            // int_{-1}^1 cos(2y) (1-y^2)^(3/2) dy via a fine reference
            let f = |y: f64| (2.0 * y).cos() * (1.0 - y * y).powf(1.5);
            crate::quad::tanh_sinh(&f, -1.0, 1.0, 1e-14).value
        };
        let err_at = |n: usize| {
            let g = SimilarityGrid::build(Geometry::Line, GridMap::Uniform, n, 1.5).unwrap();
            let vals: Vec<f64> = g.nodes.iter().map(|&y| (2.0 * y).cos()).collect();
            (g.integrate(&vals, WeightMode::Rho) - exact).abs()
        };
        let (e1, e2) = (err_at(40), err_at(80));
        assert!(
            e2 < e1 / 3.5,
            "expected >= 2nd order decay, got {e1:.3e} -> {e2:.3e}"
        );
    }

    #[test]
    fn derivative_is_high_order() {
        for map in [GridMap::Uniform, GridMap::Sine] {
            let err_at = |n: usize| {
                let g = SimilarityGrid::build(Geometry::Line, map, n, 1.0).unwrap();
                let w: Vec<f64> = g.nodes.iter().map(|&y| (2.0 * y).sin()).collect();
                let mut d = vec![0.0; g.n];
                g.derivative(&w, &mut d);
                g.nodes
                    .iter()
                    .zip(&d)
                    .map(|(&y, &dy)| (dy - 2.0 * (2.0 * y).cos()).abs())
                    .fold(0.0f64, f64::max)
            };
            let (e1, e2) = (err_at(64), err_at(128));
            assert!(e2 < e1 / 7.0, "{map:?}: {e1:.3e} -> {e2:.3e}");
        }
    }

    #[test]
    fn radial_derivative_vanishes_at_origin_for_even_fields() {
        let g = SimilarityGrid::build(Geometry::Radial(3), GridMap::Sine, 64, 1.0).unwrap();
        let w: Vec<f64> = g.nodes.iter().map(|&r| (r * r).cos()).collect();
        let mut d = vec![0.0; g.n];
        g.derivative(&w, &mut d);
        // d/dr cos(r^2) = -2 r sin(r^2) -> 0 like r at the origin
        assert!(d[0].abs() < 3.0 * g.nodes[0]);
    }

    #[test]
    fn divergence_form_annihilates_constants() {
        for (geom, n_dim) in [(Geometry::Line, 1), (Geometry::Radial(3), 3)] {
            let _ = n_dim;
            let g = SimilarityGrid::build(geom, GridMap::Sine, 32, 0.75).unwrap();
            let w = vec![3.25; g.n];
            let mut out = vec![0.0; g.n];
            g.divergence_form(&w, &mut out);
            assert!(out.iter().all(|&v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn divergence_form_is_negative_semidefinite() {
        let g = SimilarityGrid::build(Geometry::Line, GridMap::Sine, 48, 1.0).unwrap();
        let w: Vec<f64> = g.nodes.iter().map(|&y| (3.0 * y).sin() + y * y).collect();
        let mut lw = vec![0.0; g.n];
        g.divergence_form(&w, &mut lw);
        // <L w, w> with the cell-mass inner product telescopes to
        // -sum kappa_face (dw)^2 / dy <= 0
        let quad: f64 = (0..g.n).map(|j| lw[j] * w[j] * g.cell_mass_rho[j]).sum();
        assert!(quad < 0.0);
    }

    #[test]
    fn radial_divergence_matches_analytic_interior() {
        // w = r^2: L w = 2N(1-r^2) - 4(alpha+1) r^2
        let n_dim = 3u32;
        let alpha = 1.0;
        let g = SimilarityGrid::build(Geometry::Radial(n_dim), GridMap::Uniform, 512, alpha).unwrap();
        let w: Vec<f64> = g.nodes.iter().map(|&r| r * r).collect();
        let mut lw = vec![0.0; g.n];
        g.divergence_form(&w, &mut lw);
        for (j, &r) in g.nodes.iter().enumerate() {
            if r > 0.9 {
                continue; // boundary cells carry the usual one-sided error
            }
            let exact = 2.0 * n_dim as f64 * (1.0 - r * r) - 4.0 * (alpha + 1.0) * r * r;
            assert_relative_eq!(lw[j], exact, max_relative = 2e-2, epsilon = 2e-2);
        }
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(matches!(
            SimilarityGrid::build(Geometry::Line, GridMap::Sine, 32, 0.0),
            Err(GridError::BadAlpha(_))
        ));
    }
}
