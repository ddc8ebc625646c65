//! Independent continuous-time oracles for worst-case terminal payoffs in
//! one dimension.
//!
//! The nonlinear PDE  w_t + sup_{s in [a_low, a_high]} (s/2) w_xx = 0,
//! w(1, x) = g(x)  prices the worst case exactly; its nonlinearity
//! (a_high on the convex region, a_low on the concave region) is frozen per
//! node per time step and re-identified by policy iteration. For payoffs of
//! known shape the PDE collapses to a single Gaussian integral, which is
//! computed by composite quadrature as a second, independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::normal_expectation;

/// Maximum active-set sweeps per time step.
const MAX_SWEEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub x_min: f64,
    pub x_max: f64,
    /// Spatial points (odd keeps x = 0 on the grid).
    pub nx: usize,
    pub nt: usize,
    /// Implicitness: 0 explicit, 1 implicit, 0.5 Crank-Nicolson.
    pub theta: f64,
}

impl PdeGrid {
    /// Truncation at six standard deviations of the maximal-variance law.
    pub fn default_for(a_high: f64) -> Self {
        let l = 6.0 * a_high.max(0.0).sqrt().max(1e-6);
        PdeGrid { x_min: -l, x_max: l, nx: 801, nt: 2000, theta: 0.5 }
    }

    /// Half the resolution in both directions, for Richardson estimates.
    pub fn coarsened(&self) -> Self {
        PdeGrid {
            nx: (self.nx - 1) / 2 + 1,
            nt: (self.nt / 2).max(1),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < 0.0 && 0.0 < self.x_max) {
            return Err(Error::InvalidArgument(
                "grid must straddle x = 0, where the value is read".into(),
            ));
        }
        if self.nx < 5 {
            return Err(Error::InvalidArgument("nx must be >= 5".into()));
        }
        if self.nt < 1 {
            return Err(Error::InvalidArgument("nt must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument("theta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarenblattSolution {
    /// w(0, 0): the worst-case expectation of g at the origin.
    pub value: f64,
    /// |value - value at half grid resolution|.
    pub richardson_error: f64,
    /// Largest sweep count any time step needed.
    pub max_sweeps: usize,
}

/// Second difference with one-sided zeros at the ends (the boundary rows are
/// closed by the w_xx = 0 extrapolation instead).
fn second_diff(w: &[f64], dx: f64, out: &mut [f64]) {
    let n = w.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    let inv = 1.0 / (dx * dx);
    for j in 1..n - 1 {
        out[j] = (w[j + 1] - 2.0 * w[j] + w[j - 1]) * inv;
    }
}

fn solve_once(
    g: &dyn Fn(f64) -> f64,
    a_low: f64,
    a_high: f64,
    grid: &PdeGrid,
) -> Result<(f64, usize)> {
    grid.validate()?;
    if !(0.0 <= a_low && a_low <= a_high) {
        return Err(Error::InvalidArgument(
            "need 0 <= a_low <= a_high for the variance band".into(),
        ));
    }
    let nx = grid.nx;
    let nt = grid.nt;
    let theta = grid.theta;
    let dx = (grid.x_max - grid.x_min) / (nx - 1) as f64;
    let dt = 1.0 / nt as f64;
    if theta == 0.0 && a_high > 0.0 && dt > dx * dx / a_high {
        return Err(Error::ExplicitUnstable { dt, limit: dx * dx / a_high });
    }

    let x: Vec<f64> = (0..nx).map(|j| grid.x_min + dx * j as f64).collect();
    let mut w: Vec<f64> = x.iter().map(|&xi| g(xi)).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "terminal function is not finite on the grid".into(),
        ));
    }

    let ni = nx - 2;
    let mut d2 = vec![0.0; nx];
    let mut a = vec![0.0; nx];
    let mut expl = vec![0.0; nx];
    let mut lower = vec![0.0; ni];
    let mut diag = vec![0.0; ni];
    let mut upper = vec![0.0; ni];
    let mut rhs = vec![0.0; ni];
    let mut sol = vec![0.0; ni];
    let mut w_new = vec![0.0; nx];
    let mut wbar = vec![0.0; nx];
    let mut max_sweeps = 0usize;

    for _step in 0..nt {
        let w_old = w.clone();
        // On affine stretches the discrete curvature is pure cancellation
        // noise and either coefficient is equally optimal, so the active set
        // only reacts to curvature above this scale-aware floor. Without it
        // the set flickers on noise and policy iteration cannot settle.
        let w_scale = w_old.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let curv_tol = 1e3 * f64::EPSILON * w_scale / (dx * dx);
        // Initial active set from the current profile's curvature.
        second_diff(&w_old, dx, &mut d2);
        for j in 0..nx {
            a[j] = if d2[j] >= 0.0 { a_high } else { a_low };
        }
        let mut converged = false;
        let mut changed = 0usize;
        for sweep in 0..MAX_SWEEPS {
            // theta-scheme with the frozen coefficient field a.
            for j in 0..nx {
                expl[j] = w_old[j] + (1.0 - theta) * dt * 0.5 * a[j] * d2[j];
            }
            for j in 0..ni {
                let lam = theta * a[j + 1] * dt / (2.0 * dx * dx);
                lower[j] = -lam;
                diag[j] = 1.0 + 2.0 * lam;
                upper[j] = -lam;
                rhs[j] = expl[j + 1];
            }
            // Fold the zero-curvature boundary rows (w_0 = 2w_1 - w_2 and
            // the mirror image) into the first and last interior rows.
            let lam1 = theta * a[1] * dt / (2.0 * dx * dx);
            diag[0] += -2.0 * lam1;
            upper[0] += lam1;
            let lam_last = theta * a[nx - 2] * dt / (2.0 * dx * dx);
            diag[ni - 1] += -2.0 * lam_last;
            lower[ni - 1] += lam_last;

            // Thomas elimination.
            let mut dd = diag.clone();
            let mut rr = rhs.clone();
            for j in 1..ni {
                let m = lower[j] / dd[j - 1];
                dd[j] -= m * upper[j - 1];
                rr[j] -= m * rr[j - 1];
            }
            sol[ni - 1] = rr[ni - 1] / dd[ni - 1];
            for j in (0..ni - 1).rev() {
                sol[j] = (rr[j] - upper[j] * sol[j + 1]) / dd[j];
            }
            w_new[1..=ni].copy_from_slice(&sol[..ni]);
            w_new[0] = 2.0 * w_new[1] - w_new[2];
            w_new[nx - 1] = 2.0 * w_new[nx - 2] - w_new[nx - 3];

            // Re-identify the active set on the theta-weighted profile.
            for j in 0..nx {
                wbar[j] = theta * w_new[j] + (1.0 - theta) * w_old[j];
            }
            second_diff(&wbar, dx, &mut d2);
            changed = 0;
            for j in 0..nx {
                let aj = if d2[j] > curv_tol {
                    a_high
                } else if d2[j] < -curv_tol {
                    a_low
                } else {
                    a[j]
                };
                if aj != a[j] {
                    a[j] = aj;
                    changed += 1;
                }
            }
            if changed == 0 {
                max_sweeps = max_sweeps.max(sweep + 1);
                converged = true;
                break;
            }
            // Refresh the explicit part's curvature for the next sweep.
            second_diff(&w_old, dx, &mut d2);
        }
        if !converged {
            return Err(Error::PolicyIterationDiverged {
                sweeps: MAX_SWEEPS,
                residual: changed as f64,
            });
        }
        w.copy_from_slice(&w_new);
    }

    // Read w at x = 0 (linear interpolation covers asymmetric grids).
    let f = -grid.x_min / dx;
    let j = (f.floor() as usize).min(nx - 2);
    let frac = f - j as f64;
    Ok(((1.0 - frac) * w[j] + frac * w[j + 1], max_sweeps))
}

/// Worst-case expectation of the terminal function g under variance band
/// [a_low, a_high], with a self-reported Richardson error from a half
/// resolution companion solve.
pub fn solve_barenblatt(
    g: &dyn Fn(f64) -> f64,
    a_low: f64,
    a_high: f64,
    grid: &PdeGrid,
) -> Result<BarenblattSolution> {
    let (value, sweeps_fine) = solve_once(g, a_low, a_high, grid)?;
    let (coarse, sweeps_coarse) = solve_once(g, a_low, a_high, &grid.coarsened())?;
    Ok(BarenblattSolution {
        value,
        richardson_error: (value - coarse).abs(),
        max_sweeps: sweeps_fine.max(sweeps_coarse),
    })
}

/// Declared curvature of a terminal function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Convex,
    Concave,
}

/// For convex g the worst case is the maximal variance, for concave g the
/// minimal one, so the value is a single Gaussian expectation. Composite
/// Gauss-Legendre handles kinked payoffs far better than one global
/// Gauss-Hermite rule here.
pub fn closed_form_extremal(
    g: &dyn Fn(f64) -> f64,
    shape: Shape,
    a_low: f64,
    a_high: f64,
) -> f64 {
    let sigma = match shape {
        Shape::Convex => a_high.max(0.0).sqrt(),
        Shape::Concave => a_low.max(0.0).sqrt(),
    };
    normal_expectation(|z| g(sigma * z), 64, 8)
        .expect("fixed panel count and order are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const A_LOW: f64 = 0.04;
    const A_HIGH: f64 = 0.25;

    fn default_grid() -> PdeGrid {
        PdeGrid::default_for(A_HIGH)
    }

    #[test]
    fn closed_forms_hit_the_gaussian_targets() {
        let call = closed_form_extremal(&|x| x.max(0.0), Shape::Convex, A_LOW, A_HIGH);
        assert_abs_diff_eq!(call, 0.5 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-9);
        let neg_abs = closed_form_extremal(&|x| -x.abs(), Shape::Concave, A_LOW, A_HIGH);
        assert_abs_diff_eq!(
            neg_abs,
            -0.2 * (2.0 / std::f64::consts::PI).sqrt(),
            epsilon = 1e-9
        );
        let c = closed_form_extremal(&|_| 3.25, Shape::Convex, A_LOW, A_HIGH);
        assert_abs_diff_eq!(c, 3.25, epsilon = 1e-12);
    }

    #[test]
    fn heat_equation_prices_the_call() {
        // Singleton band: plain heat equation, E (0.5 Z)^+.
        let sol = solve_barenblatt(&|x| x.max(0.0), A_HIGH, A_HIGH, &default_grid())
            .unwrap();
        assert_abs_diff_eq!(
            sol.value,
            0.5 / (2.0 * std::f64::consts::PI).sqrt(),
            epsilon = 1e-3
        );
    }

    #[test]
    fn pde_matches_both_closed_forms() {
        let grid = default_grid();
        for (g, shape) in [
            (&(|x: f64| x.max(0.0)) as &dyn Fn(f64) -> f64, Shape::Convex),
            (&(|x: f64| -x.abs()) as &dyn Fn(f64) -> f64, Shape::Concave),
        ] {
            let pde = solve_barenblatt(g, A_LOW, A_HIGH, &grid).unwrap();
            let cf = closed_form_extremal(g, shape, A_LOW, A_HIGH);
            assert!(
                (pde.value - cf).abs() <= 1e-3,
                "pde {} vs closed form {cf}",
                pde.value
            );
        }
    }

    #[test]
    fn linear_terminal_data_stays_a_martingale() {
        let sol =
            solve_barenblatt(&|x| 2.0 * x + 0.0, A_LOW, A_HIGH, &default_grid()).unwrap();
        assert_abs_diff_eq!(sol.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn square_runs_at_maximal_variance() {
        let sol = solve_barenblatt(&|x| x * x, A_LOW, A_HIGH, &default_grid()).unwrap();
        assert_abs_diff_eq!(sol.value, 0.25, epsilon = 1e-3);
    }

    #[test]
    fn richardson_estimate_shrinks_under_refinement() {
        let base = default_grid();
        let fine = PdeGrid { nx: 2 * (base.nx - 1) + 1, nt: 2 * base.nt, ..base };
        let e_base =
            solve_barenblatt(&|x| x.max(0.0), A_LOW, A_HIGH, &base).unwrap();
        let e_fine =
            solve_barenblatt(&|x| x.max(0.0), A_LOW, A_HIGH, &fine).unwrap();
        assert!(
            e_fine.richardson_error < e_base.richardson_error,
            "fine {} vs base {}",
            e_fine.richardson_error,
            e_base.richardson_error
        );
    }

    #[test]
    fn comparison_principle_holds() {
        let grid = default_grid();
        let lo = solve_barenblatt(&|x| x.max(0.0), A_LOW, A_HIGH, &grid).unwrap();
        let hi = solve_barenblatt(&|x: f64| x.abs(), A_LOW, A_HIGH, &grid).unwrap();
        assert!(lo.value <= hi.value + 1e-12);
    }

    #[test]
    fn explicit_stability_is_enforced() {
        let grid = PdeGrid { theta: 0.0, ..default_grid() };
        // Default dt violates dt <= dx^2 / a_high by orders of magnitude.
        let err = solve_barenblatt(&|x| x.max(0.0), A_LOW, A_HIGH, &grid).unwrap_err();
        assert!(matches!(err, Error::ExplicitUnstable { .. }));
        // A compliant explicit grid runs and agrees loosely.
        let nx = 101usize;
        let dx = 2.0 * 3.0 / (nx - 1) as f64;
        let nt = (1.0 / (dx * dx / A_HIGH)).ceil() as usize + 1;
        let ok = PdeGrid { x_min: -3.0, x_max: 3.0, nx, nt, theta: 0.0 };
        let sol = solve_barenblatt(&|x| x.max(0.0), A_LOW, A_HIGH, &ok).unwrap();
        assert!((sol.value - 0.199471).abs() < 5e-3, "explicit value {}", sol.value);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let mut g = default_grid();
        g.x_min = 0.5;
        assert!(solve_barenblatt(&|x| x, A_LOW, A_HIGH, &g).is_err());
        let mut g2 = default_grid();
        g2.theta = 1.5;
        assert!(solve_barenblatt(&|x| x, A_LOW, A_HIGH, &g2).is_err());
        assert!(solve_barenblatt(&|x| x, 0.3, 0.25, &default_grid()).is_err());
    }
}
