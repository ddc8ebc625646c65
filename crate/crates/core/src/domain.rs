//! The compact convex set of admissible volatility matrices, its square-root
//! set, and finite control grids over the square roots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{nnls, SymMatrix, TOL_PSD};

/// A nonempty convex compact subset of the PSD matrices, given in one of
/// four parametric forms. Values are variances per unit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintyDomain {
    /// d = 1, the interval [a_low, a_high].
    ScalarInterval { a_low: f64, a_high: f64 },
    /// { s * I : s in [a_low, a_high] } in dimension d.
    IsotropicInterval { d: usize, a_low: f64, a_high: f64 },
    /// Diagonal matrices with the i-th entry in [intervals[i].0, intervals[i].1].
    DiagonalBox { intervals: Vec<(f64, f64)> },
    /// Convex hull of explicit PSD generators.
    ConvexHull { generators: Vec<SymMatrix> },
}

/// A finite subset of the square-root set used to approximate control
/// suprema. Endpoint (extreme-point) controls are always included, and the
/// grid remembers the domain it discretizes so downstream consumers can run
/// membership checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlGrid {
    pub controls: Vec<SymMatrix>,
    pub resolution: u32,
    pub domain: UncertaintyDomain,
}

impl UncertaintyDomain {
    pub fn dim(&self) -> usize {
        match self {
            UncertaintyDomain::ScalarInterval { .. } => 1,
            UncertaintyDomain::IsotropicInterval { d, .. } => *d,
            UncertaintyDomain::DiagonalBox { intervals } => intervals.len(),
            UncertaintyDomain::ConvexHull { generators } => {
                generators.first().map_or(0, |g| g.dim())
            }
        }
    }

    /// Checks the structural invariants: nonempty, intervals ordered, every
    /// represented matrix PSD within tolerance.
    pub fn validate(&self) -> Result<()> {
        match self {
            UncertaintyDomain::ScalarInterval { a_low, a_high } => {
                validate_interval(*a_low, *a_high, "a")
            }
            UncertaintyDomain::IsotropicInterval { d, a_low, a_high } => {
                if *d == 0 {
                    return Err(Error::InvalidArgument("dimension must be >= 1".into()));
                }
                validate_interval(*a_low, *a_high, "a")
            }
            UncertaintyDomain::DiagonalBox { intervals } => {
                if intervals.is_empty() {
                    return Err(Error::InvalidArgument(
                        "diagonal_box needs at least one interval".into(),
                    ));
                }
                for (i, (lo, hi)) in intervals.iter().enumerate() {
                    validate_interval(*lo, *hi, &format!("intervals[{i}]"))?;
                }
                Ok(())
            }
            UncertaintyDomain::ConvexHull { generators } => {
                if generators.is_empty() {
                    return Err(Error::InvalidArgument(
                        "convex_hull needs at least one generator".into(),
                    ));
                }
                let d = generators[0].dim();
                for (i, g) in generators.iter().enumerate() {
                    if g.dim() != d {
                        return Err(Error::DimensionMismatch { expected: d, got: g.dim() });
                    }
                    if !g.is_psd() {
                        return Err(Error::InvalidArgument(format!(
                            "generator {i} is not positive semidefinite"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Supremum of the operator norm over the set. Finite by compactness;
    /// for the hull it is attained at a generator because norms are convex.
    pub fn norm(&self) -> f64 {
        match self {
            UncertaintyDomain::ScalarInterval { a_high, .. } => a_high.abs(),
            UncertaintyDomain::IsotropicInterval { a_high, .. } => a_high.abs(),
            UncertaintyDomain::DiagonalBox { intervals } => {
                intervals.iter().map(|(lo, hi)| lo.abs().max(hi.abs())).fold(0.0, f64::max)
            }
            UncertaintyDomain::ConvexHull { generators } => {
                generators.iter().map(|g| g.operator_norm()).fold(0.0, f64::max)
            }
        }
    }

    /// Membership tolerance, scaled to the domain's size.
    pub fn tol(&self) -> f64 {
        TOL_PSD * self.norm().max(1.0)
    }

    /// Membership test for a candidate covariance-rate matrix.
    pub fn contains(&self, a: &SymMatrix) -> Result<bool> {
        if a.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: a.dim() });
        }
        let tol = self.tol();
        Ok(match self {
            UncertaintyDomain::ScalarInterval { a_low, a_high } => {
                let x = a.get(0, 0);
                x >= a_low - tol && x <= a_high + tol
            }
            UncertaintyDomain::IsotropicInterval { d, a_low, a_high } => {
                let s = a.get(0, 0);
                a.approx_eq(&SymMatrix::scalar(*d, s), tol)
                    && s >= a_low - tol
                    && s <= a_high + tol
            }
            UncertaintyDomain::DiagonalBox { intervals } => {
                let diag_only = a.approx_eq(&SymMatrix::diag(&a.diagonal()), tol);
                diag_only
                    && intervals.iter().enumerate().all(|(i, (lo, hi))| {
                        let x = a.get(i, i);
                        x >= lo - tol && x <= hi + tol
                    })
            }
            UncertaintyDomain::ConvexHull { generators } => hull_contains(generators, a),
        })
    }

    /// Finite covering grid of the square-root set with (resolution + 1)
    /// points per free parameter; extreme points are always included and
    /// doubling the resolution refines the covering mesh.
    pub fn sqrt_grid(&self, resolution: u32) -> Result<ControlGrid> {
        if resolution < 1 {
            return Err(Error::InvalidArgument("grid resolution must be >= 1".into()));
        }
        let r = resolution as usize;
        let mut controls: Vec<SymMatrix> = Vec::new();
        match self {
            UncertaintyDomain::ScalarInterval { a_low, a_high } => {
                // Grid is linear in the volatility (square root of variance).
                let lo = a_low.max(0.0).sqrt();
                let hi = a_high.max(0.0).sqrt();
                for j in 0..=r {
                    let g = lo + (hi - lo) * j as f64 / r as f64;
                    controls.push(SymMatrix::diag(&[g]));
                }
            }
            UncertaintyDomain::IsotropicInterval { d, a_low, a_high } => {
                // Grid is linear in the variance scale s, controls sqrt(s) I.
                for j in 0..=r {
                    let s = a_low + (a_high - a_low) * j as f64 / r as f64;
                    controls.push(SymMatrix::scalar(*d, s.max(0.0).sqrt()));
                }
            }
            UncertaintyDomain::DiagonalBox { intervals } => {
                let axes: Vec<Vec<f64>> = intervals
                    .iter()
                    .map(|(lo, hi)| {
                        let l = lo.max(0.0).sqrt();
                        let h = hi.max(0.0).sqrt();
                        (0..=r).map(|j| l + (h - l) * j as f64 / r as f64).collect()
                    })
                    .collect();
                let mut idx = vec![0usize; axes.len()];
                loop {
                    let entries: Vec<f64> =
                        idx.iter().enumerate().map(|(i, &j)| axes[i][j]).collect();
                    controls.push(SymMatrix::diag(&entries));
                    if !advance(&mut idx, r + 1) {
                        break;
                    }
                }
            }
            UncertaintyDomain::ConvexHull { generators } => {
                let m = generators.len();
                let combos = compositions(r, m);
                if combos.len() > 100_000 {
                    return Err(Error::InvalidArgument(format!(
                        "simplex grid too large: {} combinations; lower the resolution",
                        combos.len()
                    )));
                }
                for combo in combos {
                    let mut mix = SymMatrix::zeros(generators[0].dim());
                    for (g, &k) in generators.iter().zip(&combo) {
                        mix = mix.add(&g.scale(k as f64 / r as f64));
                    }
                    controls.push(mix.sqrt_psd()?);
                }
            }
        }
        // Singleton domains and coinciding combinations produce duplicates.
        controls.dedup_by(|a, b| a == b);
        let mut unique: Vec<SymMatrix> = Vec::with_capacity(controls.len());
        for c in controls {
            if !unique.contains(&c) {
                unique.push(c);
            }
        }
        Ok(ControlGrid { controls: unique, resolution, domain: self.clone() })
    }
}

impl ControlGrid {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Largest operator norm among the controls; bounds one-step shifts.
    pub fn max_norm(&self) -> f64 {
        self.controls.iter().map(|c| c.operator_norm()).fold(0.0, f64::max)
    }

    /// Index of the control with the largest operator norm (ties: lowest).
    pub fn max_norm_index(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.controls.iter().enumerate() {
            if c.operator_norm() > self.controls[best].operator_norm() {
                best = i;
            }
        }
        best
    }
}

fn validate_interval(lo: f64, hi: f64, name: &str) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("{name}: bounds must be finite")));
    }
    if lo > hi {
        return Err(Error::InvalidArgument(format!(
            "{name}: lower bound {lo} exceeds upper bound {hi}"
        )));
    }
    if lo < -TOL_PSD * hi.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name}: lower bound {lo} is negative (variances must be >= 0)"
        )));
    }
    Ok(())
}

/// Convex-combination feasibility by nonnegative least squares on the
/// stacked entries plus a sum-to-one row.
fn hull_contains(generators: &[SymMatrix], a: &SymMatrix) -> bool {
    let d = a.dim();
    let m = generators.len();
    let scale = generators.iter().map(|g| g.max_abs_entry()).fold(1.0, f64::max);
    let nrows = d * d + 1;
    let mut mat = vec![0.0f64; nrows * m];
    let mut rhs = vec![0.0f64; nrows];
    for (col, g) in generators.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                mat[(i * d + j) * m + col] = g.get(i, j);
            }
        }
        mat[d * d * m + col] = scale;
    }
    for i in 0..d {
        for j in 0..d {
            rhs[i * d + j] = a.get(i, j);
        }
    }
    rhs[d * d] = scale;
    let lambda = nnls(&mat, &rhs, nrows, m);
    let total: f64 = lambda.iter().sum();
    let mut mix = SymMatrix::zeros(d);
    for (g, &l) in generators.iter().zip(&lambda) {
        mix = mix.add(&g.scale(l));
    }
    let tol = 1e-8 * scale.max(1.0);
    (total - 1.0).abs() <= 1e-8 && mix.sub(a).max_abs_entry() <= tol
}

/// All length-`m` vectors of nonnegative integers summing to `total`.
fn compositions(total: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; m];
    fn rec(total: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() - 1 {
            cur[pos] = total;
            out.push(cur.clone());
            return;
        }
        for k in 0..=total {
            cur[pos] = k;
            rec(total - k, pos + 1, cur, out);
        }
    }
    if m == 0 {
        return out;
    }
    rec(total, 0, &mut cur, &mut out);
    out
}

/// Odometer increment over `len` digits in base `base`.
pub(crate) fn advance(idx: &mut [usize], base: usize) -> bool {
    for digit in idx.iter_mut().rev() {
        *digit += 1;
        if *digit < base {
            return true;
        }
        *digit = 0;
    }
    false
}
