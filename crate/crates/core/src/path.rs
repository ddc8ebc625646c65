//! Discrete martingale/quadratic-variation path pairs, their piecewise
//! linear embedding into continuous time on [0, 1], sup norms and the
//! predictable-variation map.

use std::io::Write;

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// A pair (u, v): u martingale knots in R^d, v quadratic-variation knots in
/// S^d, both with n+1 entries and starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePathPair {
    pub n: usize,
    pub d: usize,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<SymMatrix>,
}

impl DiscretePathPair {
    /// All-zero path with n steps in dimension d.
    pub fn new(n: usize, d: usize) -> Self {
        DiscretePathPair {
            n,
            d,
            u: vec![vec![0.0; d]; n + 1],
            v: vec![SymMatrix::zeros(d); n + 1],
        }
    }

    pub fn from_parts(u: Vec<Vec<f64>>, v: Vec<SymMatrix>) -> Result<Self> {
        if u.is_empty() || u.len() != v.len() {
            return Err(Error::InvalidArgument(format!(
                "path needs matching u ({}) and v ({}) knot counts",
                u.len(),
                v.len()
            )));
        }
        let n = u.len() - 1;
        let d = u[0].len();
        let p = DiscretePathPair { n, d, u, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.len() != self.n + 1 || self.v.len() != self.n + 1 {
            return Err(Error::InvalidArgument("knot count mismatch".into()));
        }
        for (k, (uk, vk)) in self.u.iter().zip(&self.v).enumerate() {
            if uk.len() != self.d {
                return Err(Error::DimensionMismatch { expected: self.d, got: uk.len() });
            }
            if vk.dim() != self.d {
                return Err(Error::DimensionMismatch { expected: self.d, got: vk.dim() });
            }
            if k == 0 && (uk.iter().any(|&x| x != 0.0) || vk.max_abs_entry() != 0.0) {
                return Err(Error::InvalidArgument(
                    "paths must start at the origin".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn interpolate(&self) -> InterpolatedPath<'_> {
        InterpolatedPath { path: self }
    }

    /// Writes knots as CSV: k, t, u components, then v entries row-major.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "k,t")?;
        for i in 0..self.d {
            write!(out, ",u{i}")?;
        }
        for i in 0..self.d {
            for j in 0..self.d {
                write!(out, ",v{i}{j}")?;
            }
        }
        writeln!(out)?;
        for k in 0..=self.n {
            write!(out, "{k},{}", k as f64 / self.n as f64)?;
            for i in 0..self.d {
                write!(out, ",{}", self.u[k][i])?;
            }
            for i in 0..self.d {
                for j in 0..self.d {
                    write!(out, ",{}", self.v[k].get(i, j))?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Piecewise-linear evaluation rule over the knots of a path pair.
/// Exact at t = k/n, affine in between; t = 1 clamps to the last knot.
#[derive(Debug, Clone, Copy)]
pub struct InterpolatedPath<'a> {
    path: &'a DiscretePathPair,
}

impl<'a> InterpolatedPath<'a> {
    pub fn knots(&self) -> &'a DiscretePathPair {
        self.path
    }

    pub fn n(&self) -> usize {
        self.path.n
    }

    pub fn dim(&self) -> usize {
        self.path.d
    }

    fn segment(&self, t: f64) -> Result<(usize, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
        }
        let nt = self.path.n as f64 * t;
        // Clamping the segment index to n-1 realizes the t = 1 convention.
        let k = (nt.floor() as usize).min(self.path.n.saturating_sub(1));
        Ok((k, nt - k as f64))
    }

    /// Martingale component at time t.
    pub fn eval_u(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = self.segment(t)?;
        Ok((0..self.path.d)
            .map(|i| (1.0 - w) * self.path.u[k][i] + w * self.path.u[k + 1][i])
            .collect())
    }

    /// Quadratic-variation component at time t.
    pub fn eval_v(&self, t: f64) -> Result<SymMatrix> {
        let (k, w) = self.segment(t)?;
        Ok(self.path.v[k].scale(1.0 - w).add(&self.path.v[k + 1].scale(w)))
    }

    /// (sup_t ||u_t||_inf, sup_t ||v_t||_op). Piecewise-linear paths attain
    /// their sup at knots, so only knots are scanned.
    pub fn sup_norm(&self) -> (f64, f64) {
        let un = self
            .path
            .u
            .iter()
            .map(|p| p.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .fold(0.0, f64::max);
        let vn = self.path.v.iter().map(|m| m.operator_norm()).fold(0.0, f64::max);
        (un, vn)
    }

    /// Sup distance to another path on the same grid, again knot-exact.
    pub fn sup_distance(&self, other: &InterpolatedPath) -> (f64, f64) {
        assert_eq!(self.path.n, other.path.n);
        let du = self
            .path
            .u
            .iter()
            .zip(&other.path.u)
            .map(|(a, b)| {
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
            })
            .fold(0.0, f64::max);
        let dv = self
            .path
            .v
            .iter()
            .zip(&other.path.v)
            .map(|(a, b)| a.sub(b).operator_norm())
            .fold(0.0, f64::max);
        (du, dv)
    }
}

/// Cumulative predictable variation of a control sequence:
/// out[0] = 0 and out[k] = (1/n) sum_{j <= k} controls[j-1]^2.
pub fn predictable_variation(n: usize, controls: &[SymMatrix]) -> Result<Vec<SymMatrix>> {
    if n == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    let d = controls.first().map_or(0, |c| c.dim());
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(SymMatrix::zeros(d.max(1)));
    let mut acc = SymMatrix::zeros(d.max(1));
    for c in controls {
        if c.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
        }
        acc = acc.add(&c.square().scale(1.0 / n as f64));
        out.push(acc.clone());
    }
    Ok(out)
}
