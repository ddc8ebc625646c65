//! State-reduced solver on a rectangular grid.
//!
//! Applicable when the payoff declares a Markov descriptor: the full history
//! collapses to (u, v diagonal, optional auxiliary scalar). Stage tables are
//! evaluated by multilinear interpolation; query points that fall outside the
//! grid are linearly extrapolated within a two-cell band and clamped to that
//! band beyond it (the band edge sits in the far tail of the truncation box,
//! where clamping bias is negligible; public queries error instead).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ControlGrid, UncertaintyDomain};
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::noise::QuadratureRule;
use crate::payoff::{MarkovDescriptor, PayoffFunctional, ReducedState};
use crate::solver::{Axis, PolicyTables, SolverDiagnostics, SolverKind, ValueAndPolicy};

/// Cells of linear extrapolation tolerated outside each axis.
const EXTRAP_CELLS: f64 = 2.0;

/// Boundary-hit probability above which a truncation warning is recorded.
const BOUNDARY_WARN_PROB: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Points per martingale axis; odd, so the origin is a grid point.
    pub u_points: usize,
    /// Points per quadratic-variation axis.
    pub v_points: usize,
    /// Points on the auxiliary axis (running max / running average).
    pub aux_points: usize,
    /// Half-width of the u box in units of sqrt(max variance).
    pub truncation_multiplier: f64,
    /// Re-solve at half resolution and report the value shift.
    pub compute_richardson: bool,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            u_points: 961,
            v_points: 33,
            aux_points: 129,
            truncation_multiplier: 6.0,
            compute_richardson: true,
        }
    }
}

impl LatticeConfig {
    /// Defaults sized for the state-count growth in dimension d.
    pub fn default_for_dim(d: usize) -> Self {
        match d {
            0 | 1 => LatticeConfig::default(),
            2 => LatticeConfig { u_points: 121, v_points: 17, aux_points: 33, ..Default::default() },
            _ => LatticeConfig { u_points: 41, v_points: 9, aux_points: 17, ..Default::default() },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.u_points < 5 || self.u_points.is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "u_points must be odd and >= 5 so the origin is a grid point".into(),
            ));
        }
        if self.v_points < 2 {
            return Err(Error::InvalidArgument("v_points must be >= 2".into()));
        }
        if self.aux_points < 3 || self.aux_points.is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "aux_points must be odd and >= 3".into(),
            ));
        }
        if self.truncation_multiplier.is_nan() || self.truncation_multiplier <= 0.0 {
            return Err(Error::InvalidArgument(
                "truncation multiplier must be > 0".into(),
            ));
        }
        Ok(())
    }

    fn halved(&self) -> Self {
        LatticeConfig {
            u_points: (self.u_points - 1) / 2 + 1,
            v_points: (self.v_points - 1) / 2 + 1,
            aux_points: (self.aux_points - 1) / 2 + 1,
            truncation_multiplier: self.truncation_multiplier,
            compute_richardson: false,
        }
    }
}

/// Shape data serialized alongside the lattice tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeHeader {
    pub axes: Vec<Axis>,
    pub u_axes: usize,
    pub v_axes: usize,
    pub descriptor: MarkovDescriptor,
    pub control_diags: Vec<Vec<f64>>,
}

/// Stage tables over the rectangular state space. States are indexed
/// row-major over the axes (u axes, then v axes, then the aux axis), last
/// axis fastest.
#[derive(Debug, Clone)]
pub struct LatticePolicy {
    pub axes: Vec<Axis>,
    pub u_axes: usize,
    pub v_axes: usize,
    pub descriptor: MarkovDescriptor,
    pub control_diags: Vec<Vec<f64>>,
    /// J_k for k = 0..=n (n+1 tables; table n is the terminal payoff).
    pub stage_values: Vec<Vec<f64>>,
    /// Argmax control index for k = 0..n-1.
    pub stage_policy: Vec<Vec<u16>>,
}

impl LatticePolicy {
    pub fn header(&self) -> LatticeHeader {
        LatticeHeader {
            axes: self.axes.clone(),
            u_axes: self.u_axes,
            v_axes: self.v_axes,
            descriptor: self.descriptor,
            control_diags: self.control_diags.clone(),
        }
    }

    pub fn from_parts(
        header: LatticeHeader,
        stage_values: Vec<Vec<f64>>,
        stage_policy: Vec<Vec<u16>>,
    ) -> Result<Self> {
        if stage_values.len() != stage_policy.len() + 1 {
            return Err(Error::Serialization(
                "lattice stage table counts do not match".into(),
            ));
        }
        Ok(LatticePolicy {
            axes: header.axes,
            u_axes: header.u_axes,
            v_axes: header.v_axes,
            descriptor: header.descriptor,
            control_diags: header.control_diags,
            stage_values,
            stage_policy,
        })
    }

    pub fn has_aux(&self) -> bool {
        self.axes.len() > self.u_axes + self.v_axes
    }

    fn space(&self) -> StateSpace {
        StateSpace::new(self.axes.clone())
    }

    /// Value function J_k at an arbitrary in-grid state. Errors outside the
    /// extrapolation band.
    pub fn value_at(&self, stage: usize, coords: &[f64]) -> Result<f64> {
        if stage >= self.stage_values.len() {
            return Err(Error::InvalidArgument(format!("stage {stage} out of range")));
        }
        let space = self.space();
        space.check_in_band(coords)?;
        Ok(space.interp(&self.stage_values[stage], coords))
    }

    /// Control index at the state-grid point nearest to `coords`.
    pub fn control_near(&self, stage: usize, coords: &[f64]) -> Result<usize> {
        if stage >= self.stage_policy.len() {
            return Err(Error::InvalidArgument(format!("stage {stage} out of range")));
        }
        let space = self.space();
        space.check_in_band(coords)?;
        Ok(self.stage_policy[stage][space.nearest(coords)] as usize)
    }
}

/// Rectangular state space with row-major indexing helpers.
struct StateSpace {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    total: usize,
}

impl StateSpace {
    fn new(axes: Vec<Axis>) -> Self {
        let mut strides = vec![1usize; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].points;
        }
        let total = axes.iter().map(|a| a.points).product();
        StateSpace { axes, strides, total }
    }

    fn coords_of(&self, mut idx: usize, out: &mut [f64]) {
        for (i, axis) in self.axes.iter().enumerate() {
            let j = idx / self.strides[i];
            idx %= self.strides[i];
            out[i] = axis.lo + axis.step() * j as f64;
        }
    }

    fn root_index(&self) -> usize {
        let mut idx = 0;
        for (i, axis) in self.axes.iter().enumerate() {
            // Index of coordinate 0.0 on this axis; axes are built so that
            // the origin is a grid point.
            let j = ((0.0 - axis.lo) / axis.step()).round() as usize;
            idx += j.min(axis.points - 1) * self.strides[i];
        }
        idx
    }

    /// Fractional per-axis position clamped into the extrapolation band.
    #[inline]
    fn frac(&self, i: usize, x: f64) -> (usize, f64) {
        let axis = &self.axes[i];
        let mut f = (x - axis.lo) / axis.step();
        let hi = (axis.points - 1) as f64;
        if f < -EXTRAP_CELLS {
            f = -EXTRAP_CELLS;
        } else if f > hi + EXTRAP_CELLS {
            f = hi + EXTRAP_CELLS;
        }
        let base = (f.floor() as isize).clamp(0, axis.points as isize - 2) as usize;
        (base, f - base as f64)
    }

    /// Multilinear interpolation with linear extrapolation inside the band.
    fn interp(&self, table: &[f64], coords: &[f64]) -> f64 {
        debug_assert_eq!(table.len(), self.total);
        let a = self.axes.len();
        let mut base = [0usize; 16];
        let mut w = [0.0f64; 16];
        for i in 0..a {
            let (b, f) = self.frac(i, coords[i]);
            base[i] = b;
            w[i] = f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << a) {
            let mut idx = 0;
            let mut weight = 1.0;
            for i in 0..a {
                let hi = (corner >> i) & 1;
                idx += (base[i] + hi) * self.strides[i];
                weight *= if hi == 1 { w[i] } else { 1.0 - w[i] };
            }
            if weight != 0.0 {
                acc += weight * table[idx];
            }
        }
        acc
    }

    fn check_in_band(&self, coords: &[f64]) -> Result<()> {
        if coords.len() != self.axes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.axes.len(),
                got: coords.len(),
            });
        }
        for (i, (&x, axis)) in coords.iter().zip(&self.axes).enumerate() {
            let f = (x - axis.lo) / axis.step();
            if f < -EXTRAP_CELLS || f > (axis.points - 1) as f64 + EXTRAP_CELLS {
                return Err(Error::OutOfGrid(format!(
                    "axis {} ({}): coordinate {x} outside [{}, {}] plus {} cells",
                    i, axis.label, axis.lo, axis.hi, EXTRAP_CELLS
                )));
            }
        }
        Ok(())
    }

    fn nearest(&self, coords: &[f64]) -> usize {
        let mut idx = 0;
        for (i, (&x, axis)) in coords.iter().zip(&self.axes).enumerate() {
            let j = ((x - axis.lo) / axis.step()).round() as isize;
            idx += (j.clamp(0, axis.points as isize - 1) as usize) * self.strides[i];
        }
        idx
    }
}

/// Diagonal entries of every control; errors when any control is not
/// diagonal within the grid tolerance (the lattice tracks v as a diagonal).
fn diagonal_controls(grid: &ControlGrid, d: usize) -> Result<Vec<Vec<f64>>> {
    let tol = grid.domain.tol();
    grid.controls
        .iter()
        .map(|c| {
            for i in 0..d {
                for j in 0..d {
                    if i != j && c.get(i, j).abs() > tol {
                        return Err(Error::InvalidArgument(
                            "lattice solver supports diagonal controls only; use the \
                             tree solver for dense domains"
                                .into(),
                        ));
                    }
                }
            }
            Ok((0..d).map(|i| c.get(i, i)).collect())
        })
        .collect()
}

/// Survival function of the standard normal, accurate to ~1e-7
/// (Abramowitz-Stegun 7.1.26 via erf); used only for warning thresholds.
fn normal_sf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * z.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf_abs = 1.0 - poly * (-z * z).exp();
    let erf = if z < 0.0 { -erf_abs } else { erf_abs };
    0.5 * (1.0 - erf)
}

pub fn solve_lattice(
    payoff: &PayoffFunctional,
    grid: &ControlGrid,
    quad: &QuadratureRule,
    n: usize,
    config: &LatticeConfig,
) -> Result<ValueAndPolicy> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("control grid is empty".into()));
    }
    if payoff.markov == MarkovDescriptor::None || !payoff.has_reduced() {
        return Err(Error::InvalidArgument(format!(
            "payoff '{}' declares no Markov state; only the tree solver applies",
            payoff.name
        )));
    }
    if matches!(grid.domain, UncertaintyDomain::ConvexHull { .. }) {
        return Err(Error::InvalidArgument(
            "convex-hull domains produce dense controls; the lattice solver \
             supports scalar, isotropic and diagonal domains"
                .into(),
        ));
    }
    let d = payoff.d;
    if grid.domain.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: grid.domain.dim() });
    }
    if quad.nodes.is_empty() || quad.nodes[0].len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: quad.nodes.first().map_or(0, |x| x.len()),
        });
    }
    if grid.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "control grid too large for policy encoding: {} > {}",
            grid.len(),
            u16::MAX
        )));
    }
    let control_diags = diagonal_controls(grid, d)?;

    let mut vp = solve_inner(payoff, grid, quad, n, config, &control_diags)?;
    if config.compute_richardson {
        let coarse =
            solve_inner(payoff, grid, quad, n, &config.halved(), &control_diags)?;
        vp.diagnostics.richardson_error = Some((vp.value - coarse.value).abs());
    }
    Ok(vp)
}

fn solve_inner(
    payoff: &PayoffFunctional,
    grid: &ControlGrid,
    quad: &QuadratureRule,
    n: usize,
    config: &LatticeConfig,
    control_diags: &[Vec<f64>],
) -> Result<ValueAndPolicy> {
    let d = payoff.d;
    let norm = grid.domain.norm();
    let r_u = config.truncation_multiplier * norm.sqrt().max(f64::MIN_POSITIVE);

    // Per-axis maximal variance bounds the reachable v exactly.
    let v_caps: Vec<f64> = match &grid.domain {
        UncertaintyDomain::ScalarInterval { a_high, .. } => vec![a_high.max(0.0)],
        UncertaintyDomain::IsotropicInterval { d, a_high, .. } => {
            vec![a_high.max(0.0); *d]
        }
        UncertaintyDomain::DiagonalBox { intervals } => {
            intervals.iter().map(|&(_, hi)| hi.max(0.0)).collect()
        }
        UncertaintyDomain::ConvexHull { .. } => unreachable!("rejected above"),
    };

    let mut axes = Vec::new();
    for i in 0..d {
        axes.push(Axis {
            label: format!("u{i}"),
            lo: -r_u,
            hi: r_u,
            points: config.u_points,
        });
    }
    for (i, &cap) in v_caps.iter().enumerate() {
        // Degenerate zero-variance axes still need a nonzero span.
        let hi = if cap > 0.0 { cap } else { 1e-8 };
        axes.push(Axis { label: format!("v{i}"), lo: 0.0, hi, points: config.v_points });
    }
    match payoff.markov {
        MarkovDescriptor::TerminalPlusRunningMax => axes.push(Axis {
            label: "runmax".into(),
            lo: 0.0,
            hi: r_u,
            points: config.aux_points,
        }),
        MarkovDescriptor::PathAverage => axes.push(Axis {
            label: "runavg".into(),
            lo: -r_u,
            hi: r_u,
            points: config.aux_points,
        }),
        _ => {}
    }

    let v_axes = v_caps.len();
    let space = StateSpace::new(axes.clone());
    let has_aux = space.axes.len() > d + v_axes;
    let a = space.axes.len();
    if a > 16 {
        return Err(Error::InvalidArgument(format!("too many state axes: {a}")));
    }

    // Terminal stage: reduced payoff at every grid state.
    let terminal: Vec<f64> = (0..space.total)
        .into_par_iter()
        .map(|s| {
            let mut coords = [0.0f64; 16];
            space.coords_of(s, &mut coords[..a]);
            let state = ReducedState {
                u: coords[..d].to_vec(),
                v: SymMatrix::diag(&coords[d..d + v_axes]),
                aux: if has_aux { coords[d + v_axes] } else { 0.0 },
            };
            payoff.evaluate_reduced(&state)
        })
        .collect::<Result<Vec<f64>>>()?;

    let sqrt_n = (n as f64).sqrt();
    let inv_n = 1.0 / n as f64;
    let g = grid.len();
    let mut stage_values: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut stage_policy: Vec<Vec<u16>> = Vec::with_capacity(n);
    stage_values.push(terminal);

    for _k in (0..n).rev() {
        let next = stage_values.last().unwrap();
        let step: Vec<(f64, u16)> = (0..space.total)
            .into_par_iter()
            .map(|s| {
                let mut coords = [0.0f64; 16];
                space.coords_of(s, &mut coords[..a]);
                let mut best = f64::NEG_INFINITY;
                let mut best_c = 0u16;
                let mut shifted = [0.0f64; 16];
                for (c, diag) in control_diags.iter().enumerate() {
                    let mut acc = 0.0;
                    for (node, &weight) in quad.nodes.iter().zip(&quad.weights) {
                        for i in 0..d {
                            shifted[i] = coords[i] + diag[i] * node[i] / sqrt_n;
                        }
                        for j in 0..v_axes {
                            // Isotropic and diagonal controls drive v
                            // component-wise; v axis j tracks gamma_j^2/n.
                            let gj = diag[j.min(d - 1)];
                            shifted[d + j] = coords[d + j] + gj * gj * inv_n;
                        }
                        if has_aux {
                            shifted[d + v_axes] = match payoff.markov {
                                MarkovDescriptor::TerminalPlusRunningMax => {
                                    coords[d + v_axes].max(shifted[0])
                                }
                                MarkovDescriptor::PathAverage => {
                                    coords[d + v_axes]
                                        + 0.5 * (coords[0] + shifted[0]) * inv_n
                                }
                                _ => coords[d + v_axes],
                            };
                        }
                        acc += weight * space.interp(next, &shifted[..a]);
                    }
                    // Strictly-greater keeps the lowest index on ties.
                    if acc > best {
                        best = acc;
                        best_c = c as u16;
                    }
                }
                (best, best_c)
            })
            .collect();
        let (values, policy): (Vec<f64>, Vec<u16>) = step.into_iter().unzip();
        stage_values.push(values);
        stage_policy.push(policy);
    }
    stage_values.reverse();
    stage_policy.reverse();

    let value = stage_values[0][space.root_index()];

    let boundary_warning = {
        let p_hit = 4.0 * normal_sf(config.truncation_multiplier);
        (p_hit > BOUNDARY_WARN_PROB).then(|| {
            format!(
                "truncation multiplier {} gives boundary-hit probability ~{p_hit:.2e}; \
                 widen the state box",
                config.truncation_multiplier
            )
        })
    };

    Ok(ValueAndPolicy {
        value,
        n,
        d,
        kind: SolverKind::Lattice,
        payoff_name: payoff.name.clone(),
        domain: grid.domain.clone(),
        grid: grid.clone(),
        tables: PolicyTables::Lattice(LatticePolicy {
            axes,
            u_axes: d,
            v_axes,
            descriptor: payoff.markov,
            control_diags: control_diags.to_vec(),
            stage_values,
            stage_policy,
        }),
        diagnostics: SolverDiagnostics {
            quadrature_exactness: quad.exactness_degree,
            control_resolution: grid.resolution,
            control_count: g,
            state_axes: Some(space.axes.clone()),
            richardson_error: None,
            boundary_warning,
        },
    })
}
