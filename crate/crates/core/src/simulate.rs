//! Forward Monte Carlo under extracted policies.
//!
//! `simulate_discrete` replays the controlled random walk the solver
//! optimized, estimating the solved value. `simulate_continuous` drives the
//! same policy with Brownian increments: within coarse step k the volatility
//! is frozen at the policy's choice for the observed coarse skeleton, which
//! realizes a genuine martingale law with covariance rate inside the domain.
//!
//! Both are bit-reproducible for a fixed seed at any thread count: path i
//! draws from substream (seed, i), and moments are reduced by a fixed-shape
//! pairwise tree over the ordered path results.

use std::io::Write;

use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::noise::NoiseDistribution;
use crate::path::DiscretePathPair;
use crate::payoff::{MarkovDescriptor, PayoffFunctional};
use crate::rng::substream;
use crate::solver::{PolicyTables, SolverKind, ValueAndPolicy};

/// Fraction of failed paths above which the estimate is invalidated.
const MAX_FAILED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimulationEstimate {
    pub mean: f64,
    /// Sample standard deviation / sqrt(number of successful paths).
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths dropped because a policy lookup left the state grid.
    pub failed_paths: usize,
    /// Steps whose realized covariance rate fell outside the domain
    /// (continuous mode; always 0 for grid controls within tolerance).
    pub vol_violations: usize,
}

/// Deterministic pairwise sum; the reduction shape depends only on `len`.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        len => {
            let mid = len / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Two-pass mean and standard error with pairwise accumulation.
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let sq: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One realized discrete path: the pair, the control index per step, and the
/// payoff value.
pub struct RealizedPath {
    pub path: DiscretePathPair,
    pub controls: Vec<usize>,
    pub value: f64,
}

fn check_noise_matches_tree(vp: &ValueAndPolicy, noise: &NoiseDistribution) -> Result<()> {
    let tree = match &vp.tables {
        PolicyTables::Tree(t) => t,
        PolicyTables::Lattice(_) => return Ok(()),
    };
    let rule = noise.finite_atoms().ok_or_else(|| {
        Error::InvalidArgument(
            "tree policies replay finite-support noise only".into(),
        )
    })?;
    let same = rule.nodes.len() == tree.atoms.len()
        && rule.nodes.iter().zip(&tree.atoms).all(|(p, a)| {
            p.iter().zip(&a.point).all(|(x, y)| (x - y).abs() <= 1e-12)
        })
        && rule.weights.iter().zip(&tree.atoms).all(|(&w, a)| (w - a.prob).abs() <= 1e-12);
    if !same {
        return Err(Error::InvalidArgument(
            "sampling distribution does not match the one the policy was solved \
             under"
                .into(),
        ));
    }
    Ok(())
}

/// Plays the policy forward on one sampled noise sequence.
fn run_one_discrete(
    vp: &ValueAndPolicy,
    noise: &NoiseDistribution,
    payoff: &PayoffFunctional,
    seed: u64,
    index: u64,
) -> Result<RealizedPath> {
    let n = vp.n;
    let d = vp.d;
    let mut rng = substream(seed, index);
    let mut path = DiscretePathPair::new(n, d);
    let mut controls = Vec::with_capacity(n);
    let sqrt_n = (n as f64).sqrt();

    match &vp.tables {
        PolicyTables::Tree(tree) => {
            let mut state = 0usize;
            for k in 0..n {
                let c = tree.control_at(k, state);
                let y = noise.draw_index(&mut rng);
                let gamma = &vp.grid.controls[c];
                let step = gamma.mul_vec(&tree.atoms[y].point);
                for (i, si) in step.iter().enumerate() {
                    path.u[k + 1][i] = path.u[k][i] + si / sqrt_n;
                }
                path.v[k + 1] = path.v[k].add(&gamma.square().scale(1.0 / n as f64));
                state = tree.advance(state, c, y);
                controls.push(c);
            }
        }
        PolicyTables::Lattice(lat) => {
            let v_axes = lat.v_axes;
            let mut coords = vec![0.0; lat.axes.len()];
            for k in 0..n {
                let c = lat.control_near(k, &coords)?;
                let diag = &lat.control_diags[c];
                let y = noise.draw(&mut rng);
                for i in 0..d {
                    path.u[k + 1][i] = path.u[k][i] + diag[i] * y[i] / sqrt_n;
                    coords[i] = path.u[k + 1][i];
                }
                let mut vk = path.v[k].clone();
                for j in 0..v_axes {
                    let vjj = vk.get(j, j) + diag[j] * diag[j] / n as f64;
                    vk.set(j, j, vjj);
                    coords[d + j] = vjj;
                }
                path.v[k + 1] = vk;
                if lat.has_aux() {
                    coords[d + v_axes] = match lat.descriptor {
                        MarkovDescriptor::TerminalPlusRunningMax => {
                            coords[d + v_axes].max(path.u[k + 1][0])
                        }
                        MarkovDescriptor::PathAverage => {
                            coords[d + v_axes]
                                + 0.5 * (path.u[k][0] + path.u[k + 1][0]) / n as f64
                        }
                        _ => coords[d + v_axes],
                    };
                }
                controls.push(c);
            }
        }
    }
    let value = payoff.evaluate(&path.interpolate())?;
    Ok(RealizedPath { path, controls, value })
}

/// Estimates the solved value by replaying the policy over `n_paths`
/// independent noise sequences.
pub fn simulate_discrete(
    vp: &ValueAndPolicy,
    noise: &NoiseDistribution,
    payoff: &PayoffFunctional,
    n_paths: usize,
    seed: u64,
) -> Result<SimulationEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    if noise.dim() != vp.d {
        return Err(Error::DimensionMismatch { expected: vp.d, got: noise.dim() });
    }
    check_noise_matches_tree(vp, noise)?;

    let results: Vec<Result<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| run_one_discrete(vp, noise, payoff, seed, i).map(|r| r.value))
        .collect();
    finish(results, n_paths, seed, 0)
}

/// Sequential variant invoking `visit` on every realized path; used for CSV
/// dumps and for tests that inspect realized controls. Same substreams, so
/// values agree bit-exactly with `simulate_discrete`.
pub fn simulate_discrete_visit(
    vp: &ValueAndPolicy,
    noise: &NoiseDistribution,
    payoff: &PayoffFunctional,
    n_paths: usize,
    seed: u64,
    mut visit: impl FnMut(u64, &RealizedPath),
) -> Result<SimulationEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    check_noise_matches_tree(vp, noise)?;
    let mut results = Vec::with_capacity(n_paths);
    for i in 0..n_paths as u64 {
        let r = run_one_discrete(vp, noise, payoff, seed, i);
        if let Ok(ref rp) = r {
            visit(i, rp);
        }
        results.push(r.map(|rp| rp.value));
    }
    finish(results, n_paths, seed, 0)
}

/// Writes one CSV row per knot per path: index, time, state, control, payoff
/// (payoff on the terminal knot only).
pub fn dump_realized_path<W: Write>(
    out: &mut W,
    index: u64,
    realized: &RealizedPath,
    header: bool,
) -> Result<()> {
    let p = &realized.path;
    if header {
        write!(out, "path,k,t")?;
        for i in 0..p.d {
            write!(out, ",u{i}")?;
        }
        for i in 0..p.d {
            for j in 0..p.d {
                write!(out, ",v{i}{j}")?;
            }
        }
        writeln!(out, ",control,payoff")?;
    }
    for k in 0..=p.n {
        write!(out, "{index},{k},{}", k as f64 / p.n as f64)?;
        for i in 0..p.d {
            write!(out, ",{}", p.u[k][i])?;
        }
        for i in 0..p.d {
            for j in 0..p.d {
                write!(out, ",{}", p.v[k].get(i, j))?;
            }
        }
        if k < p.n {
            writeln!(out, ",{},", realized.controls[k])?;
        } else {
            writeln!(out, ",,{}", realized.value)?;
        }
    }
    Ok(())
}

fn finish(
    results: Vec<Result<f64>>,
    n_paths: usize,
    seed: u64,
    vol_violations: usize,
) -> Result<SimulationEstimate> {
    let mut values = Vec::with_capacity(n_paths);
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(Error::OutOfGrid(_)) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if (failed as f64) > MAX_FAILED_FRACTION * n_paths as f64 {
        return Err(Error::TooManyFailedPaths {
            failed: failed as u64,
            total: n_paths as u64,
        });
    }
    let (mean, stderr) = mean_stderr(&values);
    Ok(SimulationEstimate { mean, stderr, n_paths, seed, failed_paths: failed, vol_violations })
}

fn run_one_continuous(
    vp: &ValueAndPolicy,
    payoff: &PayoffFunctional,
    substeps: usize,
    seed: u64,
    index: u64,
) -> Result<(f64, usize)> {
    let lat = match &vp.tables {
        PolicyTables::Lattice(l) => l,
        PolicyTables::Tree(_) => unreachable!("checked by caller"),
    };
    let n = vp.n;
    let d = vp.d;
    let fine = n * substeps;
    let dt = 1.0 / fine as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = substream(seed, index);
    let mut path = DiscretePathPair::new(fine, d);
    let mut coords = vec![0.0; lat.axes.len()];
    let v_axes = lat.v_axes;
    let mut violations = 0usize;

    for k in 0..n {
        // Volatility frozen over the coarse step at the policy's choice for
        // the discrete skeleton observed so far.
        let c = lat.control_near(k, &coords)?;
        let diag = &lat.control_diags[c];
        let z = SymMatrix::diag(diag);
        if !vp.domain.contains(&z.square())? {
            violations += 1;
        }
        for s in 0..substeps {
            let j = k * substeps + s;
            let mut vj = path.v[j].clone();
            for (i, &di) in diag.iter().enumerate() {
                let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                path.u[j + 1][i] = path.u[j][i] + di * sqrt_dt * g;
                // QV accrues the known z^2 dt, not realized squares.
                vj.set(i, i, vj.get(i, i) + di * di * dt);
            }
            path.v[j + 1] = vj;
        }
        let knot = (k + 1) * substeps;
        coords[..d].copy_from_slice(&path.u[knot][..d]);
        for j in 0..v_axes {
            coords[d + j] = path.v[knot].get(j, j);
        }
        if lat.has_aux() {
            coords[d + v_axes] = match lat.descriptor {
                MarkovDescriptor::TerminalPlusRunningMax => {
                    coords[d + v_axes].max(path.u[knot][0])
                }
                MarkovDescriptor::PathAverage => {
                    coords[d + v_axes]
                        + 0.5
                            * (path.u[knot - substeps][0] + path.u[knot][0])
                            / n as f64
                }
                _ => coords[d + v_axes],
            };
        }
    }
    let value = payoff.evaluate(&path.interpolate())?;
    Ok((value, violations))
}

/// Estimates the payoff expectation under the continuous-time martingale law
/// induced by the lattice policy: Brownian motion with piecewise-constant
/// volatility, `substeps` fine steps per coarse stage.
pub fn simulate_continuous(
    vp: &ValueAndPolicy,
    payoff: &PayoffFunctional,
    substeps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<SimulationEstimate> {
    if n_paths == 0 || substeps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one path and one substep".into(),
        ));
    }
    if vp.kind != SolverKind::Lattice {
        return Err(Error::InvalidArgument(
            "continuous simulation needs a lattice policy (solved under the \
             standard normal law)"
                .into(),
        ));
    }
    if vp.diagnostics.quadrature_exactness.is_none() {
        return Err(Error::InvalidArgument(
            "continuous simulation needs a policy solved under the standard \
             normal law, not a finite-support one"
                .into(),
        ));
    }

    let results: Vec<Result<(f64, usize)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| run_one_continuous(vp, payoff, substeps, seed, i))
        .collect();
    let violations = results
        .iter()
        .map(|r| if let Ok((_, v)) = r { *v } else { 0 })
        .sum();
    let flat: Vec<Result<f64>> =
        results.into_iter().map(|r| r.map(|(v, _)| v)).collect();
    finish(flat, n_paths, seed, violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::UncertaintyDomain;
    use crate::noise::NoiseDistribution;
    use crate::path::predictable_variation;
    use crate::payoff::PayoffSpec;
    use crate::solver::{solve_lattice, solve_tree, LatticeConfig};

    fn tree_instance() -> (ValueAndPolicy, NoiseDistribution, crate::payoff::PayoffFunctional)
    {
        let domain = UncertaintyDomain::ScalarInterval { a_low: 0.04, a_high: 0.25 };
        let grid = domain.sqrt_grid(4).unwrap();
        let noise = NoiseDistribution::Rademacher { d: 1 };
        let payoff = PayoffSpec::TerminalCall { strike: 0.0 }.build().unwrap();
        let vp = solve_tree(&payoff, &grid, &noise, 4).unwrap();
        (vp, noise, payoff)
    }

    #[test]
    fn isometry_instance_concentrates_at_one() {
        let domain = UncertaintyDomain::ScalarInterval { a_low: 1.0, a_high: 1.0 };
        let grid = domain.sqrt_grid(1).unwrap();
        let noise = NoiseDistribution::Rademacher { d: 1 };
        let payoff = PayoffSpec::TerminalSquare.build().unwrap();
        let vp = solve_tree(&payoff, &grid, &noise, 4).unwrap();
        let est = simulate_discrete(&vp, &noise, &payoff, 100_000, 7).unwrap();
        assert!(
            (est.mean - 1.0).abs() <= 3.0 * est.stderr,
            "mean {} stderr {}",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn estimates_cover_the_tree_value() {
        let (vp, noise, payoff) = tree_instance();
        let est = simulate_discrete(&vp, &noise, &payoff, 100_000, 11).unwrap();
        assert!(
            (est.mean - vp.value).abs() <= 3.0 * est.stderr,
            "mean {} value {} stderr {}",
            est.mean,
            vp.value,
            est.stderr
        );
    }

    #[test]
    fn same_seed_gives_identical_estimates() {
        let (vp, noise, payoff) = tree_instance();
        let a = simulate_discrete(&vp, &noise, &payoff, 20_000, 99).unwrap();
        let b = simulate_discrete(&vp, &noise, &payoff, 20_000, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequential_visit_agrees_with_the_parallel_estimate() {
        let (vp, noise, payoff) = tree_instance();
        let par = simulate_discrete(&vp, &noise, &payoff, 5_000, 3).unwrap();
        let mut seen = 0usize;
        let seq =
            simulate_discrete_visit(&vp, &noise, &payoff, 5_000, 3, |_, _| seen += 1)
                .unwrap();
        assert_eq!(par, seq);
        assert_eq!(seen, 5_000);
    }

    #[test]
    fn realized_quadratic_variation_matches_the_controls() {
        let (vp, noise, payoff) = tree_instance();
        simulate_discrete_visit(&vp, &noise, &payoff, 50, 5, |_, rp| {
            let gammas: Vec<SymMatrix> =
                rp.controls.iter().map(|&c| vp.grid.controls[c].clone()).collect();
            let pv = predictable_variation(vp.n, &gammas).unwrap();
            for (k, pvk) in pv.iter().enumerate() {
                assert!(rp.path.v[k].approx_eq(pvk, 0.0), "exact QV identity");
            }
        })
        .unwrap();
    }

    #[test]
    fn terminal_mean_is_a_martingale() {
        let (vp, noise, payoff) = tree_instance();
        let mut terminal = Vec::new();
        simulate_discrete_visit(&vp, &noise, &payoff, 50_000, 21, |_, rp| {
            terminal.push(rp.path.u[vp.n][0]);
        })
        .unwrap();
        let (mean, stderr) = mean_stderr(&terminal);
        assert!(mean.abs() <= 4.0 * stderr, "martingale mean {mean} stderr {stderr}");
    }

    #[test]
    fn wrong_noise_is_rejected() {
        let (vp, _, payoff) = tree_instance();
        let skewed = NoiseDistribution::FiniteSupport {
            atoms: vec![
                crate::noise::Atom { point: vec![2.0], prob: 0.2 },
                crate::noise::Atom { point: vec![-0.5], prob: 0.8 },
            ],
        };
        assert!(simulate_discrete(&vp, &skewed, &payoff, 10, 1).is_err());
    }

    #[test]
    fn lattice_policy_replays_through_the_state_grid() {
        let domain = UncertaintyDomain::ScalarInterval { a_low: 0.04, a_high: 0.25 };
        let grid = domain.sqrt_grid(8).unwrap();
        let noise = NoiseDistribution::Rademacher { d: 1 };
        let payoff = PayoffSpec::TerminalCall { strike: 0.0 }.build().unwrap();
        let quad = noise.quadrature(2).unwrap();
        let cfg = LatticeConfig { compute_richardson: false, ..Default::default() };
        let vp = solve_lattice(&payoff, &grid, &quad, 8, &cfg).unwrap();
        let est = simulate_discrete(&vp, &noise, &payoff, 100_000, 13).unwrap();
        assert_eq!(est.failed_paths, 0);
        assert!(
            (est.mean - vp.value).abs() <= 3.0 * est.stderr + 1e-2,
            "mean {} value {} stderr {}",
            est.mean,
            vp.value,
            est.stderr
        );
    }

    #[test]
    fn singleton_continuous_simulation_is_brownian() {
        // D = {0.25}: M = 0.5 W exactly, so E u(1)^2 = 0.25.
        let domain = UncertaintyDomain::ScalarInterval { a_low: 0.25, a_high: 0.25 };
        let grid = domain.sqrt_grid(1).unwrap();
        let payoff = PayoffSpec::TerminalSquare.build().unwrap();
        let quad = NoiseDistribution::StandardNormal { d: 1 }.quadrature(7).unwrap();
        let cfg = LatticeConfig {
            u_points: 241,
            v_points: 9,
            compute_richardson: false,
            ..Default::default()
        };
        let vp = solve_lattice(&payoff, &grid, &quad, 4, &cfg).unwrap();
        let est = simulate_continuous(&vp, &payoff, 8, 50_000, 17).unwrap();
        assert_eq!(est.vol_violations, 0);
        assert!(
            (est.mean - 0.25).abs() <= 3.0 * est.stderr,
            "mean {} stderr {}",
            est.mean,
            est.stderr
        );
    }

    #[test]
    fn continuous_needs_a_normal_solved_lattice() {
        let (vp, _, payoff) = tree_instance();
        assert!(simulate_continuous(&vp, &payoff, 4, 10, 1).is_err());
    }

    #[test]
    fn csv_dump_is_written() {
        let (vp, noise, payoff) = tree_instance();
        let mut buf = Vec::new();
        let mut first = true;
        simulate_discrete_visit(&vp, &noise, &payoff, 3, 2, |i, rp| {
            dump_realized_path(&mut buf, i, rp, first).unwrap();
            first = false;
        })
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path,k,t,u0,v00,control,payoff"));
        // 3 paths, 5 knots each, plus the header.
        assert_eq!(text.lines().count(), 1 + 3 * 5);
    }
}
