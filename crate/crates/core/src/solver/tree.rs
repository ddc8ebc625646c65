//! Exact full-history solver for finite-support noise.
//!
//! A stage-k state is the realized history of (control, noise node) choices,
//! encoded as a base-(g*q) integer with one digit per step (g controls, q
//! atoms). Stage k has (g*q)^k states, so the solver is exact but limited by
//! the leaf budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ControlGrid;
use crate::error::{Error, Result};
use crate::noise::{Atom, NoiseDistribution};
use crate::path::DiscretePathPair;
use crate::payoff::PayoffFunctional;
use crate::solver::{PolicyTables, SolverDiagnostics, SolverKind, ValueAndPolicy};

/// Default cap on (g*q)^n leaf evaluations.
pub const DEFAULT_TREE_BUDGET: f64 = 1e7;

/// Shape data serialized alongside the tree tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeHeader {
    pub control_count: usize,
    pub atoms: Vec<Atom>,
}

/// Per-stage value tables J_k and argmax tables for k = 0..n-1, indexed by
/// history code. Stage-n values are the payoff itself and are not stored.
#[derive(Debug, Clone)]
pub struct TreePolicy {
    pub control_count: usize,
    pub atoms: Vec<Atom>,
    pub stage_values: Vec<Vec<f64>>,
    pub stage_policy: Vec<Vec<u16>>,
}

impl TreePolicy {
    pub fn header(&self) -> TreeHeader {
        TreeHeader { control_count: self.control_count, atoms: self.atoms.clone() }
    }

    pub fn from_parts(
        header: TreeHeader,
        stage_values: Vec<Vec<f64>>,
        stage_policy: Vec<Vec<u16>>,
    ) -> Result<Self> {
        if stage_values.len() != stage_policy.len() {
            return Err(Error::Serialization(
                "tree stage table counts do not match".into(),
            ));
        }
        Ok(TreePolicy {
            control_count: header.control_count,
            atoms: header.atoms,
            stage_values,
            stage_policy,
        })
    }

    pub fn branch_factor(&self) -> usize {
        self.control_count * self.atoms.len()
    }

    /// Control index chosen at stage k in the given history state.
    pub fn control_at(&self, k: usize, state: usize) -> usize {
        self.stage_policy[k][state] as usize
    }

    /// History state reached after choosing `control` and observing atom
    /// `node` at the current state.
    pub fn advance(&self, state: usize, control: usize, node: usize) -> usize {
        state * self.branch_factor() + control * self.atoms.len() + node
    }
}

/// Decodes a history code at stage `k` into its per-step (control, node)
/// digits, most significant (stage 0) first.
fn decode_history(code: usize, k: usize, branch: usize, q: usize) -> Vec<(usize, usize)> {
    let mut digits = vec![(0usize, 0usize); k];
    let mut rest = code;
    for slot in digits.iter_mut().rev() {
        let digit = rest % branch;
        rest /= branch;
        *slot = (digit / q, digit % q);
    }
    digits
}

/// Path pair realized by a history under the given grid and atoms.
fn history_path(
    history: &[(usize, usize)],
    n: usize,
    grid: &ControlGrid,
    atoms: &[Atom],
    d: usize,
) -> DiscretePathPair {
    let mut path = DiscretePathPair::new(n, d);
    let sqrt_n = (n as f64).sqrt();
    for (k, &(c, y)) in history.iter().enumerate() {
        let gamma = &grid.controls[c];
        let step = gamma.mul_vec(&atoms[y].point);
        for (i, si) in step.iter().enumerate() {
            path.u[k + 1][i] = path.u[k][i] + si / sqrt_n;
        }
        path.v[k + 1] = path.v[k].add(&gamma.square().scale(1.0 / n as f64));
    }
    path
}

pub fn solve_tree(
    payoff: &PayoffFunctional,
    grid: &ControlGrid,
    noise: &NoiseDistribution,
    n: usize,
) -> Result<ValueAndPolicy> {
    solve_tree_budgeted(payoff, grid, noise, n, DEFAULT_TREE_BUDGET)
}

pub fn solve_tree_budgeted(
    payoff: &PayoffFunctional,
    grid: &ControlGrid,
    noise: &NoiseDistribution,
    n: usize,
    budget: f64,
) -> Result<ValueAndPolicy> {
    if n == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("control grid is empty".into()));
    }
    let d = payoff.d;
    if grid.controls[0].dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: grid.controls[0].dim() });
    }
    let rule = noise.finite_atoms().ok_or_else(|| {
        Error::InvalidArgument(
            "tree solver needs finite-support noise; use the lattice solver for \
             continuous laws"
            .into(),
        )
    })?;
    let atoms: Vec<Atom> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(p, &w)| Atom { point: p.clone(), prob: w })
        .collect();
    if noise.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: noise.dim() });
    }
    let g = grid.len();
    let q = atoms.len();
    if g > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "control grid too large for policy encoding: {g} > {}",
            u16::MAX
        )));
    }
    let branch = g * q;
    let required = (branch as f64).powi(n as i32);
    if required > budget {
        return Err(Error::TreeBudgetExceeded { required, budget });
    }

    // Terminal stage: payoff on every realized history path.
    let leaves = branch.pow(n as u32);
    let mut next: Vec<f64> = (0..leaves)
        .into_par_iter()
        .map(|code| {
            let history = decode_history(code, n, branch, q);
            let path = history_path(&history, n, grid, &atoms, d);
            payoff.evaluate(&path.interpolate())
        })
        .collect::<Result<Vec<f64>>>()?;

    let weights: Vec<f64> = atoms.iter().map(|a| a.prob).collect();
    let mut stage_values: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut stage_policy: Vec<Vec<u16>> = Vec::with_capacity(n);

    for k in (0..n).rev() {
        let states = branch.pow(k as u32);
        let step: Vec<(f64, u16)> = (0..states)
            .into_par_iter()
            .map(|s| {
                let mut best = f64::NEG_INFINITY;
                let mut best_c = 0u16;
                for c in 0..g {
                    let mut acc = 0.0;
                    for (y, w) in weights.iter().enumerate() {
                        acc += w * next[s * branch + c * q + y];
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
        next = values.clone();
        stage_values.push(values);
        stage_policy.push(policy);
    }
    stage_values.reverse();
    stage_policy.reverse();

    let value = stage_values[0][0];
    Ok(ValueAndPolicy {
        value,
        n,
        d,
        kind: SolverKind::Tree,
        payoff_name: payoff.name.clone(),
        domain: grid.domain.clone(),
        grid: grid.clone(),
        tables: PolicyTables::Tree(TreePolicy {
            control_count: g,
            atoms,
            stage_values,
            stage_policy,
        }),
        diagnostics: SolverDiagnostics {
            quadrature_exactness: None,
            control_resolution: grid.resolution,
            control_count: g,
            state_axes: None,
            richardson_error: None,
            boundary_warning: None,
        },
    })
}

/// Exact forward expectation of the payoff under the extracted policy:
/// enumerates all q^n noise sequences, walks the policy, and accumulates
/// probability-weighted payoffs. Equals the solved value by construction.
pub fn tree_forward_expectation(
    vp: &ValueAndPolicy,
    payoff: &PayoffFunctional,
) -> Result<f64> {
    let policy = match &vp.tables {
        PolicyTables::Tree(t) => t,
        PolicyTables::Lattice(_) => {
            return Err(Error::InvalidArgument(
                "forward expectation enumeration needs a tree policy".into(),
            ))
        }
    };
    let q = policy.atoms.len();
    let n = vp.n;
    if (q as f64).powi(n as i32) > DEFAULT_TREE_BUDGET {
        return Err(Error::TreeBudgetExceeded {
            required: (q as f64).powi(n as i32),
            budget: DEFAULT_TREE_BUDGET,
        });
    }
    let mut total = 0.0;
    let mut nodes = vec![0usize; n];
    loop {
        let mut state = 0usize;
        let mut weight = 1.0;
        let mut history = Vec::with_capacity(n);
        for (k, &y) in nodes.iter().enumerate() {
            let c = policy.control_at(k, state);
            history.push((c, y));
            weight *= policy.atoms[y].prob;
            state = policy.advance(state, c, y);
        }
        let path = history_path(&history, n, &vp.grid, &policy.atoms, vp.d);
        total += weight * payoff.evaluate(&path.interpolate())?;
        if !crate::domain::advance(&mut nodes, q) {
            break;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::UncertaintyDomain;
    use crate::noise::NoiseDistribution;
    use crate::payoff::PayoffSpec;
    use approx::assert_abs_diff_eq;

    fn rademacher() -> NoiseDistribution {
        NoiseDistribution::Rademacher { d: 1 }
    }

    fn interval_grid(a_low: f64, a_high: f64, res: u32) -> ControlGrid {
        UncertaintyDomain::ScalarInterval { a_low, a_high }.sqrt_grid(res).unwrap()
    }

    #[test]
    fn singleton_square_is_the_isometry() {
        let grid = interval_grid(1.0, 1.0, 1);
        let payoff = PayoffSpec::TerminalSquare.build().unwrap();
        for n in [2, 4, 8] {
            let vp = solve_tree(&payoff, &grid, &rademacher(), n).unwrap();
            assert_abs_diff_eq!(vp.value, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_leaf_call_picks_the_maximal_control() {
        let grid = interval_grid(0.04, 0.25, 4);
        let payoff = PayoffSpec::TerminalCall { strike: 0.0 }.build().unwrap();
        let vp = solve_tree(&payoff, &grid, &rademacher(), 1).unwrap();
        assert_abs_diff_eq!(vp.value, 0.25, epsilon = 1e-12);
        let policy = match &vp.tables {
            PolicyTables::Tree(t) => t,
            _ => unreachable!(),
        };
        assert_eq!(policy.control_at(0, 0), vp.grid.max_norm_index());
    }

    #[test]
    fn constants_are_preserved() {
        let grid = interval_grid(0.04, 0.25, 3);
        let payoff = PayoffSpec::Constant { value: -2.5, d: 1 }.build().unwrap();
        let vp = solve_tree(&payoff, &grid, &rademacher(), 5).unwrap();
        assert_eq!(vp.value, -2.5);
    }

    #[test]
    fn martingale_kills_the_control_for_linear_payoffs() {
        let grid = interval_grid(0.04, 0.25, 6);
        let payoff =
            PayoffSpec::TerminalLinear { slope: 3.0, intercept: 0.25 }.build().unwrap();
        let vp = solve_tree(&payoff, &grid, &rademacher(), 4).unwrap();
        assert_abs_diff_eq!(vp.value, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn penultimate_stage_matches_the_square_formula() {
        // For F = u(1)^2 the stage n-1 table must read u^2 + a_high/n at
        // every reachable history.
        let (a_low, a_high, n) = (0.04, 0.25, 2);
        let grid = interval_grid(a_low, a_high, 4);
        let payoff = PayoffSpec::TerminalSquare.build().unwrap();
        let vp = solve_tree(&payoff, &grid, &rademacher(), n).unwrap();
        let policy = match &vp.tables {
            PolicyTables::Tree(t) => t,
            _ => unreachable!(),
        };
        let branch = policy.branch_factor();
        let q = policy.atoms.len();
        for s in 0..branch {
            let history = decode_history(s, 1, branch, q);
            let path = history_path(&history, n, &vp.grid, &policy.atoms, 1);
            let u1 = path.u[1][0];
            assert_abs_diff_eq!(
                policy.stage_values[1][s],
                u1 * u1 + a_high / n as f64,
                epsilon = 1e-12
            );
        }
        // And the root value follows by one more exact step: E u_1^2 = a_high/n.
        assert_abs_diff_eq!(vp.value, 2.0 * a_high / n as f64, epsilon = 1e-12);
    }

    #[test]
    fn strictly_convex_payoffs_sit_at_the_maximal_control_everywhere() {
        let grid = interval_grid(0.04, 0.25, 2);
        let payoff = PayoffSpec::TerminalSquare.build().unwrap();
        for n in [2, 4, 8] {
            let vp = solve_tree(&payoff, &grid, &rademacher(), n).unwrap();
            let policy = match &vp.tables {
                PolicyTables::Tree(t) => t,
                _ => unreachable!(),
            };
            let top = vp.grid.max_norm_index() as u16;
            for table in &policy.stage_policy {
                assert!(table.iter().all(|&c| c == top));
            }
        }
    }

    #[test]
    fn forward_expectation_reproduces_the_value() {
        let grid = interval_grid(0.04, 0.25, 3);
        for spec in [
            PayoffSpec::TerminalCall { strike: 0.1 },
            PayoffSpec::LookbackMax,
            PayoffSpec::StockCall { s0: 1.0, strike: 1.0, half_convention: false },
        ] {
            let payoff = spec.build().unwrap();
            let vp = solve_tree(&payoff, &grid, &rademacher(), 5).unwrap();
            let forward = tree_forward_expectation(&vp, &payoff).unwrap();
            assert_abs_diff_eq!(forward, vp.value, epsilon = 1e-12);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let grid = interval_grid(0.04, 0.25, 8);
        let payoff = PayoffSpec::TerminalCall { strike: 0.0 }.build().unwrap();
        let err = solve_tree(&payoff, &grid, &rademacher(), 8).unwrap_err();
        assert!(matches!(err, Error::TreeBudgetExceeded { .. }));
    }

    #[test]
    fn continuous_noise_is_rejected() {
        let grid = interval_grid(0.04, 0.25, 2);
        let payoff = PayoffSpec::TerminalCall { strike: 0.0 }.build().unwrap();
        let err =
            solve_tree(&payoff, &grid, &NoiseDistribution::StandardNormal { d: 1 }, 2)
                .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
