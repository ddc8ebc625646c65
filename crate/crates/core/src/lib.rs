//! Solvers, simulators and validation oracles for worst-case expectations of
//! path functionals driven by bounded volatility uncertainty.
//!
//! The centerpiece is a backward dynamic program over discrete martingale
//! increments whose one-step conditional laws are scaled by controls drawn
//! from the square root of a matrix uncertainty set. Its value converges to
//! the continuous-time worst-case expectation; the companion modules supply
//! the noise models, payoff certificates, policy simulators, an independent
//! PDE oracle and convergence diagnostics used to check that claim.

pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod matrix;
pub mod noise;
pub mod oracle;
pub mod path;
pub mod payoff;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod solver;

pub use diagnostics::{
    convergence_study, discretization_scaling, exp_moment_probe, ConvergenceRow,
    ConvergenceTable, ScalingReport, StudyConfig,
};
pub use domain::{ControlGrid, UncertaintyDomain};
pub use error::{Error, Result};
pub use oracle::{
    closed_form_extremal, solve_barenblatt, BarenblattSolution, PdeGrid, Shape,
};
pub use matrix::SymMatrix;
pub use noise::{Atom, MgfReport, MomentReport, NoiseDistribution, QuadratureRule};
pub use path::{predictable_variation, DiscretePathPair, InterpolatedPath};
pub use payoff::{
    lipschitz_bound_check, stock_path, GrowthCheckReport, MarkovDescriptor,
    PayoffFunctional, PayoffSpec, ReducedState,
};
pub use simulate::{
    simulate_continuous, simulate_discrete, simulate_discrete_visit, RealizedPath,
    SimulationEstimate,
};
pub use solver::{
    solve_lattice, solve_tree, tree_forward_expectation, Axis, LatticeConfig,
    PolicyTables, SolverDiagnostics, SolverKind, ValueAndPolicy,
};
