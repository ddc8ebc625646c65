use thiserror::Error;

/// Errors produced by solvers, simulators and validators.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.3e} below -{tol:.3e}")]
    NotPsd { eigenvalue: f64, tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "tree solver budget exceeded: {required:.3e} leaf evaluations > budget {budget:.3e}; \
         use the lattice solver or a smaller step count"
    )]
    TreeBudgetExceeded { required: f64, budget: f64 },

    #[error("lattice state left the grid by more than the extrapolation margin: {0}")]
    OutOfGrid(String),

    #[error("payoff evaluated to a non-finite value ({value}) on a valid path")]
    NonFinitePayoff { value: f64 },

    #[error("policy iteration did not converge within {sweeps} sweeps (residual {residual:.3e})")]
    PolicyIterationDiverged { sweeps: usize, residual: f64 },

    #[error("explicit time stepping is unstable: dt {dt:.3e} > dx^2/a_high {limit:.3e}")]
    ExplicitUnstable { dt: f64, limit: f64 },

    #[error("simulation invalidated: {failed} of {total} paths failed policy lookup")]
    TooManyFailedPaths { failed: u64, total: u64 },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
