//! Run configuration: a sectioned TOML file merged with flag overrides
//! (flags win). The resolved configuration is embedded in every JSON summary
//! so a run can be reproduced from its own output.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use gexp_core::{NoiseDistribution, PayoffSpec, UncertaintyDomain};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<UncertaintyDomain>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<NoiseDistribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Exact tree when the noise is finite and the leaf budget allows,
    /// otherwise the interpolated lattice.
    Auto,
    Tree,
    Lattice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub kind: SolverChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub control_resolution: u32,
    /// Per-axis quadrature order for continuous noise (finite-support laws
    /// are integrated exactly and ignore this).
    pub quad_order: usize,
    pub tree_budget: f64,
    /// Lattice state-grid sizes; when absent, dimension-based defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_points: Option<usize>,
    pub truncation_multiplier: f64,
    pub richardson: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            kind: SolverChoice::Auto,
            n: None,
            control_resolution: 8,
            quad_order: 8,
            tree_budget: 1e7,
            u_points: None,
            v_points: None,
            aux_points: None,
            truncation_multiplier: 6.0,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Replay the solver's own discrete noise under the extracted policy.
    Discrete,
    /// Drive the policy with fine Brownian steps.
    Continuous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub mode: SimMode,
    pub paths: usize,
    pub seed: u64,
    /// Fine steps per coarse policy step in continuous mode.
    pub substeps: usize,
    /// Policy file produced by `solve --policy-out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    /// How many realized paths `--dump-paths` writes.
    pub dump_count: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            mode: SimMode::Discrete,
            paths: 10_000,
            seed: 0,
            substeps: 16,
            policy: None,
            dump_count: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    /// Also evaluate the single-Gaussian closed form when the payoff's
    /// curvature direction is known.
    pub closed_form: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            nx: None,
            nt: None,
            theta: None,
            x_min: None,
            x_max: None,
            closed_form: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSection {
    pub n_values: Vec<usize>,
    /// Reference value; absent switches to measuring against the largest n.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    /// Compute the reference with the finite-difference oracle first
    /// (terminal payoffs on scalar bands only). Ignored when `oracle` set.
    pub use_pde_oracle: bool,
    pub control_resolution: u32,
    pub quad_order: usize,
    pub tree_budget: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_points: Option<usize>,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            n_values: Vec::new(),
            oracle: None,
            use_pde_oracle: false,
            control_resolution: 8,
            quad_order: 8,
            tree_budget: 1e7,
            u_points: None,
            v_points: None,
            aux_points: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    /// Constant volatility for the in-step deviation scaling check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Exponent for the running-maximum exponential-moment probe (needs
    /// [domain] and [distribution]).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_a: Option<f64>,
    pub n_values: Vec<usize>,
    pub paths: usize,
    pub seed: u64,
    /// Radius and step ceiling for `validate-dist`'s mgf probe.
    pub mgf_radius: f64,
    pub mgf_n_max: u32,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            sigma: None,
            exp_a: None,
            n_values: vec![8, 16, 32, 64, 128],
            paths: 10_000,
            seed: 0,
            mgf_radius: 2.0,
            mgf_n_max: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: OutFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Omit wall-clock fields (timestamp, runtimes) so repeated runs emit
    /// identical bytes.
    pub no_timestamp: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { format: OutFormat::Json, out: None, no_timestamp: false }
    }
}
