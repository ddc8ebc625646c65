//! Subcommand handlers. Each consumes the resolved configuration and
//! returns the JSON `result` payload plus an optional CSV artifact; the
//! envelope, file writing and exit-code mapping live in `main`.

use std::fmt::Write as _;

use serde_json::{json, Value};

use gexp_core::diagnostics::{convergence_study, StudyConfig};
use gexp_core::oracle::{closed_form_extremal, solve_barenblatt, PdeGrid, Shape};
use gexp_core::payoff::PayoffFunctional;
use gexp_core::simulate::dump_realized_path;
use gexp_core::solver::{
    solve_lattice, solve_tree_budgeted, LatticeConfig, SolverKind, ValueAndPolicy,
};
use gexp_core::{
    exp_moment_probe, simulate_continuous, simulate_discrete, simulate_discrete_visit,
    NoiseDistribution, ScalingReport, UncertaintyDomain,
};

use crate::config::{
    ConvergeSection, OracleSection, RunConfig, SimMode, SolverChoice, SolverSection,
};

/// Exit 1: the request itself is unusable (parse, schema, missing pieces,
/// inconsistent settings). Exit 2: a well-formed computation failed.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Compute(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn compute(err: gexp_core::Error) -> CliError {
    CliError::Compute(err.to_string())
}

pub struct CommandOutput {
    pub result: Value,
    /// Tabular rendition for `--format csv`.
    pub csv: Option<String>,
}

fn need<'a, T>(opt: &'a Option<T>, section: &str) -> Result<&'a T, CliError> {
    opt.as_ref()
        .ok_or_else(|| usage(format!("config needs a [{section}] section for this command")))
}

fn build_payoff(cfg: &RunConfig) -> Result<PayoffFunctional, CliError> {
    need(&cfg.payoff, "payoff")?
        .build()
        .map_err(|e| usage(format!("payoff: {e}")))
}

fn lattice_config(sv: &SolverSection, d: usize) -> LatticeConfig {
    let mut lc = LatticeConfig::default_for_dim(d);
    if let Some(u) = sv.u_points {
        lc.u_points = u;
    }
    if let Some(v) = sv.v_points {
        lc.v_points = v;
    }
    if let Some(a) = sv.aux_points {
        lc.aux_points = a;
    }
    lc.truncation_multiplier = sv.truncation_multiplier;
    lc.compute_richardson = sv.richardson;
    lc
}

fn pde_grid(section: &OracleSection, a_high: f64) -> PdeGrid {
    let mut grid = PdeGrid::default_for(a_high);
    if let Some(nx) = section.nx {
        grid.nx = nx;
    }
    if let Some(nt) = section.nt {
        grid.nt = nt;
    }
    if let Some(theta) = section.theta {
        grid.theta = theta;
    }
    if let Some(x) = section.x_min {
        grid.x_min = x;
    }
    if let Some(x) = section.x_max {
        grid.x_max = x;
    }
    grid
}

/// Terminal function and curvature direction for oracle-eligible payoffs.
type TerminalShape = (Box<dyn Fn(f64) -> f64>, Shape);

fn terminal_function(spec: &gexp_core::PayoffSpec) -> Result<TerminalShape, CliError> {
    use gexp_core::PayoffSpec::*;
    match spec {
        Constant { value, .. } => {
            let v = *value;
            Ok((Box::new(move |_| v), Shape::Convex))
        }
        TerminalCall { strike } => {
            let k = *strike;
            Ok((Box::new(move |x| (x - k).max(0.0)), Shape::Convex))
        }
        TerminalPut { strike } => {
            let k = *strike;
            Ok((Box::new(move |x| (k - x).max(0.0)), Shape::Convex))
        }
        TerminalLinear { slope, intercept } => {
            let (s, c) = (*slope, *intercept);
            Ok((Box::new(move |x| s * x + c), Shape::Convex))
        }
        TerminalSquare => Ok((Box::new(|x| x * x), Shape::Convex)),
        TerminalNegAbs => Ok((Box::new(|x| -x.abs()), Shape::Concave)),
        other => Err(usage(format!(
            "the oracle covers terminal functions of u(1) in one dimension; \
             {:?} is path- or variation-dependent",
            other
        ))),
    }
}

fn scalar_band(domain: &UncertaintyDomain) -> Result<(f64, f64), CliError> {
    match domain {
        UncertaintyDomain::ScalarInterval { a_low, a_high } => Ok((*a_low, *a_high)),
        _ => Err(usage(
            "the oracle needs a scalar_interval domain (one dimension)",
        )),
    }
}

/// Tree when the noise is finite and the leaf count fits the budget,
/// otherwise lattice; explicit choices are honored as stated.
fn choose_solver(
    sv: &SolverSection,
    noise: &NoiseDistribution,
    controls: usize,
    n: usize,
) -> Result<SolverKind, CliError> {
    match sv.kind {
        SolverChoice::Tree => Ok(SolverKind::Tree),
        SolverChoice::Lattice => Ok(SolverKind::Lattice),
        SolverChoice::Auto => {
            let fits = noise
                .finite_atoms()
                .map(|rule| {
                    ((controls * rule.nodes.len()) as f64).powi(n as i32)
                        <= sv.tree_budget
                })
                .unwrap_or(false);
            Ok(if fits { SolverKind::Tree } else { SolverKind::Lattice })
        }
    }
}

pub fn run_solve(
    cfg: &RunConfig,
    policy_out: Option<&std::path::Path>,
) -> Result<CommandOutput, CliError> {
    let domain = need(&cfg.domain, "domain")?;
    let noise = need(&cfg.distribution, "distribution")?;
    let payoff = build_payoff(cfg)?;
    let default_solver = SolverSection::default();
    let sv = cfg.solver.as_ref().unwrap_or(&default_solver);
    let n = sv
        .n
        .ok_or_else(|| usage("set solver.n (or pass --n) for solve"))?;
    domain.validate().map_err(|e| usage(format!("domain: {e}")))?;
    let grid = domain
        .sqrt_grid(sv.control_resolution)
        .map_err(|e| usage(format!("domain: {e}")))?;

    let kind = choose_solver(sv, noise, grid.len(), n)?;
    let vp = match kind {
        SolverKind::Tree => {
            solve_tree_budgeted(&payoff, &grid, noise, n, sv.tree_budget)
                .map_err(compute)?
        }
        SolverKind::Lattice => {
            let quad = noise.quadrature(sv.quad_order).map_err(compute)?;
            let lc = lattice_config(sv, payoff.d);
            solve_lattice(&payoff, &grid, &quad, n, &lc).map_err(compute)?
        }
    };
    let mut result = vp.summary_json();
    if let Some(path) = policy_out {
        vp.save(path).map_err(compute)?;
        result["policy_file"] = json!(path.display().to_string());
    }
    Ok(CommandOutput { csv: Some(flat_csv(&result)), result })
}

fn flat_csv(obj: &Value) -> String {
    let mut out = String::from("key,value\n");
    if let Value::Object(map) = obj {
        for (k, v) in map {
            if v.is_object() || v.is_array() {
                continue;
            }
            let _ = writeln!(out, "{k},{v}");
        }
    }
    out
}

pub fn run_validate_dist(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let noise = need(&cfg.distribution, "distribution")?;
    let diag = cfg.diagnose.clone().unwrap_or_default();
    let moments = noise.validate_moments().map_err(compute)?;
    let mgf = noise
        .validate_mgf_bound(diag.mgf_radius, diag.mgf_n_max)
        .map_err(compute)?;
    let pass = moments.pass && mgf.pass;
    let result = json!({
        "moments": moments,
        "mgf": mgf,
        "pass": pass,
    });
    Ok(CommandOutput { csv: Some(flat_csv(&result)), result })
}

pub fn run_oracle(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let domain = need(&cfg.domain, "domain")?;
    let (a_low, a_high) = scalar_band(domain)?;
    let spec = need(&cfg.payoff, "payoff")?;
    let (g, shape) = terminal_function(spec)?;
    let section = cfg.oracle.clone().unwrap_or_default();
    let grid = pde_grid(&section, a_high);
    let sol = solve_barenblatt(g.as_ref(), a_low, a_high, &grid).map_err(compute)?;
    let mut result = json!({
        "pde": sol,
        "grid": grid,
    });
    if section.closed_form {
        let cf = closed_form_extremal(g.as_ref(), shape, a_low, a_high);
        result["closed_form"] = json!({ "value": cf, "shape": shape });
        result["difference"] = json!((sol.value - cf).abs());
    }
    Ok(CommandOutput { csv: Some(flat_csv(&result)), result })
}

pub fn run_converge(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let domain = need(&cfg.domain, "domain")?;
    let noise = need(&cfg.distribution, "distribution")?;
    let payoff = build_payoff(cfg)?;
    let section: &ConvergeSection = need(&cfg.converge, "converge")?;
    if section.n_values.is_empty() {
        return Err(usage("converge.n_values must list at least one step count"));
    }
    let oracle = match (section.oracle, section.use_pde_oracle) {
        (Some(v), _) => Some(v),
        (None, true) => {
            let (a_low, a_high) = scalar_band(domain)?;
            let (g, _) = terminal_function(need(&cfg.payoff, "payoff")?)?;
            let grid = pde_grid(&cfg.oracle.clone().unwrap_or_default(), a_high);
            Some(
                solve_barenblatt(g.as_ref(), a_low, a_high, &grid)
                    .map_err(compute)?
                    .value,
            )
        }
        (None, false) => None,
    };
    let mut lattice = LatticeConfig::default_for_dim(payoff.d);
    lattice.compute_richardson = false;
    if let Some(u) = section.u_points {
        lattice.u_points = u;
    }
    if let Some(v) = section.v_points {
        lattice.v_points = v;
    }
    if let Some(a) = section.aux_points {
        lattice.aux_points = a;
    }
    let study = StudyConfig {
        control_resolution: section.control_resolution,
        quad_order: section.quad_order,
        tree_budget: section.tree_budget,
        lattice,
    };
    let table = convergence_study(&payoff, domain, noise, &section.n_values, oracle, &study)
        .map_err(compute)?;
    let csv = table.to_csv();
    Ok(CommandOutput { result: json!(table), csv: Some(csv) })
}

fn scaling_csv(reports: &[&ScalingReport]) -> String {
    let mut out = String::from("label,n,estimate\n");
    for rep in reports {
        for (n, e) in rep.n_values.iter().zip(&rep.estimates) {
            let _ = writeln!(out, "{},{},{}", rep.label, n, e);
        }
    }
    out
}

pub fn run_diagnose(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let section = cfg.diagnose.clone().unwrap_or_default();
    if section.sigma.is_none() && section.exp_a.is_none() {
        return Err(usage(
            "set diagnose.sigma (deviation scaling) and/or diagnose.exp_a \
             (exponential-moment probe)",
        ));
    }
    let mut result = json!({});
    let mut reports: Vec<ScalingReport> = Vec::new();
    if let Some(sigma) = section.sigma {
        let (fourth, qv) = gexp_core::discretization_scaling(
            sigma,
            &section.n_values,
            section.paths,
            section.seed,
        )
        .map_err(compute)?;
        result["fourth_moment"] = json!(fourth);
        result["qv_deviation"] = json!(qv);
        reports.push(fourth);
        reports.push(qv);
    }
    if let Some(a) = section.exp_a {
        let domain = need(&cfg.domain, "domain")?;
        let noise = need(&cfg.distribution, "distribution")?;
        let probe = exp_moment_probe(
            domain,
            noise,
            a,
            &section.n_values,
            section.paths,
            section.seed,
        )
        .map_err(compute)?;
        result["exp_moment"] = json!(probe);
        reports.push(probe);
    }
    result["pass"] = json!(reports.iter().all(|r| r.pass));
    let refs: Vec<&ScalingReport> = reports.iter().collect();
    Ok(CommandOutput { csv: Some(scaling_csv(&refs)), result })
}

pub struct SimulateArgs<'a> {
    pub dump_paths: Option<&'a std::path::Path>,
}

pub fn run_simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<CommandOutput, CliError> {
    let payoff = build_payoff(cfg)?;
    let sim = cfg.simulation.clone().unwrap_or_default();
    let policy_path = sim
        .policy
        .clone()
        .ok_or_else(|| usage("simulate needs --policy FILE (or simulation.policy)"))?;
    let vp = ValueAndPolicy::load(&policy_path)
        .map_err(|e| usage(format!("policy file {}: {e}", policy_path.display())))?;
    if vp.payoff_name != payoff.name {
        return Err(usage(format!(
            "policy was extracted for payoff '{}' but the config builds '{}'",
            vp.payoff_name, payoff.name
        )));
    }

    let estimate = match sim.mode {
        SimMode::Discrete => {
            let noise = need(&cfg.distribution, "distribution")?;
            if let Some(dump) = args.dump_paths {
                let mut file = std::fs::File::create(dump)
                    .map_err(|e| usage(format!("--dump-paths {}: {e}", dump.display())))?;
                let mut dumped = 0usize;
                simulate_discrete_visit(
                    &vp,
                    noise,
                    &payoff,
                    sim.paths,
                    sim.seed,
                    |index, realized| {
                        if dumped < sim.dump_count {
                            dump_realized_path(&mut file, index, realized, dumped == 0)
                                .expect("path dump write failed");
                            dumped += 1;
                        }
                    },
                )
                .map_err(compute)?
            } else {
                simulate_discrete(&vp, noise, &payoff, sim.paths, sim.seed)
                    .map_err(compute)?
            }
        }
        SimMode::Continuous => {
            if args.dump_paths.is_some() {
                return Err(usage("--dump-paths applies to discrete replay only"));
            }
            simulate_continuous(&vp, &payoff, sim.substeps, sim.paths, sim.seed)
                .map_err(compute)?
        }
    };
    let result = json!({
        "estimate": estimate,
        "mode": sim.mode,
        "policy_value": vp.value,
        "n": vp.n,
    });
    Ok(CommandOutput { csv: Some(flat_csv(&result)), result })
}
