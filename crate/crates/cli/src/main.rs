//! `gexp`: batch frontend over the solver, simulator, oracle and diagnostic
//! libraries. A TOML config supplies the problem; flags override individual
//! knobs; every summary embeds the resolved config so runs reproduce from
//! their own output. Exit codes: 0 success, 1 unusable request, 2 failed
//! computation.

mod commands;
mod config;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{CliError, CommandOutput, SimulateArgs};
use config::{OutFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "gexp",
    version,
    about = "Worst-case expectation solvers under volatility uncertainty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override solver.n.
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Override simulation.seed and diagnose.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override simulation.paths and diagnose.paths.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Override simulation.substeps.
    #[arg(long, global = true)]
    substeps: Option<usize>,

    /// Size of the global worker pool (0 or absent: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Also write the summary (or CSV artifact) to this file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Artifact format for --out.
    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,

    /// Omit wall-clock fields so repeated runs emit identical bytes.
    #[arg(long, global = true)]
    no_timestamp: bool,

    /// Policy file to simulate from (overrides simulation.policy).
    #[arg(long, global = true, value_name = "FILE")]
    policy: Option<PathBuf>,

    /// Where `solve` saves the extracted policy tables.
    #[arg(long = "policy-out", global = true, value_name = "FILE")]
    policy_out: Option<PathBuf>,

    /// Write the first simulation.dump_count realized paths as CSV
    /// (discrete replay only).
    #[arg(long = "dump-paths", global = true, value_name = "FILE")]
    dump_paths: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the backward recursion and report the value.
    Solve,
    /// Monte Carlo under a previously extracted policy.
    Simulate,
    /// Finite-difference and closed-form references (one dimension).
    Oracle,
    /// Value error against a reference across step counts.
    Converge,
    /// Statistical checks of the discretization error bounds.
    Diagnose,
    /// Moment and mgf gates for a noise distribution.
    ValidateDist,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Converge => "converge",
            Command::Diagnose => "diagnose",
            Command::ValidateDist => "validate-dist",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read {}: {e}", path.display()))
            })?;
            toml::from_str(&text).map_err(|e| {
                CliError::Usage(format!("config {}: {e}", path.display()))
            })?
        }
        None => RunConfig::default(),
    };

    if cli.n.is_some() {
        cfg.solver.get_or_insert_with(Default::default).n = cli.n;
    }
    if let Some(seed) = cli.seed {
        cfg.simulation.get_or_insert_with(Default::default).seed = seed;
        cfg.diagnose.get_or_insert_with(Default::default).seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.simulation.get_or_insert_with(Default::default).paths = paths;
        cfg.diagnose.get_or_insert_with(Default::default).paths = paths;
    }
    if let Some(substeps) = cli.substeps {
        cfg.simulation.get_or_insert_with(Default::default).substeps = substeps;
    }
    if let Some(policy) = &cli.policy {
        cfg.simulation.get_or_insert_with(Default::default).policy =
            Some(policy.clone());
    }
    let out = cfg.output.get_or_insert_with(Default::default);
    if let Some(format) = cli.format {
        out.format = format;
    }
    if cli.out.is_some() {
        out.out = cli.out.clone();
    }
    out.no_timestamp |= cli.no_timestamp;
    Ok(cfg)
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    match cli.command {
        Command::Solve => commands::run_solve(cfg, cli.policy_out.as_deref()),
        Command::Simulate => commands::run_simulate(
            cfg,
            &SimulateArgs { dump_paths: cli.dump_paths.as_deref() },
        ),
        Command::Oracle => commands::run_oracle(cfg),
        Command::Converge => commands::run_converge(cfg),
        Command::Diagnose => commands::run_diagnose(cfg),
        Command::ValidateDist => commands::run_validate_dist(cfg),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if let Some(threads) = cli.threads {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
        }
    }
    let output = cfg.output.clone().unwrap_or_default();
    let started = Instant::now();
    let produced = dispatch(cli, &cfg)?;
    let runtime = started.elapsed().as_secs_f64();

    let mut envelope = json!({
        "schema_version": 1,
        "command": cli.command.name(),
        "result": produced.result,
        "config": cfg,
    });
    if !output.no_timestamp {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        envelope["timestamp_unix_secs"] = json!(now);
        envelope["runtime_secs"] = json!(runtime);
    }
    let rendered = serde_json::to_string_pretty(&envelope)
        .map_err(|e| CliError::Compute(format!("serializing summary: {e}")))?;
    println!("{rendered}");

    if let Some(path) = &output.out {
        let artifact = match output.format {
            OutFormat::Json => rendered,
            OutFormat::Csv => produced
                .csv
                .unwrap_or_else(|| "key,value\n".to_string()),
        };
        std::fs::write(path, artifact).map_err(|e| {
            CliError::Usage(format!("cannot write {}: {e}", path.display()))
        })?;
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    std::process::exit(0);
                }
                _ => {
                    eprint!("{err}");
                    std::process::exit(1);
                }
            }
        }
    };
    match run(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {}", err.message());
            std::process::exit(err.exit_code());
        }
    }
}
