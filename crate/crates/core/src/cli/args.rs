//! Flag parsing and the `limbosim` command dispatch.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{compare_order, parse_order, run, CliError, ModelName, RunSpec, EXIT_FAILURE};

#[derive(Debug, Parser)]
#[command(name = "limbosim", version, about = "Hybrid simulation with trapped zero-crossing and simultaneity errors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one model and write its trace and event log.
    Run(RunArgs),
    /// Simulate under several event orders and report whether the outcome
    /// depends on the order.
    CompareOrder(RunArgs),
    /// List models, variants and parameters.
    ListModels,
}

fn name_value(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    let value = value.trim().parse::<f64>().map_err(|e| format!("{name}: {e}"))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_tol: Option<f64>,
    #[arg(long)]
    pub simultaneity_tol: Option<f64>,
    #[arg(long)]
    pub limbo_offset: Option<f64>,
    #[arg(long)]
    pub unsafe_offset: Option<f64>,
    /// Parameter override; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = name_value)]
    pub params: Vec<(String, f64)>,
    /// `declared`, `reversed` or comma-separated detector names. For
    /// compare-order, repeat to list permutations (default: all).
    #[arg(long)]
    pub order: Vec<String>,
    #[arg(long, value_name = "PATH")]
    pub out_trace: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out_events: Option<PathBuf>,
}

impl RunArgs {
    fn spec(&self) -> Result<RunSpec, CliError> {
        let mut spec = RunSpec::new(ModelName::parse(&self.model)?);
        spec.variant = self.variant.clone();
        spec.params = self.params.clone();
        spec.t_end = self.t_end;
        spec.dt = self.dt;
        spec.t_tol = self.t_tol;
        spec.simultaneity_tol = self.simultaneity_tol;
        spec.limbo_offset = self.limbo_offset;
        spec.unsafe_offset = self.unsafe_offset;
        spec.out_trace = self.out_trace.clone();
        spec.out_events = self.out_events.clone();
        Ok(spec)
    }
}

fn run_command(args: &RunArgs) -> Result<u8, CliError> {
    let mut spec = args.spec()?;
    if args.order.len() > 1 {
        return Err(CliError::Usage("run takes a single --order".into()));
    }
    if let Some(order) = args.order.first() {
        spec.order = parse_order(&spec.build_model()?, order)?;
    }
    let report = run(&spec)?;
    if let Some(trap) = report.outcome.trap() {
        eprintln!("trapped: {} at t = {} ({})", trap.kind, trap.time, trap.detail);
    }
    Ok(report.exit_code())
}

fn compare_command(args: &RunArgs) -> Result<u8, super::CompareError> {
    let spec = args.spec()?;
    let perms = if args.order.is_empty() {
        None
    } else {
        let model = spec.build_model()?;
        Some(args.order.iter().map(|o| parse_order(&model, o)).collect::<Result<Vec<_>, _>>()?)
    };
    let report = compare_order(&spec, perms.as_deref())?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{json}").is_err() {
        return Ok(EXIT_FAILURE);
    }
    Ok(0)
}

fn list_models() {
    for m in ModelName::ALL {
        println!("{}", m.as_str());
        println!("  variants: {}", m.variants().join(", "));
        println!("  params:   {}", m.params().join(", "));
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn dispatch(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Run(args) => run_command(args).map_err(|e| (e.exit_code(), e.to_string())),
        Command::CompareOrder(args) => compare_command(args).map_err(|e| (e.exit_code(), e.to_string())),
        Command::ListModels => {
            list_models();
            Ok(0)
        }
    };
    match result {
        Ok(code) => code,
        Err((code, message)) => {
            eprintln!("error: {message}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "limbosim",
            "run",
            "--model",
            "three-balls",
            "--variant",
            "unsafe-ordered",
            "--param",
            "b1.x0=-4.8",
            "--order",
            "reversed",
            "--t-end",
            "4",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!("expected run") };
        assert_eq!(args.params, vec![("b1.x0".to_string(), -4.8)]);
        assert_eq!(args.t_end, 4.0);
    }

    #[test]
    fn malformed_param_rejected() {
        assert!(Cli::try_parse_from(["limbosim", "run", "--model", "bouncing-ball", "--param", "c"]).is_err());
    }
}
