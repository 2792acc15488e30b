//! Batch front end: `eigendrift <command> --config <path>` runs one task
//! and writes a JSON report, CSV tables and SVG plots.

pub mod config;
pub mod report;
pub mod svg;
pub mod tasks;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{ConfigError, Format, RunConfig};
use report::{num, sha256_hex, to_json_string};
use tasks::{run_task, TaskError, TaskOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "eigendrift",
    version,
    about = "Generalized principal eigenvalues, ground-state diffusions and risk-sensitive control",
    long_about = "Runs one task described by a JSON run config and writes report.json, CSV tables and SVG plots.\n\nExit codes: 0 success (warnings are embedded in the report), 2 config error, 3 numeric failure (a partial report is still written)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenvalue by Dirichlet exhaustion, with the ground state
    Eigen(RunArgs),
    /// The curve beta -> lambda*(beta f) and its flat breakpoint
    Curve(RunArgs),
    /// Euler-Maruyama paths, Feynman-Kac averages and return times
    Simulate(RunArgs),
    /// Ground-state classification from monotonicity probes and returns
    Classify(RunArgs),
    /// Risk-sensitive control by policy iteration
    Hjb(RunArgs),
    /// Ergodic, derivative and duality identities at one beta
    Identities(RunArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Eigen(a) => ("eigen", a),
            Command::Curve(a) => ("curve", a),
            Command::Simulate(a) => ("simulate", a),
            Command::Classify(a) => ("classify", a),
            Command::Hjb(a) => ("hjb", a),
            Command::Identities(a) => ("identities", a),
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run config (JSON, "schema": 1)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for stochastic tasks; overrides numerics.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Print nothing on success
    #[arg(long)]
    quiet: bool,
    /// Worker threads (default: logical cores)
    #[arg(long, env = "EIGENDRIFT_THREADS")]
    threads: Option<usize>,
}

/// Parses `argv`, runs the task and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (command, args) = cli.command.parts();
    if let Some(n) = args.threads {
        // a pool may already exist when running in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = match RunConfig::load(&args.config, args.seed) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if cfg.task.name() != command {
        let e = ConfigError::Invalid {
            key: "task".into(),
            message: format!("config describes a {} task but the command is {command}", cfg.task.name()),
        };
        return config_error(&e);
    }
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let started = Instant::now();
    let result = run_task(&cfg);
    let elapsed = started.elapsed().as_secs_f64();
    let (status, error, output) = match result {
        Ok(o) => ("ok", None, o),
        Err(TaskError::Config(e)) => return config_error(&e),
        Err(TaskError::Numeric(f)) => ("failed", Some(f.message), f.partial),
    };
    let report = build_report(&cfg, command, status, error.as_deref(), &output, elapsed);
    if let Err(e) = write_outputs(&out_dir, &cfg, &report, &output) {
        eprintln!("error: cannot write outputs to {}: {e}", out_dir.display());
        return EXIT_NUMERIC;
    }
    match error {
        Some(msg) => {
            eprintln!("numeric failure: {msg}");
            eprintln!("partial report written to {}", out_dir.join("report.json").display());
            EXIT_NUMERIC
        }
        None => {
            if !args.quiet {
                for w in &output.warnings {
                    eprintln!("warning: {w}");
                }
                println!("{}", summary(command, &output));
                println!("report written to {}", out_dir.join("report.json").display());
            }
            EXIT_OK
        }
    }
}

fn config_error(e: &ConfigError) -> i32 {
    eprintln!("config error: {e}");
    EXIT_CONFIG
}

/// SHA-256 of the resolved config in compact JSON.
pub fn config_hash(cfg: &RunConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    sha256_hex(text.as_bytes())
}

fn build_report(cfg: &RunConfig, command: &str, status: &str, error: Option<&str>, out: &TaskOutput, elapsed: f64) -> Value {
    let files: Vec<Value> = out
        .artifacts
        .iter()
        .filter(|a| cfg.output.wants(a.format))
        .map(|a| Value::String(a.name.clone()))
        .collect();
    json!({
        "command": command,
        "status": status,
        "error": error,
        "warnings": out.warnings,
        "library_version": eigendrift::VERSION,
        "config_hash": config_hash(cfg),
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "wall_clock_seconds": num(elapsed),
        "threads": rayon::current_num_threads(),
        "outputs": Value::Object(out.outputs.clone()),
        "files": files,
    })
}

fn write_outputs(dir: &Path, cfg: &RunConfig, report: &Value, out: &TaskOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in out.artifacts.iter().filter(|a| cfg.output.wants(a.format)) {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    if cfg.output.wants(Format::Json) {
        std::fs::write(dir.join("report.json"), to_json_string(report))?;
    }
    Ok(())
}

fn summary(command: &str, out: &TaskOutput) -> String {
    let o = &out.outputs;
    let field = |k: &str| o.get(k).map(|v| v.to_string()).unwrap_or_else(|| "-".into());
    match command {
        "eigen" | "hjb" => format!("{command}: lambda_star = {}", field("lambda_star")),
        "curve" => format!("curve: beta_c = {}, lambda_c = {}", field("beta_c_estimate"), field("lambda_c")),
        "classify" => format!("classify: {} (lambda = {})", field("verdict"), field("lambda")),
        "simulate" => format!("simulate: {} paths alive", field("alive_paths")),
        _ => format!("{command}: {} warning(s)", out.warnings.len()),
    }
}
