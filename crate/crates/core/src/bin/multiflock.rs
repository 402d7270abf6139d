//! `multiflock` command-line driver.
//!
//! Exit codes: 0 success, 1 the run failed (collision, divergence, solver
//! error), 2 invalid configuration or usage, 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multiflock::scenario::{self, Overrides, Scenario};
use multiflock::Error;

#[derive(Parser)]
#[command(name = "multiflock", version, about = "Multi-flock alignment dynamics lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or preset.
    Run {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check a scenario and print its canonical form.
    Validate {
        scenario: String,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
    /// Recompute diagnostics from a finished run directory.
    Report { run_dir: PathBuf },
    /// Run one scenario per parameter value: `--param coupling.epsilon=0.01,0.1`.
    Sweep {
        scenario: String,
        #[arg(long)]
        param: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Output directory (falls back to the scenario's `output`, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to MULTIFLOCK_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long = "t-end", allow_negative_numbers = true)]
    t_end: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rtol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    atol: Option<f64>,
}

impl OverrideArgs {
    fn apply(&self, s: Scenario) -> multiflock::Result<Scenario> {
        s.with_overrides(&Overrides { seed: self.seed, dt: self.dt, t_end: self.t_end, rtol: self.rtol, atol: self.atol })
    }
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Config(_) | Error::Validation(_) | Error::Invalid(_) | Error::Unsupported(_) => 2,
        _ => 1,
    }
}

fn out_dir(run: &RunArgs, s: &Scenario) -> PathBuf {
    run.out.clone().or_else(|| s.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn load(arg: &str, o: &OverrideArgs) -> multiflock::Result<Scenario> {
    o.apply(scenario::resolve(arg)?)
}

fn execute(cmd: Cmd) -> multiflock::Result<u8> {
    match cmd {
        Cmd::Run { scenario: arg, run } => {
            let s = load(&arg, &run.overrides)?;
            let m = scenario::run_scenario(&s, &out_dir(&run, &s), run.threads)?;
            println!("{}: {:?} ({} samples, {:.2}s)", m.name, m.status, m.samples, m.elapsed_seconds);
            if let Some(e) = &m.error {
                eprintln!("error: {e}");
            }
            Ok(m.exit_code.clamp(0, 255) as u8)
        }
        Cmd::Validate { scenario: arg, overrides } => {
            let s = load(&arg, &overrides)?;
            print!("{}", s.to_canonical_toml()?);
            Ok(0)
        }
        Cmd::Presets { name: None } => {
            for s in scenario::preset_library() {
                println!("{:<24} {}", s.name, s.description.as_deref().unwrap_or(""));
            }
            Ok(0)
        }
        Cmd::Presets { name: Some(n) } => {
            print!("{}", scenario::preset(&n)?.to_canonical_toml()?);
            Ok(0)
        }
        Cmd::Report { run_dir } => {
            let r = scenario::report(&run_dir)?;
            println!("{}", serde_json::to_string_pretty(&r).map_err(|e| Error::Io(e.to_string()))?);
            Ok(0)
        }
        Cmd::Sweep { scenario: arg, param, run } => {
            let (key, values) = param
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--param '{param}': expected key=v1,v2,...")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(Error::Config(format!("--param '{param}': no values")));
            }
            let s = load(&arg, &run.overrides)?;
            let entries = scenario::sweep(&s, key, &values, &out_dir(&run, &s), run.threads)?;
            let mut worst = 0;
            for e in &entries {
                println!("{}={}: {:?} -> {}", key, e.value, e.status, e.dir.display());
                worst = worst.max(e.exit_code);
            }
            Ok(worst.clamp(0, 255) as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code_for(&e))
        }
    }
}
