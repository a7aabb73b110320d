use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use dwell_cli::dispatch::dispatch;
use dwell_cli::presets::{preset, PRESETS};
use dwell_cli::scenario::{parse_scenario, parse_scenario_str, Model, OutputSpec, Params, PotentialSpec, Scenario, TabulateSpec};
use dwell_cli::CliError;

#[derive(Parser)]
#[command(name = "dwell", version, about = "Double-well many-particle hysteresis simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in preset.
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present_any = ["preset", "list_presets"])]
        scenario: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        list_presets: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Tabulate the mass-splitting map M over a grid.
    #[command(name = "tabulate-M")]
    TabulateM {
        /// lo:hi:count
        #[arg(long, allow_hyphen_values = true)]
        m1: String,
        /// lo:hi:count
        #[arg(long, allow_hyphen_values = true)]
        sigma: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long, default_value = "out/m_table")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Classify a (tau, nu) point into a scaling regime.
    Classify {
        #[arg(long, conflicts_with_all = ["tau", "nu"])]
        scenario: Option<PathBuf>,
        #[arg(long, required_unless_present = "scenario")]
        tau: Option<f64>,
        #[arg(long, required_unless_present = "scenario")]
        nu: Option<f64>,
        #[arg(long)]
        a_crit: Option<f64>,
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long, default_value = "out/classify")]
        out: PathBuf,
    },
    /// Check the structural assumptions on a built-in potential.
    VerifyPotential {
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long, default_value = "out/verify")]
        out: PathBuf,
    },
}

fn bare(model: Model, potential: String, params: Params, dir: &std::path::Path) -> Scenario {
    Scenario {
        model,
        potential: PotentialSpec { name: potential, params: Vec::new() },
        constraint: None,
        params,
        output: OutputSpec { dir: dir.display().to_string(), ..OutputSpec::default() },
        tabulate: None,
    }
}

fn workers(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Validation("--workers: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (scenario, out) = match cli.command {
        Command::Run { scenario, preset: name, list_presets, out, workers: w } => {
            if list_presets {
                for (name, _) in PRESETS {
                    println!("{name}");
                }
                return Ok(());
            }
            workers(w)?;
            let s = match (scenario, name) {
                (Some(p), _) => parse_scenario(&p)?,
                (None, Some(name)) => {
                    let text = preset(&name).ok_or_else(|| CliError::Validation(format!("--preset: unknown preset {name}")))?;
                    parse_scenario_str(text)?
                }
                (None, None) => unreachable!("clap enforces one source"),
            };
            (s, out)
        }
        Command::TabulateM { m1, sigma, n, eps, potential, out, workers: w } => {
            workers(w)?;
            let params = Params { n, eps, ..Params::default() };
            let mut s = bare(Model::TabulateM, potential, params, &out);
            s.tabulate = Some(TabulateSpec { m1, sigma });
            (s.validated()?, Some(out))
        }
        Command::Classify { scenario, tau, nu, a_crit, potential, out } => {
            let s = match scenario {
                Some(p) => parse_scenario(&p)?,
                None => bare(Model::Classify, potential, Params { tau, nu, a_crit, ..Params::default() }, &out).validated()?,
            };
            if s.model != Model::Classify {
                return Err(CliError::Validation(format!("model: expected classify, got {}", s.model.name())));
            }
            (s, Some(out))
        }
        Command::VerifyPotential { potential, out } => (bare(Model::Verify, potential, Params::default(), &out).validated()?, Some(out)),
    };
    let start = Instant::now();
    let summary = dispatch(&scenario, out.as_deref())?;
    println!("{}", summary.line(start.elapsed().as_secs_f64()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
