use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aod_core::experiment::{
    cmd_compare, cmd_policy_map, cmd_simulate, cmd_solve, cmd_sweep, csv_writer, parse_config, write_rows,
    ExperimentConfig, ExperimentError, J_DEPENDENCE_WARNING,
};

/// Age of Detection sampling policies: solve, sweep and simulate.
#[derive(Parser)]
#[command(name = "aod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; overrides `out` in the config. Standard output when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for the simulator; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the constrained problem and print a report.
    Solve(Common),
    /// Decision grid over (tau1, tau2) for one (i, j) pair.
    PolicyMap {
        #[command(flatten)]
        common: Common,
        /// Freshest received state; overrides `map_i`.
        #[arg(long)]
        i: Option<usize>,
        /// In-flight sample state; overrides `map_j`.
        #[arg(long)]
        j: Option<usize>,
    },
    /// Re-solve over the configured sweep axis.
    Sweep(Common),
    /// Simulate the configured policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the per-slot trace of the first replication next to
        /// the output, as `<out>.trace.csv` (`trace.csv` without --out).
        #[arg(long)]
        trace: bool,
    },
    /// Compare the CMDP policy with the baselines over a flip-probability grid.
    Compare(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, Option<PathBuf>), ExperimentError> {
    let mut config = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.sim.seed = seed;
    }
    let out = common.out.clone().or_else(|| config.out.clone());
    Ok((config, out))
}

fn trace_path(out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.with_extension("trace.csv"),
        None => PathBuf::from("trace.csv"),
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Solve(common) => {
            let (config, out) = load(&common)?;
            let report = cmd_solve(&config)?;
            if out.is_some() {
                print!("{report}");
            } else {
                eprint!("{report}");
            }
            write_rows(out.as_deref(), &[report.row])
        }
        Command::PolicyMap { common, i, j } => {
            let (config, out) = load(&common)?;
            let i = i.unwrap_or(config.map_state.0);
            let j = j.unwrap_or(config.map_state.1);
            let rows = cmd_policy_map(&config, i, j)?;
            if rows.iter().any(|r| !r.monotone) {
                eprintln!("note: decision grid for ({i}, {j}) is not monotone");
            }
            write_rows(out.as_deref(), &rows)
        }
        Command::Sweep(common) => {
            let (config, out) = load(&common)?;
            if config.sweep.is_none() {
                return Err(ExperimentError::Usage(
                    "sweep needs one of sweep_p01, sweep_p10, sweep_q, sweep_nu".into(),
                ));
            }
            let mut w = csv_writer(out.as_deref())?;
            let rows = cmd_sweep(&config, &mut w)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} of {} sweep points failed; see the error column", rows.len());
            }
            Ok(())
        }
        Command::Simulate { common, trace } => {
            let (config, out) = load(&common)?;
            let report = cmd_simulate(&config, trace)?;
            if report.j_dependent {
                eprintln!("{J_DEPENDENCE_WARNING}");
            }
            write_rows(out.as_deref(), &[report.row])?;
            if let Some(t) = report.trace {
                write_rows(Some(&trace_path(out.as_deref())), &t)?;
            }
            Ok(())
        }
        Command::Compare(common) => {
            let (config, out) = load(&common)?;
            let mut w = csv_writer(out.as_deref())?;
            cmd_compare(&config, &mut w)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if informational { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
