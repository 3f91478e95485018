use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slipgait::analysis::FitTargets;
use slipgait::{Model, ModelParams};
use slipgait_cli::{cmd_fit_gait, cmd_run, cmd_stability, load_config, CliError, Exit, RunMode};

#[derive(Parser)]
#[command(name = "slipgait", version, about = "Bipedal walking under foot slip")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the variable-slip walking experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured mode.
        #[arg(long, value_enum)]
        mode: Option<RunMode>,
        /// Overrides the configured step horizon.
        #[arg(long)]
        steps: Option<usize>,
        /// Also write the sampled trajectories.
        #[arg(long)]
        dense: bool,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixed point and spectrum of the zero-slip return map.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a nominal Bézier gait to task-space targets.
    FitGait {
        #[arg(long)]
        step_length: f64,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        clearance: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<Exit, CliError> {
    match cmd {
        Command::Run { config, mode, steps, dense, out } => {
            let mut exp = load_config(&config)?;
            if let Some(m) = mode {
                exp.mode = m;
            }
            if let Some(n) = steps {
                exp.n_steps = n;
            }
            exp.dense_logging |= dense;
            let dir = out.unwrap_or_else(|| exp.outputs.clone());
            let report = cmd_run(&exp, &dir)?;
            for log in report.controlled.iter().chain(&report.open_loop) {
                let mode = log.mode.map(|m| m.to_string()).unwrap_or_default();
                println!("{mode}: {}/{} steps", log.successful_steps(), exp.n_steps);
            }
            if let Some(s) = &report.summary {
                print!("{}", s.to_text());
            }
            println!("artifacts written to {}", dir.display());
            Ok(report.exit)
        }
        Command::Stability { config, out } => {
            let exp = load_config(&config)?;
            let dir = out.unwrap_or_else(|| exp.outputs.clone());
            let report = cmd_stability(&exp, &dir)?;
            match (&report.result, &report.error) {
                (Some(r), _) => println!(
                    "fixed point residual {:e} after {} iterations; spectral radius {:.6} ({})",
                    r.residual_norm,
                    r.iterations,
                    r.spectral_radius,
                    if r.stable { "stable" } else { "unstable" }
                ),
                (None, Some(e)) => eprintln!("error: {e}"),
                (None, None) => {}
            }
            Ok(report.exit)
        }
        Command::FitGait { step_length, duration, clearance, out } => {
            let targets = FitTargets { step_length, duration, clearance, ..FitTargets::default() };
            let model = Model::new(ModelParams::default())?;
            let fit = cmd_fit_gait(&targets, &model, &out)?;
            println!("gait written to {}; v_nom = {}", out.display(), fit.v_nom);
            Ok(Exit::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { Exit::InvalidInput } else { Exit::Success };
            return ExitCode::from(code.code());
        }
    };
    let exit = execute(cli.command).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(exit.code())
}
