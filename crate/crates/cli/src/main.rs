use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gebsde_cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(name = "gebsde", version, about = "Ergodic G-BSDE and fully nonlinear PDE solvers")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML (or JSON) run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for report.txt and CSV files.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Grid spacing, overriding `grid.h`.
    #[arg(long = "grid-h", global = true)]
    grid_h: Option<f64>,
    /// Ergodic tolerance, overriding `ergodic.tol`.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Do not print the report.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Sampled checks of the standing assumptions.
    Check,
    /// Finite-horizon parabolic solve from `[parabolic]`.
    Parabolic,
    /// Infinite-horizon elliptic solve (needs mu > 0).
    Elliptic,
    /// Discounted elliptic solve from `[discounted]`.
    Discounted,
    /// Ergodic constant by vanishing discount.
    Ergodic,
    /// Ergodic constant from the large-time slope.
    LargeTime,
    /// PDE against lattice and scenario oracles.
    Oracle,
    /// Optimal feedback and its long-run cost.
    Control,
    /// Cross-method, EBSDE path and oracle verification.
    Verify,
    /// Every stage the config supports.
    Report,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Check => Command::Check,
            Sub::Parabolic => Command::Parabolic,
            Sub::Elliptic => Command::Elliptic,
            Sub::Discounted => Command::Discounted,
            Sub::Ergodic => Command::Ergodic,
            Sub::LargeTime => Command::LargeTime,
            Sub::Oracle => Command::Oracle,
            Sub::Control => Command::Control,
            Sub::Verify => Command::Verify,
            Sub::Report => Command::Report,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.common.config.clone() else {
        eprintln!("error: --config is required");
        return ExitCode::from(1);
    };
    let overrides = Overrides {
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        grid_h: cli.common.grid_h,
        tol: cli.common.tol,
    };
    match run(cli.command.into(), &config, &overrides) {
        Ok(report) => {
            if !cli.common.quiet {
                print!("{}", report.render());
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
