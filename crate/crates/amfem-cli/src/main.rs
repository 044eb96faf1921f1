use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amfem_cli::{parse_config, run_experiment};

/// Adaptive mixed finite element laboratory.
#[derive(Parser)]
#[command(name = "amfem", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the Dörfler marking parameter θ ∈ (0,1).
    #[arg(long)]
    theta: Option<f64>,
    /// Override the degree-of-freedom stopping bound.
    #[arg(long = "max-dofs")]
    max_dofs: Option<usize>,
    /// Output directory (default "amfem-out").
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive run: solve–estimate–mark–refine with Dörfler marking.
    Run(Common),
    /// Baseline run refining every element each iteration.
    Uniform(Common),
    /// Verification battery: inf-sup, orthogonality, reliability and
    /// quasi-orthogonality constants.
    Verify(Common),
    /// Log-log rate fits of a previously produced history.
    Rates(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Run(c) => ("run", c),
        Command::Uniform(c) => ("uniform", c),
        Command::Verify(c) => ("verify", c),
        Command::Rates(c) => ("rates", c),
    };
    let config = match parse_config(
        common.config.as_deref(),
        common.theta,
        common.max_dofs,
        common.out.as_deref(),
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("amfem: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run_experiment(name, &config) {
        Ok(output) => {
            for f in &output.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("amfem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
