use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppac::config::{load_config, ExperimentKind};
use ppac::experiment::run_experiment;
use ppac::Error;

#[derive(Parser)]
#[command(
    name = "ppac",
    version,
    about = "Privacy-preserving matrix-weighted average consensus experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the protocol and check convergence to the average.
    Run(Common),
    /// Run the randomized spectral property suites.
    Verify(Common),
    /// Check that alternative initial states are indistinguishable.
    Privacy(Common),
    /// Run the initial-state inference attack.
    Attack(Common),
    /// Static positive semi-definite weights: cluster consensus only.
    ClusterDemo(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Run(a) => (ExperimentKind::Run, a),
        Command::Verify(a) => (ExperimentKind::Verify, a),
        Command::Privacy(a) => (ExperimentKind::Privacy, a),
        Command::Attack(a) => (ExperimentKind::Attack, a),
        Command::ClusterDemo(a) => (ExperimentKind::ClusterDemo, a),
    };
    let cfg = match load_config(&args.config).and_then(|mut c| {
        c.kind = kind;
        c.with_overrides(args.seed, args.steps)
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("ppac: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg, &args.out_dir) {
        Ok(out) => {
            println!(
                "{}: {} ({})",
                kind.name(),
                if out.passed { "PASS" } else { "FAIL" },
                args.out_dir.join("summary.json").display()
            );
            ExitCode::from(if out.passed { 0 } else { 1 })
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("ppac: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("ppac: {e}");
            ExitCode::from(1)
        }
    }
}
