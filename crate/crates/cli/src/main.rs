use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use usot_cli::commands::{cmd_hk, cmd_oracle, cmd_solve, OracleKind, TwoDiracArgs};
use usot_cli::config::{ExperimentConfig, Overrides};
use usot_cli::failure::Failure;

#[derive(Parser)]
#[command(name = "usot", version, about = "Dynamic unbalanced optimal transport solvers")]
struct Cli {
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a dynamic transport problem and write its artifacts.
    Solve(RunArgs),
    /// Compute HK² between the configured marginals.
    Hk(RunArgs),
    /// Print closed-form reference values.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one PGM heatmap per time face.
    #[arg(long)]
    emit_frames: bool,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    MassCurve,
    Fr,
    W2,
    TwoDirac,
}

#[derive(Args)]
struct OracleArgs {
    kind: Kind,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 0.0)]
    d: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        out: args.out.clone(),
        emit_frames: args.emit_frames,
        seed: args.seed,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(args) => cmd_solve(&load(&args)?, cli.quiet),
        Command::Hk(args) => cmd_hk(&load(&args)?).map(|_| ()),
        Command::Oracle(o) => {
            let cfg = o.config.as_deref().map(ExperimentConfig::load).transpose()?;
            let kind = match o.kind {
                Kind::MassCurve => OracleKind::MassCurve,
                Kind::Fr => OracleKind::Fr,
                Kind::W2 => OracleKind::W2,
                Kind::TwoDirac => OracleKind::TwoDirac,
            };
            let two = TwoDiracArgs {
                a: o.a,
                b: o.b,
                d: o.d,
                alpha: o.alpha,
                beta: o.beta,
            };
            let v = cmd_oracle(kind, cfg.as_ref(), two)?;
            println!("{v}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code as u8)
        }
    }
}
