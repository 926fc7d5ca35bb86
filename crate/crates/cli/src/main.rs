mod commands;
mod ppm;
mod range;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use range::{Grid1d, Size};

#[derive(Parser, Debug)]
#[command(
    name = "pottsseg",
    version,
    about = "Potts-prior color image segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment a P6 image with the disagreement-matching estimator.
    Segment(SegmentArgs),
    /// Coupling as a function of the prior disagreement rate.
    PriorCurve(PriorCurveArgs),
    /// Bethe free energy of the prior as a function of the coupling.
    FreeEnergy(FreeEnergyArgs),
    /// Locate the first-order transition of the prior.
    Transition(TransitionArgs),
    /// Maximize the Bethe marginal likelihood over a coupling grid.
    MlSweep(MlSweepArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BoundaryArg {
    Periodic,
    Free,
}

impl From<BoundaryArg> for pottsseg::Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Periodic => pottsseg::Boundary::Periodic,
            BoundaryArg::Free => pottsseg::Boundary::Free,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Paper,
    Bisection,
}

#[derive(Args, Debug)]
struct Common {
    /// Number of labels q (at least 2).
    #[arg(long = "labels", value_parser = clap::value_parser!(u32).range(2..=64))]
    labels: u32,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    /// Damping of the message updates, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    /// CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// Segmentation image, each pixel painted with its label's mean color.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Outer stopping threshold.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PriorCurveArgs {
    #[command(flatten)]
    common: Common,
    /// Disagreement grid, `start:stop:step` or a list. Defaults to steps of
    /// 0.01 up to (q-1)/q.
    #[arg(long)]
    u: Option<Grid1d>,
    #[arg(long, value_enum, default_value_t = MethodArg::Paper)]
    method: MethodArg,
    /// Tolerance on the disagreement rate.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Finite lattice instead of the infinite square lattice.
    #[arg(long)]
    size: Option<Size>,
    /// Sweep cap of the coupling rule on a finite lattice.
    #[arg(long, default_value_t = 100_000)]
    max_outer: usize,
}

#[derive(Args, Debug)]
struct FreeEnergyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "0:4:0.02")]
    k: Grid1d,
    /// Message tolerance on a finite lattice.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    size: Option<Size>,
}

#[derive(Args, Debug)]
struct TransitionArgs {
    #[command(flatten)]
    common: Common,
    /// Tolerance on the transition coupling.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    size: Option<Size>,
}

#[derive(Args, Debug)]
struct MlSweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    /// MPM segmentation at the estimate.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coarse coupling grid.
    #[arg(long, default_value = "0:4:0.02")]
    k: Grid1d,
    #[arg(long, default_value_t = 0.002)]
    refine_step: f64,
    /// EM stopping threshold at each coupling.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// EM iteration cap at each coupling.
    #[arg(long, default_value_t = 1000)]
    max_outer: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => commands::segment(a),
        Command::PriorCurve(a) => commands::prior_curve(a),
        Command::FreeEnergy(a) => commands::free_energy(a),
        Command::Transition(a) => commands::transition(a),
        Command::MlSweep(a) => commands::ml_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
