use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isac_hbf::runner::{self, Mode, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER};

#[derive(Parser)]
#[command(name = "isac-hbf", version, about = "Hybrid beamforming design for MIMO sensing and communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sensing-only bound minimization.
    PcrbMin(RunArgs),
    /// Alternating optimization at the configured rate target.
    Tradeoff(RunArgs),
    /// Radiated power pattern of the trade-off design.
    Pattern(RunArgs),
    /// Bound versus rate target, with benchmarks and the digital reference.
    Sweep(RunArgs),
    /// Monte-Carlo check of the bound against a MAP estimator.
    ValidateMc(RunArgs),
    /// SVG line chart of a CSV produced by another mode.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Prints the default config.
    DefaultConfig,
}

fn plot(csv: &PathBuf, out: &PathBuf) -> i32 {
    let text = match std::fs::read_to_string(csv) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", csv.display());
            return EXIT_CONFIG;
        }
    };
    let svg = match runner::csv_to_svg(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    match runner::write_atomic(out, &format!("{stem}.svg"), svg.as_bytes()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            EXIT_SOLVER
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    let (mode, args) = match cli.command {
        Command::PcrbMin(a) => (Mode::PcrbMin, a),
        Command::Tradeoff(a) => (Mode::Tradeoff, a),
        Command::Pattern(a) => (Mode::Pattern, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::ValidateMc(a) => (Mode::ValidateMc, a),
        Command::Plot { csv, out } => return ExitCode::from(plot(&csv, &out) as u8),
        Command::DefaultConfig => {
            println!("{}", runner::default_config_json());
            return ExitCode::SUCCESS;
        }
    };
    let (code, message) = runner::run_scenario(mode, &args.config, &args.out, args.seed, args.workers);
    if code == EXIT_OK {
        println!("{}: ok", mode.name());
    } else {
        eprintln!("{}: {message}", mode.name());
    }
    ExitCode::from(code as u8)
}
