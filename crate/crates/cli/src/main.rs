use std::path::PathBuf;
use std::process::ExitCode;

use beowulf_core::Benchmark;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "beowulf",
    version,
    about = "Benchmark kernels, performance model and analysis for small SBC clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a kernel natively on in-process ranks and print its run record.
    Run(RunArgs),
    /// Predict time and energy of a benchmark on a cluster from a model file.
    Simulate(SimulateArgs),
    /// Fit a model file from measured CSV tables.
    Calibrate(CalibrateArgs),
    /// Relative error of predicted records against a measured table.
    Compare(CompareArgs),
    /// Merge records into one CSV or plot-data file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kernel {
    Ep,
    Ft,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(value_enum)]
    kernel: Kernel,
    /// Problem class (EP: S W A B C; FT: S W A B, or "custom" with --grid and --iters).
    #[arg(long)]
    class: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=1024))]
    ranks: u32,
    /// EP generator seed (odd, below 2^46).
    #[arg(long)]
    seed: Option<u64>,
    /// FT cube edge for --class custom.
    #[arg(long)]
    grid: Option<usize>,
    /// FT iterations for --class custom.
    #[arg(long)]
    iters: Option<usize>,
    /// Also write the record to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    benchmark: Benchmark,
    #[arg(long)]
    class: String,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    cores: u32,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Measured CSV table; repeat to merge several.
    #[arg(long, required = true)]
    measured: Vec<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    /// `active_cores,watts` samples for the board power fit.
    #[arg(long)]
    power: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run records (JSON) or a CSV table; repeatable.
    #[arg(long, required = true, num_args = 1..)]
    predicted: Vec<PathBuf>,
    #[arg(long)]
    measured: PathBuf,
    #[arg(long, default_value_t = beowulf_core::analysis::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Plotdata,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
    #[arg(long)]
    out: PathBuf,
    /// Run records (JSON) or measured CSV tables.
    records: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
