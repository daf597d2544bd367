//! `epsim` binary: thin argument layer over [`epsim::runner`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epsim::config::Experiment;
use epsim::runner::{run, RunRequest};
use epsim::CliError;

#[derive(Parser)]
#[command(
    name = "epsim",
    version,
    about = "Spectra, loop tomography, phase scans and transfer maps for a lossy two-mode block"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export the eigenvalue surface, mode overlap and degeneracy markers
    Spectrum(CommonArgs),
    /// Drive one closed parameter loop and record Bloch tomography
    Encircle(EncircleArgs),
    /// Ramsey phase scans of the state returned by a loop
    Phase(CommonArgs),
    /// Final-mode population over a (j_min, period) grid
    TransferMap(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run-configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (0 = automatic); falls back to EPSIM_JOBS
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the sampling seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EncircleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also write the raw block amplitudes along the loop
    #[arg(long)]
    dump_trajectory: bool,
    /// Keep every n-th integration step in the trajectory file
    #[arg(long, default_value_t = 1)]
    traj_stride: usize,
}

fn jobs_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("EPSIM_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("EPSIM_JOBS must be a thread count, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("EPSIM_JOBS: {e}"))),
    }
}

fn request(common: &CommonArgs, expected: Experiment) -> Result<RunRequest, CliError> {
    let jobs = match common.jobs {
        Some(j) => Some(j),
        None => jobs_from_env()?,
    };
    Ok(RunRequest {
        config_path: common.config.clone(),
        out_dir: common.out.clone(),
        jobs,
        seed: common.seed,
        expected,
        dump_trajectory: false,
        traj_stride: 1,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let built = match &cli.command {
        Command::Spectrum(c) => request(c, Experiment::Spectrum),
        Command::Encircle(e) => request(&e.common, Experiment::Tomography).map(|mut r| {
            r.dump_trajectory = e.dump_trajectory;
            r.traj_stride = e.traj_stride;
            r
        }),
        Command::Phase(c) => request(c, Experiment::Phase),
        Command::TransferMap(c) => request(c, Experiment::TransferMap),
    };
    let outcome = built.and_then(|req| run(&req));
    match outcome {
        Ok(summary) => {
            for (file, rows) in &summary.files {
                println!("wrote {} ({rows} rows)", summary.out_dir.join(file).display());
            }
            println!("wrote {}", summary.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
