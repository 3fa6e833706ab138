//! Batch front end: reads problem files, runs analysis/synthesis/simulation,
//! writes controller files, diagnostics and plot-ready CSV.

mod commands;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cylinders",
    version,
    about = "Attracting-cylinder analysis, output-feedback synthesis and simulation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify an attracting cylinder for a disturbed linear system.
    Analyze {
        /// Problem file with an [analysis] section (or a [plant] to analyze
        /// its open loop).
        problem: PathBuf,
        /// Output map rows, e.g. "1 -1" or "1 0; 0 1"; overrides the file.
        #[arg(long)]
        output_map: Option<String>,
        /// Comma-separated alpha grid; overrides the file and the default.
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
    },
    /// Synthesize a dynamic output-feedback controller for the target
    /// variable and write it with its certificate.
    Synthesize {
        problem: PathBuf,
        /// Output controller file.
        #[arg(short, long, default_value = "controller.toml")]
        output: PathBuf,
        /// Pin alpha to options.paper_alpha from the problem file.
        #[arg(long)]
        paper_mode: bool,
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        /// Stop once trace(P·S + Q·R) is within this fraction of 2k.
        #[arg(long)]
        stop_tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Run the full trace iteration instead of exiting at the first
        /// feasible controller inequality.
        #[arg(long)]
        no_early_exit: bool,
        /// Pick the feasible controller parameter of smallest norm (smaller
        /// gains, less certificate slack).
        #[arg(long)]
        min_norm_y: bool,
    },
    /// Simulate the closed loop and emit trace/projection/corridor CSV.
    Simulate {
        problem: PathBuf,
        controller: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Re-check a controller file's certificate against its problem.
    Verify {
        problem: PathBuf,
        controller: PathBuf,
        /// Decay rate to verify at (defaults to the certificate's).
        #[arg(long)]
        alpha: Option<f64>,
        /// Accept a relative margin up to this value (for controllers stated
        /// with rounded coefficients).
        #[arg(long)]
        soft: Option<f64>,
    },
    /// Cylinder geometry tools.
    Geometry {
        #[command(subcommand)]
        cmd: GeometryCmd,
    },
}

#[derive(Subcommand)]
enum GeometryCmd {
    /// Image of a cylinder under a linear map ([cylinder] Q, [map] C).
    Image { file: PathBuf },
    /// Projection of a cylinder onto a coordinate plane.
    Project {
        file: PathBuf,
        /// Two 1-based coordinate indices.
        #[arg(long, num_args = 2)]
        axes: Vec<usize>,
        /// Write boundary points to this CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Analyze {
            problem,
            output_map,
            alpha_grid,
        } => commands::analyze(&problem, output_map.as_deref(), alpha_grid),
        Command::Synthesize {
            problem,
            output,
            paper_mode,
            alpha_grid,
            stop_tol,
            max_iters,
            no_early_exit,
            min_norm_y,
        } => commands::synthesize(
            &problem,
            &output,
            paper_mode,
            alpha_grid,
            stop_tol,
            max_iters,
            no_early_exit,
            min_norm_y,
        ),
        Command::Simulate {
            problem,
            controller,
            out_dir,
            dt,
            horizon,
        } => commands::simulate(&problem, &controller, &out_dir, dt, horizon),
        Command::Verify {
            problem,
            controller,
            alpha,
            soft,
        } => commands::verify(&problem, &controller, alpha, soft),
        Command::Geometry { cmd } => match cmd {
            GeometryCmd::Image { file } => commands::geometry_image(&file),
            GeometryCmd::Project {
                file,
                axes,
                out,
                samples,
            } => commands::geometry_project(&file, &axes, out.as_ref(), samples),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
