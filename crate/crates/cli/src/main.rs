mod calibrate;
mod common;
mod render;
mod serve;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::UsageError;

/// Spherical reprojection, hand-eye calibration and latency tooling for
/// wide-angle stereo teleoperation.
#[derive(Debug, Parser)]
#[command(name = "spheroview", version, propagate_version = true)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// Log more (repeat for more detail). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate camera, mount and marker transforms from marker sightings.
    Calibrate(calibrate::Args),
    /// Re-render a fisheye frame for a virtual eye pose.
    Render(render::Args),
    /// Tabulate the bearing error of sphere reprojection against distance.
    ErrorCurve(render::CurveArgs),
    /// Run the closed teleoperation loop offline and write metrics.
    Simulate(simulate::Args),
    /// Serve the live loop to a viewer over TCP or WebSocket.
    Serve(serve::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let default = if matches!(cli.command, Command::Serve(_)) && cli.verbose == 0 {
        "info"
    } else {
        level
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default)).init();

    let exec = common::execution(cli.sequential);
    let result = match cli.command {
        Command::Calibrate(a) => calibrate::run(a, exec),
        Command::Render(a) => render::run(a, exec),
        Command::ErrorCurve(a) => render::run_curve(a),
        Command::Simulate(a) => simulate::run(a, exec),
        Command::Serve(a) => serve::run(a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
