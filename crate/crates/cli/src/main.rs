use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use teleop_cli::commands::{self, sweep_csv, CliError};
use teleop_core::Pose;

/// Turns tracked handheld-gripper recordings into robot training episodes.
///
/// Exit codes: 0 success, 1 validation or quality failure, 2 usage or
/// configuration error, 3 processing error. Logs go to standard error
/// (level from RUST_LOG, default `info`); summaries go to standard output as
/// JSON.
#[derive(Debug, Parser)]
#[command(name = "teleop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic pose, camera and truth logs from a generator spec.
    Generate {
        /// Generator spec (TOML).
        spec: PathBuf,
        /// Output directory; created if missing.
        #[arg(short, long, default_value = ".")]
        out_dir: PathBuf,
        /// Overrides the spec's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full pipeline on one pose log and one camera log.
    Process {
        /// Pipeline config (TOML).
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        pose_log: PathBuf,
        #[arg(long)]
        camera_log: PathBuf,
        /// Episode file to write; manifest and reports go next to it.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Joint trajectory with width-dependent TCP compensation.
    Compensate {
        #[arg(short, long)]
        config: PathBuf,
        /// Episode with TCP rows and gripper widths.
        episode: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Check one episode file or a directory of episodes.
    Validate {
        path: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Translation error of an episode against a truth log, mm.
    Eval {
        episode: PathBuf,
        truth: PathBuf,
    },
    /// Compensation distance and shifted pose over a width grid, as CSV.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// TCP pose as x,y,z,qx,qy,qz,qw.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        pose: Option<Vec<f64>>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { spec, out_dir, seed } => {
            print_json(&commands::cmd_generate(&spec, &out_dir, seed)?);
        }
        Command::Process {
            config,
            pose_log,
            camera_log,
            out,
        } => {
            print_json(&commands::cmd_process(&config, &pose_log, &camera_log, &out)?);
        }
        Command::Compensate { config, episode, out } => {
            let s = commands::cmd_compensate(&config, &episode, &out)?;
            log::info!(
                "compensation distance {:.6}..{:.6} m, mean {:.6} m",
                s.min_distance_m,
                s.max_distance_m,
                s.mean_distance_m
            );
            print_json(&serde_json::json!({
                "output": s.output,
                "frames": s.frames,
                "dof": s.dof,
                "min_distance_m": s.min_distance_m,
                "max_distance_m": s.max_distance_m,
                "mean_distance_m": s.mean_distance_m,
                "max_joint_step_rad": s.max_joint_step_rad,
            }));
        }
        Command::Validate { path, json } => {
            let summary = commands::cmd_validate(&path)?;
            print!("{}", summary.to_text());
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&summary).expect("serializable");
                std::fs::write(&p, text + "\n").map_err(|e| CliError::Processing(format!("{}: {e}", p.display())))?;
            }
            if !summary.is_valid() {
                return Err(CliError::Validation(format!("{}: validation failed", path.display())));
            }
        }
        Command::Eval { episode, truth } => {
            print_json(&commands::cmd_eval(&episode, &truth)?);
        }
        Command::Sweep { config, steps, pose } => {
            let pose = match pose {
                Some(v) => {
                    let row: [f64; 7] = v
                        .try_into()
                        .map_err(|_| CliError::Usage("--pose needs 7 values".into()))?;
                    Pose::from_row(&row).map_err(|e| CliError::Usage(format!("--pose: {e}")))?
                }
                None => Pose::IDENTITY,
            };
            print!("{}", sweep_csv(&commands::cmd_sweep(&config, steps, pose)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
