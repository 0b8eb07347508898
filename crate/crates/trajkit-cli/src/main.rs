//! `trajkit`: batch driver for the trajectory verification, repair,
//! windowing, metrics, simulation and retrieval pipeline.
//!
//! Exit codes: 0 = clean / exported, 1 = bad transitions present or
//! trajectory discarded, 2 = input or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::EXIT_ERROR;
use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "trajkit", version, about = "Camera-trajectory curation pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML); flags override it, it overrides
    /// the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Random seed; overrides the config file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Concurrent videos in batch mode.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the database/geometric/kinematics checks and write the
    /// per-transition report.
    Check {
        /// COLMAP text model directory (cameras.txt, images.txt).
        #[arg(long, value_name = "DIR", required_unless_present = "batch")]
        model_dir: Option<PathBuf>,
        /// Pair statistics record stream.
        #[arg(long, value_name = "FILE", required_unless_present = "batch")]
        stats: Option<PathBuf>,
        /// Match record stream (optional; needed for the geometric check).
        #[arg(long, value_name = "FILE")]
        matches: Option<PathBuf>,
        /// Process every video directory under this root instead.
        #[arg(long, value_name = "DIR", conflicts_with_all = ["model_dir", "stats", "matches"])]
        batch: Option<PathBuf>,
        /// Report file (or report directory in batch mode).
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Check, then fix or discard; export the trajectory on success.
    Repair {
        #[arg(long, value_name = "DIR", required_unless_present = "batch")]
        model_dir: Option<PathBuf>,
        #[arg(long, value_name = "FILE", required_unless_present = "batch")]
        stats: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        matches: Option<PathBuf>,
        #[arg(long, value_name = "DIR", conflicts_with_all = ["model_dir", "stats", "matches"])]
        batch: Option<PathBuf>,
        /// Output trajectory file (or output directory in batch mode).
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Report stream (per-transition records + verdict). Defaults to
        /// `<out>.report.jsonl`; ignored in batch mode.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Video id stamped into the verdict record.
        #[arg(long, value_name = "ID", default_value = "video")]
        video_id: String,
    },
    /// Extract clips, sample memory windows and apply the diversity filter.
    Window {
        #[arg(long, value_name = "FILE")]
        trajectory: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, value_name = "ID")]
        video_id: Option<String>,
    },
    /// Trajectory-following metrics between a ground-truth and a predicted
    /// trajectory.
    Metrics {
        #[arg(long, value_name = "FILE")]
        gt: PathBuf,
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Sparse model for the reconstruction rate (optional).
        #[arg(long, value_name = "DIR")]
        model_dir: Option<PathBuf>,
        /// Total source frame count for the reconstruction rate.
        #[arg(long, value_name = "N")]
        total_frames: Option<usize>,
        /// Record file; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic video directory (model, trajectory, statistics,
    /// matches), optionally corrupted.
    Simulate {
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Corruption(s) as kind@transition:magnitude with kind one of
        /// teleport|rotation|flip|jitter; repeatable.
        #[arg(long, value_name = "SPEC")]
        corrupt: Vec<String>,
        /// Also synthesize per-pair matches (slower).
        #[arg(long)]
        with_matches: bool,
    },
    /// Build a memory bank over a sampled window and retrieve world tokens
    /// for the clip's terminal pose.
    Retrieve {
        #[arg(long, value_name = "FILE")]
        trajectory: PathBuf,
        /// Clip start step; defaults to t1 minus the configured clip length.
        #[arg(long, value_name = "STEP")]
        t0: Option<i64>,
        /// Clip end step; defaults to the last pose.
        #[arg(long, value_name = "STEP")]
        t1: Option<i64>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let seed = config.seed;

    match cli.command {
        Command::Check {
            model_dir,
            stats,
            matches,
            batch,
            out,
        } => match batch {
            Some(root) => commands::run_batch(&root, &out, &config, seed, cli.jobs, false),
            None => commands::run_check(
                &model_dir.expect("clap enforces model_dir"),
                &stats.expect("clap enforces stats"),
                matches.as_deref(),
                &out,
                &config,
                seed,
            ),
        },
        Command::Repair {
            model_dir,
            stats,
            matches,
            batch,
            out,
            report,
            video_id,
        } => match batch {
            Some(root) => commands::run_batch(&root, &out, &config, seed, cli.jobs, true),
            None => {
                let report = report.unwrap_or_else(|| {
                    let mut name = out.as_os_str().to_owned();
                    name.push(".report.jsonl");
                    PathBuf::from(name)
                });
                commands::run_repair(
                    &model_dir.expect("clap enforces model_dir"),
                    &stats.expect("clap enforces stats"),
                    matches.as_deref(),
                    &out,
                    &report,
                    &video_id,
                    &config,
                    seed,
                )
            }
        },
        Command::Window {
            trajectory,
            out,
            video_id,
        } => {
            let id = video_id.unwrap_or_else(|| {
                trajectory
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "video".into())
            });
            commands::run_window(&trajectory, &out, &id, &config, seed)
        }
        Command::Metrics {
            gt,
            pred,
            model_dir,
            total_frames,
            out,
        } => commands::run_metrics(
            &gt,
            &pred,
            model_dir.as_deref(),
            total_frames,
            out.as_deref(),
            &config,
        ),
        Command::Simulate {
            out,
            corrupt,
            with_matches,
        } => commands::run_simulate(&out, &corrupt, with_matches, &config, seed),
        Command::Retrieve {
            trajectory,
            t0,
            t1,
            out,
        } => commands::run_retrieve(&trajectory, t0, t1, &out, &config, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
