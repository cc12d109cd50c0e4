use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use fbstack_cli::client::run_client;
use fbstack_cli::server::serve;
use fbstack_cli::{apply_overrides, run_scenario, CliError, ClockMode, RunOptions};
use fbstack_core::harness::bench::run_benchmark;
use fbstack_core::harness::SinkKind;
use fbstack_core::sink::replay_index;
use fbstack_core::{validate_region, BenchSuite, ScenarioConfig};

/// Composited framebuffer stack: scenario runner, benchmarks and tools.
#[derive(Parser)]
#[command(name = "fbstack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        sink: Option<SinkArg>,
        /// Output directory for the images sink.
        #[arg(long)]
        images_dir: Option<PathBuf>,
        /// Override the scenario duration, in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum, default_value = "wall")]
        clock: ClockMode,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep the region files after a wall clock run.
        #[arg(long)]
        keep_session: bool,
    },
    /// Measure rendering overhead; uses built-in defaults without a suite file.
    Bench {
        suite: Option<PathBuf>,
        #[arg(long, value_enum)]
        sink: Option<SinkArg>,
        /// Seconds per measured loop.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a region dump for protocol violations.
    Validate { dump: PathBuf },
    /// Verify an image sequence against its index file.
    Replay { index: PathBuf },
    #[command(hide = true)]
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        epoch_us: u64,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(hide = true)]
    Client {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        epoch_us: u64,
        #[arg(long)]
        id: u32,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SinkArg {
    Checksum,
    Null,
    Images,
}

impl From<SinkArg> for SinkKind {
    fn from(s: SinkArg) -> Self {
        match s {
            SinkArg::Checksum => SinkKind::Checksum,
            SinkArg::Null => SinkKind::Null,
            SinkArg::Images => SinkKind::Images,
        }
    }
}

/// Two-client output may beat one client by this much before it counts as
/// a monotonicity violation.
const MONOTONICITY_NOISE: f64 = 0.05;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether the command finished without recorded violations.
fn execute(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Run {
            scenario,
            sink,
            images_dir,
            duration,
            clock,
            report,
            keep_session,
        } => {
            let mut config = ScenarioConfig::load(&scenario)?;
            apply_overrides(&mut config, sink.map(Into::into), images_dir, duration)?;
            let mut options = RunOptions::new(clock, std::env::current_exe()?);
            options.keep_session_dir = keep_session;
            let result = run_scenario(&config, &options)?;
            print!("{}", result.to_text());
            if let Some(path) = report {
                fs::write(path, result.to_json())?;
            }
            Ok(result.is_clean())
        }
        Command::Bench {
            suite,
            sink,
            duration,
            report,
        } => {
            let mut suite = match suite {
                Some(path) => BenchSuite::load(&path)?,
                None => BenchSuite::default(),
            };
            if let Some(s) = sink {
                suite.sink = s.into();
            }
            if let Some(d) = duration {
                suite.seconds_per_run = d;
            }
            let result = run_benchmark(&suite)?;
            print!("{}", result.to_text());
            if let Some(path) = report {
                fs::write(path, result.to_json())?;
            }
            let monotone = match (&result.composited, &result.single_client) {
                (Some(two), Some(one)) => {
                    two.output.mean_fps <= one.output.mean_fps * (1.0 + MONOTONICITY_NOISE)
                }
                _ => true,
            };
            if !monotone {
                println!("VIOLATION: adding a second client increased composited output fps");
            }
            Ok(monotone)
        }
        Command::Validate { dump } => {
            let bytes = fs::read(&dump)?;
            let violations = validate_region(&bytes[..]);
            if violations.is_empty() {
                println!("{}: valid region ({} bytes)", dump.display(), bytes.len());
            }
            for v in &violations {
                println!("{}: {v}", dump.display());
            }
            Ok(violations.is_empty())
        }
        Command::Replay { index } => {
            let report = replay_index(&index)?;
            println!("{} frames checked", report.frames);
            for p in &report.problems {
                println!("{p}");
            }
            Ok(report.is_clean())
        }
        Command::Serve {
            scenario,
            dir,
            epoch_us,
            out,
        } => {
            let config = ScenarioConfig::load(&scenario)?;
            let report = serve(&config, &dir, epoch_us)?;
            fs::write(out, serde_json::to_string(&report)?)?;
            Ok(true)
        }
        Command::Client {
            scenario,
            dir,
            epoch_us,
            id,
        } => {
            let config = ScenarioConfig::load(&scenario)?;
            let spec = config
                .client(id)
                .ok_or_else(|| CliError::Process(format!("scenario has no client {id}")))?;
            let report = run_client(spec, &dir, epoch_us, config.duration_us())?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(true)
        }
    }
}
