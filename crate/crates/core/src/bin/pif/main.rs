//! `pif`: author and experimenter tools around the story engine.
//!
//! Exit codes: 0 success, 1 invalid input (story, config, data), 2 runtime failure.
//! Diagnostics go to stderr; `RUST_LOG=debug` for more.

mod commands;
mod play;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "pif", version, about = "Physiological interactive fiction tools")]
struct Cli {
    /// Output format for results and diagnostics.
    #[arg(long, global = true, value_enum, default_value_t)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and lint stories.
    Lint {
        #[arg(required = true)]
        stories: Vec<PathBuf>,
        /// Also fail on informational findings.
        #[arg(long)]
        strict: bool,
    },
    /// Read a story in the terminal. Enter advances, a number picks a choice,
    /// `set phys_x=v` sets a physiological variable, `q` quits.
    Play {
        story: PathBuf,
        /// Read commands from a file instead of standard input.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Initial physiological variables, e.g. `--set phys_arousal=0.8`.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
    },
    /// Generate synthetic sensor recordings, a feature table for a cohort, or a live stream.
    Simulate(commands::SimulateArgs),
    /// Extract one feature row per tagged window of recordings.
    Features {
        #[arg(required = true)]
        recordings: Vec<PathBuf>,
        /// Output CSV (standard output by default).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Cross-validate (leave one subject out) and fit a model on a feature table.
    Train(commands::TrainArgs),
    /// Classify each tagged window of a recording read from standard input.
    Classify {
        #[arg(long)]
        model: PathBuf,
        /// Recording to read instead of standard input.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Fixed window length for recordings without tags.
        #[arg(long, default_value_t = 30.0)]
        window: f64,
        /// How a window is rank-normalized: against the model's training population,
        /// or jointly with the recording's other windows.
        #[arg(long, value_enum, default_value_t = commands::RankArg::Population)]
        rank: commands::RankArg,
    },
    /// Replay a recording through the transport: re-recorded to standard output, or served.
    Replay {
        recording: PathBuf,
        #[arg(long, value_enum, default_value_t = commands::SpeedArg::Max)]
        speed: commands::SpeedArg,
        /// Publish the replayed streams on this address instead of writing to stdout.
        #[arg(long, value_name = "HOST:PORT")]
        serve: Option<String>,
    },
    /// Record streams from a transport server.
    Record {
        #[arg(long, value_name = "HOST:PORT", default_value = "127.0.0.1:16571")]
        from: String,
        /// Stream names or source ids to record (all by default).
        #[arg(long = "stream")]
        streams: Vec<String>,
        /// Output file (standard output by default).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Stop after this many seconds (Ctrl-C otherwise).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run a reading session described by a TOML config.
    Serve {
        config: PathBuf,
    },
}

/// A failed command: message plus exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn invalid(e: impl Display) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }

    pub fn runtime(e: impl Display) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<pif::session::SessionError> for Failure {
    fn from(e: pif::session::SessionError) -> Self {
        if e.is_validation() {
            Failure::invalid(e)
        } else {
            Failure::runtime(e)
        }
    }
}

impl From<pif::transport::TransportError> for Failure {
    fn from(e: pif::transport::TransportError) -> Self {
        use pif::transport::TransportError as E;
        match e {
            E::Corrupt { .. } | E::Json(_) | E::InvalidInfo(_) => Failure::invalid(e),
            _ => Failure::runtime(e),
        }
    }
}

/// Set by Ctrl-C.
pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let _ = ctrlc::set_handler(|| INTERRUPTED.store(true, Ordering::SeqCst));
    let f = cli.format;
    let result = match cli.command {
        Command::Lint { stories, strict } => commands::lint(&stories, strict, f),
        Command::Play { story, script, set } => play::run(&story, script.as_deref(), &set, f),
        Command::Simulate(args) => commands::simulate(&args, f),
        Command::Features { recordings, output } => commands::features(&recordings, output.as_deref()),
        Command::Train(args) => commands::train(&args, f),
        Command::Classify {
            model,
            input,
            window,
            rank,
        } => commands::classify(&model, input.as_deref(), window, rank, f),
        Command::Replay { recording, speed, serve } => commands::replay(&recording, speed, serve.as_deref()),
        Command::Record {
            from,
            streams,
            output,
            duration,
        } => commands::record(&from, &streams, output.as_deref(), duration),
        Command::Serve { config } => commands::serve(&config, f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if !failure.message.is_empty() {
                match f {
                    Format::Text => eprintln!("pif: {}", failure.message),
                    Format::Json => eprintln!("{}", serde_json::json!({"error": failure.message, "code": failure.code})),
                }
            }
            ExitCode::from(failure.code)
        }
    }
}
