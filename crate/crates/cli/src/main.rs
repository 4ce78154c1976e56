//! `emsynth` command-line tool.
//!
//! Exit codes: 0 ok, 2 safety reject, 3 parse or usage error, 4 I/O error.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use emsynth::audio::wav::Encoding;
use emsynth::{Polarity, Shape};

#[derive(Parser, Debug)]
#[command(
    name = "emsynth",
    version,
    about = "EMS waveform synthesis, analysis and live streaming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a stimulus or a program file to WAV.
    Render(RenderArgs),
    /// Measure rate, pulse width, levels and spectrum of a WAV file.
    Analyze(AnalyzeArgs),
    /// Check a program file against the safety envelope.
    Validate(ValidateArgs),
    /// Print a strength-duration curve as CSV.
    SdCurve(SdCurveArgs),
    /// Stream live output under control of a TCP client.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct EnvelopeArgs {
    /// Safety envelope file (TOML); built-in defaults otherwise.
    #[arg(long)]
    envelope: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Program file; replaces the inline stimulus flags.
    #[arg(long, conflicts_with_all = ["shape", "freq", "width", "table", "carrier"])]
    program: Option<PathBuf>,
    #[arg(long)]
    shape: Option<Shape>,
    #[arg(long, default_value = "biphasic")]
    polarity: Polarity,
    /// Pulse rate in Hz.
    #[arg(long)]
    freq: Option<f64>,
    /// Phase width in microseconds.
    #[arg(long)]
    width: Option<f64>,
    /// Interphase gap in microseconds.
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
    #[arg(long, default_value_t = 1.0)]
    amp: f64,
    /// Gain in dB; overrides --calibrated.
    #[arg(long)]
    gain: Option<f64>,
    /// Apply the per-shape calibration gain.
    #[arg(long)]
    calibrated: bool,
    /// Duration in seconds.
    #[arg(long)]
    dur: Option<f64>,
    /// Russian current carrier in Hz.
    #[arg(long)]
    carrier: Option<f64>,
    /// Russian current burst length in ms.
    #[arg(long)]
    burst: Option<f64>,
    /// Russian current gap between bursts in ms.
    #[arg(long)]
    interburst: Option<f64>,
    /// Arbitrary waveform table, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    table: Option<Vec<f64>>,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = emsynth::waveform::DEFAULT_SAMPLE_RATE_HZ)]
    rate: u32,
    #[arg(long, default_value = "float32")]
    format: Encoding,
    #[command(flatten)]
    envelope: EnvelopeArgs,
    /// Clamp out-of-envelope values instead of refusing to render.
    #[arg(long)]
    clamp: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    input: PathBuf,
    /// Print CSV instead of key: value lines.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    program: PathBuf,
    #[command(flatten)]
    envelope: EnvelopeArgs,
    /// Report what clamping would change instead of rejecting.
    #[arg(long)]
    clamp: bool,
}

#[derive(Args, Debug)]
pub struct SdCurveArgs {
    #[arg(long, required_unless_present = "fit")]
    rheobase: Option<f64>,
    /// Chronaxie in microseconds.
    #[arg(long, required_unless_present = "fit")]
    chronaxie: Option<f64>,
    /// Fit the model to `duration_us,threshold` rows from this CSV file.
    #[arg(long, conflicts_with_all = ["rheobase", "chronaxie"])]
    fit: Option<PathBuf>,
    /// Shortest duration in microseconds.
    #[arg(long, default_value_t = 10.0)]
    from: f64,
    /// Longest duration in microseconds.
    #[arg(long, default_value_t = 10_000.0)]
    to: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinkChoice {
    Device,
    File,
    Null,
    Stdout,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: SocketAddr,
    /// Allow binding a non-loopback address. The protocol has no authentication.
    #[arg(long)]
    allow_remote: bool,
    /// `device` needs an audio backend, which this build does not include.
    #[arg(long, value_enum, default_value = "null")]
    sink: SinkChoice,
    /// Output path for the file sink.
    #[arg(long, required_if_eq("sink", "file"))]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = emsynth::service::session::DEFAULT_SERVE_RATE_HZ)]
    rate: u32,
    #[arg(long, default_value = "float32")]
    format: Encoding,
    #[command(flatten)]
    envelope: EnvelopeArgs,
    /// Clamp out-of-envelope updates (default).
    #[arg(long, conflicts_with = "reject")]
    clamp: bool,
    /// Refuse out-of-envelope updates.
    #[arg(long)]
    reject: bool,
    /// Samples per chunk.
    #[arg(long, default_value_t = emsynth::service::session::DEFAULT_CHUNK_SIZE)]
    chunk: usize,
    /// Stop after this many seconds of output.
    #[arg(long)]
    duration: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_PARSE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Render(a) => commands::render(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::SdCurve(a) => commands::sd_curve(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
