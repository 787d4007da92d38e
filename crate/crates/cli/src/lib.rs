//! `emoc`: synthesize a corpus, train, run controllable inference, sweep
//! the intensity grid and evaluate against the frozen thresholds.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numeric, 4 acceptance.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "emoc",
    version,
    about = "Emotion-controllable face coefficient pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// TOML overrides on top of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when the config names none.
    #[arg(long, default_value = "smoke")]
    pub preset: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint training, then the separate mapping network run.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coefficients, keypoints and frames for one clip.
    Infer(InferArgs),
    /// Intensity matrices over the label × window grid.
    Sweep {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to every emotion except Calm.
        #[arg(long)]
        emotion: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out metrics against the frozen thresholds; exit 4 on any failure.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posed mesh of one coefficient frame as OBJ.
    ExportMesh {
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0)]
        basis_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Training output directory.
    #[arg(long)]
    pub run: PathBuf,
    /// 16 kHz mono PCM WAV.
    #[arg(
        long,
        conflicts_with = "features",
        required_unless_present = "features"
    )]
    pub wav: Option<PathBuf>,
    /// Feature CSV as written by `synth`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Coefficient CSV; the first row is the source face.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub emotion: String,
    /// Intensity in [0, 1], mapped onto the grid ordering.
    #[arg(long, conflicts_with_all = ["label", "window"], required_unless_present = "label")]
    pub intensity: Option<f64>,
    #[arg(long, requires = "window")]
    pub label: Option<u8>,
    #[arg(long, requires = "label")]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let threads = config::threads_from_env()?;
    match cli.command {
        Command::Synth { config, out } => commands::synth(&config, &out, threads),
        Command::Train {
            config,
            corpus,
            out,
        } => commands::train(&config, &corpus, &out, threads),
        Command::Infer(args) => commands::infer(&args, threads),
        Command::Sweep {
            run,
            corpus,
            emotion,
            out,
        } => commands::sweep(&run, &corpus, emotion.as_deref(), &out, threads),
        Command::Eval {
            run,
            corpus,
            thresholds,
            out,
        } => commands::eval(&run, &corpus, thresholds.as_deref(), &out),
        Command::ExportMesh {
            coeffs,
            frame,
            basis_seed,
            out,
        } => commands::export_mesh(&coeffs, frame, basis_seed, &out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("emoc: {e}");
            e.exit_code()
        }
    }
}
