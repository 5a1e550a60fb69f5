//! `choicekit` command line: fit, simulate, bench and inspect.
//!
//! Exit codes: 0 success, 1 usage error, 2 data, validation, estimation or
//! I/O error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

mod bench;
mod fit;
pub mod manifest;
mod simulate;

pub use fit::FitConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] choicekit::Error),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "UsageError",
            CliError::Core(e) => e.name(),
            CliError::Io { .. } => "Io",
            CliError::Json { .. } => "BadJson",
            CliError::Invalid(_) => "InvalidInput",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "choicekit", version, about = "Conditional and nested logit estimation")]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a conditional or nested logit model.
    Fit(fit::FitArgs),
    /// Write a synthetic dataset directory.
    Simulate(simulate::SimulateArgs),
    /// Time model fits over a grid of problem sizes.
    Bench(bench::BenchArgs),
    /// Print a dataset summary and check its invariants.
    Inspect(InspectArgs),
}

#[derive(Debug, clap::Args)]
struct InspectArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    data: PathBuf,
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub(crate) fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let m = manifest::Manifest::read(&args.data)?;
    let loaded = m.load(&manifest_dir(&args.data))?;
    let ds = &loaded.data;
    let _ = write!(out, "{}", ds.summary());
    let _ = writeln!(out, "encodings: {}", loaded.encodings);
    let violations = ds.violations();
    if violations.is_empty() {
        let _ = writeln!(out, "invariants: ok");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(out, "invariants: {} violation(s)", violations.len());
        for v in &violations {
            let _ = writeln!(out, "  {}: {v}", v.name());
        }
        Ok(EXIT_FAILURE)
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Fit(a) => fit::cmd_fit(a, &mut out),
        Command::Simulate(a) => simulate::cmd_simulate(a, &mut out),
        Command::Bench(a) => bench::cmd_bench(a, &mut out),
        Command::Inspect(a) => inspect(a, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            e.exit_code()
        }
    }
}
