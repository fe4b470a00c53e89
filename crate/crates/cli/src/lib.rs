//! Command-line front end: argument and config parsing, dispatch to the
//! `tefield` library, and table output.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
pub mod options;
pub mod output;

use options::{
    BoundaryArgs, DiagnoseArgs, EstimateArgs, ExposureArgs, FieldArgs, IngestArgs, MomentsArgs, MonteCarloArgs,
};
use output::{Format, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or option values.
    Usage(String),
    /// Unreadable input, malformed data or a failed computation.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<tefield::Error> for CliError {
    fn from(e: tefield::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tefield", version, about = "Diffusion treatment-effect fields, boundaries and estimation")]
pub struct Cli {
    /// TOML file with a `[command]` table of options; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write results here instead of standard output.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Field values and derivatives on a radial grid.
    Field(FieldArgs),
    /// Boundary radius d*(t).
    Boundary(BoundaryArgs),
    /// Spatial moments and energies.
    Moments(MomentsArgs),
    /// Cumulative exposure at fixed distances.
    Exposure(ExposureArgs),
    /// Monte Carlo campaigns.
    Montecarlo(MonteCarloArgs),
    /// Decay and boundary estimation on (distance, outcome) data.
    Estimate(EstimateArgs),
    /// Rank correlation, binned decline and regional fits.
    Diagnose(DiagnoseArgs),
    /// Match observations to sources and build the analysis sample.
    Ingest(IngestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Field(_) => "field",
            Command::Boundary(_) => "boundary",
            Command::Moments(_) => "moments",
            Command::Exposure(_) => "exposure",
            Command::Montecarlo(_) => "montecarlo",
            Command::Estimate(_) => "estimate",
            Command::Diagnose(_) => "diagnose",
            Command::Ingest(_) => "ingest",
        }
    }
}

const COMMANDS: [&str; 8] = ["field", "boundary", "moments", "exposure", "montecarlo", "estimate", "diagnose", "ingest"];

#[derive(Debug, Default)]
struct ConfigFile {
    output: Option<PathBuf>,
    format: Option<Format>,
    sections: toml::Table,
}

fn load_config(path: &PathBuf) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut cfg = ConfigFile::default();
    for (k, v) in table {
        match (k.as_str(), v) {
            ("output", toml::Value::String(s)) => cfg.output = Some(PathBuf::from(s)),
            ("format", toml::Value::String(s)) => {
                cfg.format = Some(match s.as_str() {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => return Err(CliError::Usage(format!("config: unknown format `{s}`"))),
                })
            }
            (name, toml::Value::Table(t)) if COMMANDS.contains(&name) => {
                cfg.sections.insert(name.to_string(), toml::Value::Table(t));
            }
            (name, _) => return Err(CliError::Usage(format!("config: unexpected key `{name}`"))),
        }
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(Report, Option<PathBuf>, Format), CliError> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ConfigFile::default(),
    };
    let section = match cfg.sections.get(cli.command.name()) {
        Some(toml::Value::Table(t)) => Some(t),
        _ => None,
    };
    let report = commands::dispatch(&cli.command, section)?;
    let out = cli.output.clone().or(cfg.output);
    let format = cli.format.or(cfg.format).unwrap_or_default();
    Ok((report, out, format))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage error, 2 data or numerical error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = execute(&cli).and_then(|(report, out, format)| {
        let _ = writeln!(stderr, "{}", report.config_line());
        match out {
            Some(path) => {
                let mut buf = Vec::new();
                report.write(format, &mut buf)?;
                std::fs::write(&path, buf).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
            }
            None => report.write(format, stdout),
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
