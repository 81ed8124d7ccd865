//! Command-line front end: `catalog`, `simulate`, `sweep`, `dump-ops`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 missing input file or bad usage,
//! 3 config schema/validation error, 4 strict-mode capacity overflow.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bundled;
use crate::config::{ConfigError, Doc};
use crate::hw::{builtin_catalog, catalog_entry, CapacityMode, HardwareSpec, HwError};
use crate::opgraph::{action_graph, decode_graph, prefill_graph, vision_graph, write_ops_csv, Phase};
use crate::report;
use crate::scheduler::{control_frequency_sweep, step_latency, EvalOptions, FrequencyMode, SimError, StepReport};
use crate::workload::{RequestProfile, VlaModelSpec, WorkloadError};

#[derive(Debug, Parser)]
#[command(name = "edgevla", version, about = "Roofline latency and control-frequency projections for VLA models on edge accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the built-in hardware systems.
    Catalog {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Simulate one model on one system.
    Simulate(SimulateArgs),
    /// Evaluate a model x hardware grid.
    Sweep(SweepArgs),
    /// Export the operator table of a model's phase graphs.
    DumpOps(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CapacityArg {
    Strict,
    Warn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrequencyArg {
    Amortized,
    PerInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    All,
    Vision,
    Prefill,
    Decode,
    Action,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Request profile file; defaults to the bundled request.
    #[arg(long)]
    pub request: Option<String>,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub prefetch: Toggle,
    #[arg(long, value_enum, default_value_t = CapacityArg::Warn)]
    pub capacity: CapacityArg,
    /// How inference latency maps to a control rate.
    #[arg(long, value_enum, default_value_t = FrequencyArg::Amortized)]
    pub frequency: FrequencyArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            prefetch: self.prefetch == Toggle::On,
            capacity: match self.capacity {
                CapacityArg::Strict => CapacityMode::Strict,
                CapacityArg::Warn => CapacityMode::Warn,
            },
            frequency: match self.frequency {
                FrequencyArg::Amortized => FrequencyMode::Amortized,
                FrequencyArg::PerInference => FrequencyMode::PerInference,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Catalog name or hardware config file.
    #[arg(long)]
    pub hw: String,
    /// Bundled model name or model config file.
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Grid file with `models`, `hardware` and an optional `[request]`.
    #[arg(long, conflicts_with_all = ["model", "hw"])]
    pub grid: Option<String>,
    /// Models to sweep (repeatable); used when no grid is given.
    #[arg(long)]
    pub model: Vec<String>,
    /// Systems to sweep (repeatable); defaults to the whole catalog.
    #[arg(long)]
    pub hw: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub request: Option<String>,
    #[arg(long, value_enum, default_value_t = PhaseArg::All)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{origin}: {source}")]
    Config {
        origin: String,
        #[source]
        source: ConfigError,
    },
    #[error("{0}")]
    Workload(#[from] WorkloadError),
    #[error("{0}")]
    Capacity(HwError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Capacity(h) => CliError::Capacity(h),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(io::Error::other(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::MissingFile(_) | CliError::Usage(_) => 2,
            CliError::Config { .. } | CliError::Workload(_) => 3,
            CliError::Capacity(_) => 4,
        }
    }
}

/// A resolved run: every source loaded and validated.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub hardware: HardwareSpec,
    pub model: VlaModelSpec,
    pub request: RequestProfile,
    pub options: EvalOptions,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(CliError::MissingFile(path.to_path_buf())),
        Err(e) => Err(CliError::Io(e)),
    }
}

fn config_err(origin: &str) -> impl FnOnce(ConfigError) -> CliError + '_ {
    move |source| CliError::Config {
        origin: origin.to_string(),
        source,
    }
}

/// Catalog name, or a path to a hardware config file.
pub fn resolve_hardware(source: &str) -> Result<HardwareSpec, CliError> {
    if let Some(hw) = catalog_entry(source) {
        return Ok(hw);
    }
    let text = read_file(Path::new(source))?;
    HardwareSpec::from_toml(&text).map_err(config_err(source))
}

/// Bundled model name, or a path to a model config file.
pub fn resolve_model(source: &str) -> Result<VlaModelSpec, CliError> {
    let text = match bundled::model_text(source) {
        Some(t) => t.to_string(),
        None => read_file(Path::new(source))?,
    };
    VlaModelSpec::from_toml(&text).map_err(config_err(source))
}

pub fn resolve_request(source: Option<&str>) -> Result<RequestProfile, CliError> {
    match source {
        None => RequestProfile::from_toml(bundled::DEFAULT_REQUEST).map_err(config_err("default request")),
        Some(path) => {
            let text = read_file(Path::new(path))?;
            RequestProfile::from_toml(&text).map_err(config_err(path))
        }
    }
}

/// Models, systems and request of a sweep grid document.
#[derive(Debug, Clone)]
pub struct Grid {
    pub models: Vec<VlaModelSpec>,
    pub hardware: Vec<HardwareSpec>,
    pub request: Option<RequestProfile>,
}

pub fn parse_grid(text: &str, origin: &str) -> Result<Grid, CliError> {
    let parsed = (|| {
        let doc = Doc::parse(text)?;
        doc.allow_keys(&["models", "hardware", "request"])?;
        let models = doc
            .opt_str_array("models")?
            .ok_or_else(|| ConfigError::Missing(doc.path("models")))?;
        let hardware = doc.opt_str_array("hardware")?;
        let request = match doc.opt_table("request")? {
            Some(t) => Some(RequestProfile::from_doc(&t)?),
            None => None,
        };
        Ok((models, hardware, request))
    })();
    let (models, hardware, request) = parsed.map_err(config_err(origin))?;
    let models = models.iter().map(|m| resolve_model(m)).collect::<Result<Vec<_>, _>>()?;
    let hardware = match hardware {
        Some(hs) => hs.iter().map(|h| resolve_hardware(h)).collect::<Result<Vec<_>, _>>()?,
        None => builtin_catalog(),
    };
    if models.is_empty() || hardware.is_empty() {
        return Err(CliError::Usage(format!("{origin}: grid needs at least one model and one system")));
    }
    Ok(Grid {
        models,
        hardware,
        request,
    })
}

fn emit(out: &Option<PathBuf>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

pub fn cmd_catalog(format: Format, stdout: &mut dyn Write) -> Result<(), CliError> {
    let hws = builtin_catalog();
    let text = match format {
        Format::Table => report::catalog_table(&hws),
        Format::Csv => report::catalog_csv(&hws),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&hws).map_err(io::Error::other)?;
            s.push('\n');
            s
        }
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn render(rows: &[StepReport], format: Format) -> Result<Vec<u8>, CliError> {
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            report::write_sweep_csv(&mut buf, rows)?;
            buf
        }
        Format::Json => report::reports_json(rows).into_bytes(),
        Format::Table if rows.len() == 1 => report::step_table(&rows[0]).into_bytes(),
        Format::Table => report::sweep_table(rows).into_bytes(),
    })
}

pub fn cmd_simulate(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let r = step_latency(&cfg.model, &cfg.hardware, &cfg.request, &cfg.options)?;
    if r.degenerate && cfg.format != Format::Table {
        writeln!(stderr, "note: degenerate input (no images and no tokens), nothing to simulate")?;
    }
    if let (Some(over), true) = (r.capacity_overflow, cfg.format != Format::Table) {
        writeln!(stderr, "warning: resident set exceeds memory capacity by {} bytes", report::sig6(over))?;
    }
    emit(&cfg.out, stdout, &render(std::slice::from_ref(&r), cfg.format)?)
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let grid = match &args.grid {
        Some(path) => parse_grid(&read_file(Path::new(path))?, path)?,
        None if args.model.is_empty() && args.hw.is_empty() => parse_grid(bundled::FIG_GRID, "bundled grid")?,
        None => Grid {
            models: if args.model.is_empty() {
                vec![VlaModelSpec::molmoact_7b_class()]
            } else {
                args.model.iter().map(|m| resolve_model(m)).collect::<Result<_, _>>()?
            },
            hardware: if args.hw.is_empty() {
                builtin_catalog()
            } else {
                args.hw.iter().map(|h| resolve_hardware(h)).collect::<Result<_, _>>()?
            },
            request: None,
        },
    };
    let request = match (&args.eval.request, grid.request) {
        (Some(path), _) => resolve_request(Some(path))?,
        (None, Some(r)) => r,
        (None, None) => resolve_request(None)?,
    };
    let rows = control_frequency_sweep(&grid.models, &grid.hardware, &request, &args.eval.options())?;
    emit(&args.eval.out, stdout, &render(&rows, args.format)?)?;
    writeln!(stderr, "{}", report::sweep_summary(&rows))?;
    Ok(())
}

pub fn cmd_dump_ops(args: &DumpArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let model = resolve_model(&args.model)?;
    let request = resolve_request(args.request.as_deref())?;
    let wanted = |p: Phase| match args.phase {
        PhaseArg::All => true,
        PhaseArg::Vision => p == Phase::Vision,
        PhaseArg::Prefill => p == Phase::Prefill,
        PhaseArg::Decode => p == Phase::Decode,
        PhaseArg::Action => p == Phase::Action,
    };
    let mut graphs = Vec::new();
    if wanted(Phase::Vision) {
        graphs.push(vision_graph(&model, &request));
    }
    if wanted(Phase::Prefill) {
        graphs.push(prefill_graph(&model, request.prefill_tokens(&model)));
    }
    if wanted(Phase::Decode) {
        graphs.push(decode_graph(&model, &request));
    }
    if wanted(Phase::Action) {
        graphs.push(action_graph(&model, &request));
    }
    let mut buf = Vec::new();
    write_ops_csv(&mut buf, &graphs.iter().collect::<Vec<_>>())?;
    emit(&args.out, stdout, &buf)
}

pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Catalog { format } => cmd_catalog(format, stdout),
        Command::Simulate(args) => {
            let cfg = RunConfig {
                hardware: resolve_hardware(&args.hw)?,
                model: resolve_model(&args.model)?,
                request: resolve_request(args.eval.request.as_deref())?,
                options: args.eval.options(),
                format: args.format,
                out: args.eval.out.clone(),
            };
            cmd_simulate(&cfg, stdout, stderr)
        }
        Command::Sweep(args) => cmd_sweep(&args, stdout, stderr),
        Command::DumpOps(args) => cmd_dump_ops(&args, stdout),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
