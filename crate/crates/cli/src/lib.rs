//! `boneforge` command-line driver.
//!
//! Every subcommand writes its artifacts plus a `manifest.json` into `--out`.
//! Exit codes: 0 success, 1 usage or configuration, 2 data or I/O, 3 numerical
//! failure.

pub mod args;
mod commands;
pub mod config;
mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Global};
use config::{Config, Layers, CONFIG_ENV};
pub use commands::{load_mask_dir, CAMERAS_FILE};
pub use manifest::{Manifest, OutputRecord, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl CliError {
    /// Prefixes the message with the file it concerns.
    pub fn at(self, path: &std::path::Path) -> Self {
        let p = path.display();
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{p}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{p}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<boneforge::Error> for CliError {
    fn from(e: boneforge::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if matches!(e, boneforge::Error::Config(_)) {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("BONEFORGE_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("boneforge: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the layered configuration for a parsed invocation.
pub fn resolve_config(cli: &Cli) -> CliResult<Config> {
    let mut layers = Layers::new();
    let file = cli
        .global
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    if let Some(path) = file {
        layers.file(&path)?;
    }
    layers.env(std::env::vars())?;
    for kv in &cli.global.set {
        layers.assignment(kv)?;
    }
    global_flags(&cli.global, &mut layers)?;
    cli.command.apply_flags(&mut layers)?;
    let cfg = layers.build()?;
    cfg.occupancy.validate()?;
    Ok(cfg)
}

fn global_flags(g: &Global, layers: &mut Layers) -> CliResult<()> {
    if let Some(s) = g.seed {
        layers.set("seed", s as i64)?;
    }
    if let Some(t) = g.threads {
        layers.set("threads", t as i64)?;
    }
    if let Some(v) = g.gamma {
        layers.set("occupancy.gamma", v)?;
    }
    if let Some(v) = g.tau {
        layers.set("occupancy.tau", v)?;
    }
    if let Some(v) = g.lambda {
        layers.set("occupancy.lambda_max", v)?;
    }
    Ok(())
}

fn execute(cli: &Cli, argv: &[OsString]) -> CliResult<()> {
    let start = Instant::now();
    let cfg = resolve_config(cli)?;
    let out = cli.global.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let outputs = pool.install(|| commands::dispatch(&cli.command, &cfg, &out))?;
    let manifest = Manifest::new(
        cli.command.name(),
        argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        &cfg,
        &out,
        outputs,
        start.elapsed().as_secs_f64(),
    )?;
    manifest.write(&out)?;
    log::info!("{} finished in {:.2}s", cli.command.name(), manifest.wall_time_s);
    Ok(())
}
