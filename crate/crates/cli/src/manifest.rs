//! Reproducibility manifest written next to every run's outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: Config,
    pub outputs: Vec<OutputRecord>,
    /// Seconds since the Unix epoch; varies between runs.
    pub timestamp: u64,
    /// Varies between runs.
    pub wall_time_s: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(
        subcommand: &str,
        argv: Vec<String>,
        cfg: &Config,
        out: &Path,
        mut outputs: Vec<PathBuf>,
        wall_time_s: f64,
    ) -> CliResult<Manifest> {
        outputs.sort();
        let mut records = Vec::with_capacity(outputs.len());
        for rel in outputs {
            let data = std::fs::read(out.join(&rel))?;
            records.push(OutputRecord {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                bytes: data.len() as u64,
                sha256: hex(&Sha256::digest(&data)),
            });
        }
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            argv,
            seed: cfg.seed,
            config: cfg.clone(),
            outputs: records,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_time_s,
        })
    }

    pub fn write(&self, out: &Path) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(out.join(MANIFEST_FILE), s)?;
        Ok(())
    }

    /// The manifest with its run-dependent fields cleared.
    pub fn without_timing(&self) -> Manifest {
        Manifest { timestamp: 0, wall_time_s: 0.0, ..self.clone() }
    }
}
