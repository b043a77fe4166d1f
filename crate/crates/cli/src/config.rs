//! Layered run configuration: built-in defaults, then the TOML file named by
//! `BONEFORGE_CONFIG` (or `--config`), then `BONEFORGE_<SECTION>__<KEY>`
//! environment variables, then `--set section.key=value` and dedicated flags.

use std::path::Path;

use boneforge::occupancy::OccupancyConfig;
use boneforge::optimizer::{ChildScale, LossWeights, Method, OptimConfig, RetargetScope};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

pub const CONFIG_ENV: &str = "BONEFORGE_CONFIG";
const ENV_PREFIX: &str = "BONEFORGE_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub occupancy: OccupancyConfig,
    pub synth: SynthSection,
    pub fit: FitSection,
    pub retarget: RetargetSection,
    pub eval: EvalSection,
    pub render: RenderSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            occupancy: OccupancyConfig::default(),
            synth: SynthSection::default(),
            fit: FitSection::default(),
            retarget: RetargetSection::default(),
            eval: EvalSection::default(),
            render: RenderSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub kind: String,
    pub frames: usize,
    pub noise: f64,
    pub amplitude_deg: f64,
    pub views: usize,
    pub image_size: u32,
    pub resolution: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            kind: "chain-3".into(),
            frames: 4,
            noise: 0.0,
            amplitude_deg: 30.0,
            views: 4,
            image_size: 64,
            resolution: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Optimizer settings; `max_steps` is the budget per depth.
    pub optim: OptimConfig,
    pub depths: usize,
    pub children: usize,
    pub roots: usize,
    pub child_scale: ChildScale,
    pub lloyd_iters: usize,
    pub surface_samples: usize,
    /// Views rendered from the mesh when no masks are given.
    pub views: usize,
    pub image_size: u32,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            optim: OptimConfig {
                max_steps: 20_000,
                convergence_tol: 0.0,
                ..OptimConfig::default()
            },
            depths: 1,
            children: 2,
            roots: 5,
            child_scale: ChildScale::HalfParent,
            lloyd_iters: 100,
            surface_samples: 4096,
            views: 4,
            image_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetSection {
    pub step_size: f64,
    pub method: Method,
    pub scope: RetargetScope,
    pub convergence_tol: f64,
    pub checkpoints: Vec<usize>,
    /// Surface samples on each side of the Chamfer objective.
    pub samples: usize,
    pub loss_weights: LossWeights,
}

impl Default for RetargetSection {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            method: Method::Gd,
            scope: RetargetScope::AllDepths,
            convergence_tol: 1e-9,
            checkpoints: vec![50, 100, 150, 200],
            samples: 4000,
            loss_weights: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub icp: bool,
    pub icp_max_iters: usize,
    pub estimate_scale: bool,
    pub samples: usize,
    /// Multiplier on reported Chamfer distances.
    pub report_factor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            icp: true,
            icp_max_iters: 50,
            estimate_scale: true,
            samples: 10_000,
            report_factor: boneforge::geometry::DEFAULT_REPORT_FACTOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub views: usize,
    pub image_size: u32,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self { views: 4, image_size: 64 }
    }
}

/// Parses a scalar as TOML (numbers, booleans, arrays), falling back to a string.
fn parse_value(raw: &str) -> Value {
    let probe = format!("v = {raw}");
    match probe.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets a dotted key, creating intermediate tables.
pub fn set_path(root: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("invalid config key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("config key {key:?} descends into a non-table value")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Builder collecting the layers in precedence order.
pub struct Layers {
    table: Table,
}

impl Layers {
    pub fn new() -> Self {
        Self { table: Table::new() }
    }

    pub fn file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let t: Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        merge(&mut self.table, t);
        Ok(())
    }

    /// `BONEFORGE_FIT__OPTIM__STEP_SIZE=0.1` sets `fit.optim.step_size`.
    pub fn env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), CliError> {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != CONFIG_ENV && k != "BONEFORGE_LOG")
            .collect();
        pairs.sort();
        for (k, v) in pairs {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            set_path(&mut self.table, &key, parse_value(&v))?;
        }
        Ok(())
    }

    pub fn assignment(&mut self, kv: &str) -> Result<(), CliError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {kv:?}")))?;
        set_path(&mut self.table, k.trim(), parse_value(v.trim()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> Result<(), CliError> {
        set_path(&mut self.table, key, value.into())
    }

    pub fn build(self) -> Result<Config, CliError> {
        Value::Table(self.table)
            .try_into::<Config>()
            .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }
}

impl Default for Layers {
    fn default() -> Self {
        Self::new()
    }
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
