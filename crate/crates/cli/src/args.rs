//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Layers;
use crate::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "boneforge",
    version,
    about = "Hierarchical ellipsoid bone rigs: synthesis, fitting, retargeting, evaluation and export",
    after_help = "Configuration precedence: built-in defaults < TOML file (--config or BONEFORGE_CONFIG) \
                  < BONEFORGE_<SECTION>__<KEY> environment variables < --set key=value < dedicated flags.\n\
                  Exit codes: 0 success, 1 usage/configuration, 2 data or I/O error, 3 numerical failure.\n\
                  Log level: BONEFORGE_LOG (error, warn, info, debug, trace)."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct Global {
    /// Output directory; created if missing
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
    /// Seed for every random choice in the run
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// TOML configuration file; overrides BONEFORGE_CONFIG
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set fit.optim.step_size=0.05 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Occupancy margin γ added to the Mahalanobis distance
    #[arg(long, global = true, value_name = "X")]
    pub gamma: Option<f64>,
    /// Occupancy temperature τ
    #[arg(long, global = true, value_name = "X")]
    pub tau: Option<f64>,
    /// Overlap ceiling λ on summed bone densities
    #[arg(long, global = true, value_name = "X")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic articulated scenario with ground-truth rig, meshes and masks
    Synth(SynthArgs),
    /// Fit a rig to a mesh (and optional silhouettes), growing it coarse to fine
    Fit(FitArgs),
    /// Optimize a pose so the skinned canonical mesh matches a target mesh
    Retarget(RetargetArgs),
    /// Chamfer distance and F-score of a mesh against a reference after ICP alignment
    Eval(EvalArgs),
    /// Export deformed meshes for every pose of a rig
    Animate(AnimateArgs),
    /// Render bone-occupancy silhouettes of a posed rig
    RenderMask(RenderMaskArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario: chain-K, quadruped or dumbbell
    #[arg(long, value_name = "KIND")]
    pub scenario: Option<String>,
    /// Number of frames; frame 0 is the rest pose
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
    /// Largest joint rotation in degrees
    #[arg(long, value_name = "DEG")]
    pub amplitude: Option<f64>,
    /// Standard deviation of vertex jitter
    #[arg(long, value_name = "X")]
    pub noise: Option<f64>,
    /// Number of mask views
    #[arg(long, value_name = "N")]
    pub views: Option<usize>,
    /// Mask width and height in pixels
    #[arg(long, value_name = "PX")]
    pub image_size: Option<u32>,
    /// Vertices around each capsule
    #[arg(long, value_name = "N")]
    pub resolution: Option<usize>,
    /// Skip mask rendering
    #[arg(long)]
    pub no_masks: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Mesh to fit (OBJ or PLY)
    #[arg(long, value_name = "FILE")]
    pub mesh: PathBuf,
    /// Initial rig; without it roots are initialized by k-means
    #[arg(long, value_name = "FILE")]
    pub rig: Option<PathBuf>,
    /// Number of root bones when no rig is given
    #[arg(long, value_name = "N")]
    pub roots: Option<usize>,
    /// Levels to fit, growing children between them
    #[arg(long, value_name = "N")]
    pub depths: Option<usize>,
    /// Children spawned under each leaf when growing
    #[arg(long, value_name = "K")]
    pub children: Option<usize>,
    /// Optimization steps per depth
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// Directory with cameras.json and view_VV.bfmk silhouettes; rendered from the mesh when absent
    #[arg(long, value_name = "DIR")]
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetargetArgs {
    /// Rig file
    #[arg(long, value_name = "FILE")]
    pub rig: PathBuf,
    /// Canonical mesh skinned to the rig
    #[arg(long, value_name = "FILE")]
    pub mesh: PathBuf,
    /// Target mesh
    #[arg(long, value_name = "FILE")]
    pub target: PathBuf,
    /// Rig file whose first pose starts the optimization (default: canonical pose)
    #[arg(long, value_name = "FILE")]
    pub pose: Option<PathBuf>,
    /// Checkpoint steps; the largest is the step budget
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    /// Perturb the initial pose by this many degrees per bone before optimizing
    #[arg(long, value_name = "DEG")]
    pub perturb: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mesh
    #[arg(long, value_name = "FILE")]
    pub mesh: PathBuf,
    /// Reference mesh
    #[arg(long, value_name = "FILE")]
    pub target: PathBuf,
    /// Skip ICP pre-alignment
    #[arg(long)]
    pub no_icp: bool,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    /// Rig file; its poses are exported unless --pose is given
    #[arg(long, value_name = "FILE")]
    pub rig: PathBuf,
    /// Canonical mesh skinned to the rig
    #[arg(long, value_name = "FILE")]
    pub mesh: PathBuf,
    /// Rig file whose poses are exported instead
    #[arg(long, value_name = "FILE")]
    pub pose: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderMaskArgs {
    /// Rig file
    #[arg(long, value_name = "FILE")]
    pub rig: PathBuf,
    /// Rig file whose first pose is rendered (default: the rig's first pose, else canonical)
    #[arg(long, value_name = "FILE")]
    pub pose: Option<PathBuf>,
    /// cameras.json to render from; orbit cameras framing the rig otherwise
    #[arg(long, value_name = "FILE")]
    pub cameras: Option<PathBuf>,
    /// Number of orbit views
    #[arg(long, value_name = "N")]
    pub views: Option<usize>,
    /// Mask width and height in pixels
    #[arg(long, value_name = "PX")]
    pub image_size: Option<u32>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Fit(_) => "fit",
            Command::Retarget(_) => "retarget",
            Command::Eval(_) => "eval",
            Command::Animate(_) => "animate",
            Command::RenderMask(_) => "render-mask",
        }
    }

    /// Writes subcommand flags into the top configuration layer.
    pub fn apply_flags(&self, l: &mut Layers) -> CliResult<()> {
        match self {
            Command::Synth(a) => {
                if let Some(v) = &a.scenario {
                    l.set("synth.kind", v.as_str())?;
                }
                if let Some(v) = a.frames {
                    l.set("synth.frames", v as i64)?;
                }
                if let Some(v) = a.amplitude {
                    l.set("synth.amplitude_deg", v)?;
                }
                if let Some(v) = a.noise {
                    l.set("synth.noise", v)?;
                }
                if let Some(v) = a.views {
                    l.set("synth.views", v as i64)?;
                }
                if let Some(v) = a.image_size {
                    l.set("synth.image_size", v as i64)?;
                }
                if let Some(v) = a.resolution {
                    l.set("synth.resolution", v as i64)?;
                }
            }
            Command::Fit(a) => {
                if let Some(v) = a.roots {
                    l.set("fit.roots", v as i64)?;
                }
                if let Some(v) = a.depths {
                    l.set("fit.depths", v as i64)?;
                }
                if let Some(v) = a.children {
                    l.set("fit.children", v as i64)?;
                }
                if let Some(v) = a.steps {
                    l.set("fit.optim.max_steps", v as i64)?;
                }
            }
            Command::Retarget(a) => {
                if let Some(v) = &a.steps {
                    l.set(
                        "retarget.checkpoints",
                        toml::Value::Array(v.iter().map(|s| toml::Value::Integer(*s as i64)).collect()),
                    )?;
                }
            }
            Command::Eval(a) => {
                if a.no_icp {
                    l.set("eval.icp", false)?;
                }
            }
            Command::Animate(_) => {}
            Command::RenderMask(a) => {
                if let Some(v) = a.views {
                    l.set("render.views", v as i64)?;
                }
                if let Some(v) = a.image_size {
                    l.set("render.image_size", v as i64)?;
                }
            }
        }
        Ok(())
    }
}
