//! Subcommand bodies. Each returns the files it wrote, relative to the output directory.

use std::path::{Path, PathBuf};

use boneforge::geometry::{
    evaluate, load_mesh, rasterize_silhouette, sample_surface, save_mesh, Aabb, IcpConfig, TriMesh,
};
use boneforge::optimizer::{
    coarse_to_fine, init_roots, retarget, DepthSummary, GrowConfig, OptimConfig, RetargetConfig, RetargetStep,
    StopReason,
};
use boneforge::synth::{framing_cameras, make_scenario, perturb_pose, ScenarioKind, SynthScenario};
use boneforge::{
    leaf_ellipsoids, load_rig, orbit_cameras, render_bone_mask, save_rig, Camera, CameraRecord, MaskImage, Pose, Rig,
    SkinnedSurface,
};
use serde::Serialize;

use crate::args::{AnimateArgs, Command, EvalArgs, FitArgs, RenderMaskArgs, RetargetArgs, SynthArgs};
use crate::config::Config;
use crate::{CliError, CliResult};

pub const CAMERAS_FILE: &str = "cameras.json";

pub fn dispatch(cmd: &Command, cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    match cmd {
        Command::Synth(a) => synth(a, cfg, out),
        Command::Fit(a) => fit(a, cfg, out),
        Command::Retarget(a) => retarget_cmd(a, cfg, out),
        Command::Eval(a) => eval(a, cfg, out),
        Command::Animate(a) => animate(a, cfg, out),
        Command::RenderMask(a) => render_mask(a, cfg, out),
    }
}

struct Writer<'a> {
    out: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(out: &'a Path) -> Self {
        Self { out, written: Vec::new() }
    }

    fn path(&mut self, rel: impl Into<PathBuf>) -> CliResult<PathBuf> {
        let rel = rel.into();
        let full = self.out.join(&rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.written.push(rel);
        Ok(full)
    }

    fn json(&mut self, rel: impl Into<PathBuf>, value: &impl Serialize) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        std::fs::write(self.path(rel)?, s)?;
        Ok(())
    }

    fn mesh(&mut self, rel: impl Into<PathBuf>, mesh: &TriMesh) -> CliResult<()> {
        save_mesh(self.path(rel)?, mesh)?;
        Ok(())
    }

    fn rig(&mut self, rel: impl Into<PathBuf>, rig: &Rig, poses: &[Pose]) -> CliResult<()> {
        save_rig(self.path(rel)?, rig, poses)?;
        Ok(())
    }

    /// `cameras.json` plus `view_VV.png` and `view_VV.bfmk` per mask under `dir`.
    fn masks(&mut self, dir: &Path, masks: &[MaskImage]) -> CliResult<()> {
        let cams: Vec<CameraRecord> = masks.iter().map(|m| m.camera.to_record()).collect();
        self.json(dir.join(CAMERAS_FILE), &cams)?;
        for (v, m) in masks.iter().enumerate() {
            m.save_png(self.path(dir.join(format!("view_{v:02}.png")))?)?;
            m.save_bfmk(self.path(dir.join(format!("view_{v:02}.bfmk")))?)?;
        }
        Ok(())
    }

    fn finish(self) -> Vec<PathBuf> {
        self.written
    }
}

fn read_mesh(path: &Path) -> CliResult<TriMesh> {
    load_mesh(path).map_err(|e| CliError::from(e).at(path))
}

fn read_rig(path: &Path) -> CliResult<(Rig, Vec<Pose>)> {
    load_rig(path).map_err(|e| CliError::from(e).at(path))
}

fn load_cameras(path: &Path) -> CliResult<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let recs: Vec<CameraRecord> = serde_json::from_str(&text).map_err(|e| CliError::from(e).at(path))?;
    recs.iter().map(|r| Camera::from_record(r).map_err(|e| CliError::from(e).at(path))).collect()
}

/// Reads a mask directory written by `synth` or `render-mask`.
pub fn load_mask_dir(dir: &Path) -> CliResult<Vec<MaskImage>> {
    let cameras = load_cameras(&dir.join(CAMERAS_FILE))?;
    cameras
        .into_iter()
        .enumerate()
        .map(|(v, cam)| {
            let p = dir.join(format!("view_{v:02}.bfmk"));
            MaskImage::load_bfmk(&p, cam).map_err(|e| CliError::from(e).at(&p))
        })
        .collect()
}

/// First pose of a rig file, aligned to `rig`'s bones.
fn pose_from_file(path: &Path, rig: &Rig) -> CliResult<Pose> {
    let (_, poses) = read_rig(path)?;
    let pose = poses
        .into_iter()
        .next()
        .ok_or_else(|| CliError::Data(format!("{} contains no pose", path.display())))?;
    pose.check_covers(rig)?;
    Ok(pose)
}

fn synth(a: &SynthArgs, cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    let s = &cfg.synth;
    let kind: ScenarioKind = s.kind.parse().map_err(|e: boneforge::Error| CliError::Usage(e.to_string()))?;
    let spec = SynthScenario {
        kind,
        n_frames: s.frames,
        seed: cfg.seed,
        noise: (s.noise > 0.0).then_some(s.noise),
        amplitude: s.amplitude_deg.to_radians(),
        views: s.views,
        image_size: s.image_size,
        resolution: s.resolution,
        skip_masks: a.no_masks,
    };
    let data = make_scenario(&spec)?;
    let mut w = Writer::new(out);
    w.rig("rig.json", &data.rig, &data.poses)?;
    w.mesh("canonical.ply", &data.canonical)?;
    for (f, m) in data.frames.iter().enumerate() {
        w.mesh(format!("frames/frame_{f:04}.ply"), m)?;
    }
    let cams: Vec<CameraRecord> = data.cameras.iter().map(Camera::to_record).collect();
    w.json(CAMERAS_FILE, &cams)?;
    for (f, masks) in data.masks.iter().enumerate() {
        if !masks.is_empty() {
            w.masks(&Path::new("masks").join(format!("frame_{f:04}")), masks)?;
        }
    }
    Ok(w.finish())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    leaves: usize,
    bones: usize,
    max_depth: usize,
    depths: &'a [DepthSummary],
}

fn fit(a: &FitArgs, cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    let f = &cfg.fit;
    let mesh = read_mesh(&a.mesh)?;
    let surface = sample_surface(&mesh, f.surface_samples, cfg.seed)?.points;
    let rig = match &a.rig {
        Some(p) => read_rig(p)?.0,
        None => init_roots(&surface, f.roots, cfg.seed)?,
    };
    let masks = match &a.masks {
        Some(dir) => load_mask_dir(dir)?,
        None => framing_cameras(&mesh, f.views, f.image_size)?
            .into_iter()
            .map(|cam| MaskImage::new(cam, rasterize_silhouette(&mesh, &cam)))
            .collect::<Result<_, _>>()?,
    };
    let data = boneforge::optimizer::FitData { surface, masks };
    let optim = OptimConfig { seed: cfg.seed, ..f.optim.clone() };
    optim.validate()?;
    let grow = GrowConfig {
        children: f.children,
        seed: cfg.seed,
        child_scale: f.child_scale,
        lloyd_iters: f.lloyd_iters,
    };
    let result = coarse_to_fine(&rig, &mesh, &data, f.depths, &optim, &cfg.occupancy, &grow)?;
    let mut w = Writer::new(out);
    w.rig("rig.json", &result.rig, &[result.pose.clone()])?;
    w.json(
        "fit.json",
        &FitSummary {
            leaves: result.rig.leaf_bones().len(),
            bones: result.rig.len(),
            max_depth: result.rig.max_depth(),
            depths: &result.depths,
        },
    )?;
    Ok(w.finish())
}

#[derive(Serialize)]
struct RetargetSummary<'a> {
    checkpoints: &'a [RetargetStep],
    initial_cd: f64,
    final_cd: f64,
    steps: usize,
    stop: StopReason,
    samples: usize,
}

fn retarget_cmd(a: &RetargetArgs, cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    let r = &cfg.retarget;
    let budget = *r
        .checkpoints
        .iter()
        .max()
        .ok_or_else(|| CliError::Usage("at least one checkpoint step is required".into()))?;
    let (rig, _) = read_rig(&a.rig)?;
    let canonical = read_mesh(&a.mesh)?;
    let target_mesh = read_mesh(&a.target)?;
    let mut pose = match &a.pose {
        Some(p) => pose_from_file(p, &rig)?,
        None => rig.canonical_pose(),
    };
    if let Some(deg) = a.perturb {
        pose = perturb_pose(&rig, &pose, deg.to_radians(), cfg.seed)?;
    }
    let skinned = SkinnedSurface::from_points(sample_surface(&canonical, r.samples, cfg.seed)?.points, &rig, None)?;
    let target = sample_surface(&target_mesh, r.samples, cfg.seed.wrapping_add(1))?;
    let rc = RetargetConfig {
        optim: OptimConfig {
            step_size: r.step_size,
            max_steps: budget,
            method: r.method,
            loss_weights: r.loss_weights.clone(),
            convergence_tol: r.convergence_tol,
            seed: cfg.seed,
            ..OptimConfig::default()
        },
        scope: r.scope,
        checkpoints: r.checkpoints.clone(),
    };
    rc.optim.validate()?;
    let report = retarget(&rig, &skinned, &pose, &target, &rc)?;
    let mut w = Writer::new(out);
    let mut lines = String::new();
    for s in &report.steps {
        lines.push_str(&serde_json::to_string(s)?);
        lines.push('\n');
    }
    std::fs::write(w.path("report.jsonl")?, lines)?;
    w.json(
        "checkpoints.json",
        &RetargetSummary {
            checkpoints: &report.checkpoints,
            initial_cd: report.steps[0].cd,
            final_cd: report.final_cd(),
            steps: report.steps.last().map_or(0, |s| s.step),
            stop: report.stop,
            samples: r.samples,
        },
    )?;
    w.rig("pose.json", &rig, &[report.final_pose.clone()])?;
    let mesh_skin = SkinnedSurface::new(&canonical, &rig, None)?;
    w.mesh("retargeted.ply", &mesh_skin.to_mesh(mesh_skin.deform(&rig, &report.final_pose)?))?;
    Ok(w.finish())
}

#[derive(Serialize)]
struct EvalRecord {
    cd: f64,
    f2: f64,
    threshold: f64,
    n_src: usize,
    n_dst: usize,
    icp: bool,
    report_factor: f64,
}

fn eval(a: &EvalArgs, cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    let e = &cfg.eval;
    let pred = sample_surface(&read_mesh(&a.mesh)?, e.samples, cfg.seed)?;
    let gt = sample_surface(&read_mesh(&a.target)?, e.samples, cfg.seed)?;
    let icp = IcpConfig {
        max_iters: e.icp_max_iters,
        estimate_scale: e.estimate_scale,
        ..IcpConfig::default()
    };
    let m = evaluate(&pred, &gt, e.icp.then_some(&icp), e.report_factor)?;
    let mut w = Writer::new(out);
    w.json(
        "metrics.json",
        &EvalRecord {
            cd: m.cd,
            f2: m.f2,
            threshold: m.threshold,
            n_src: m.n_src,
            n_dst: m.n_dst,
            icp: e.icp,
            report_factor: e.report_factor,
        },
    )?;
    Ok(w.finish())
}

fn animate(a: &AnimateArgs, _cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (rig, own) = read_rig(&a.rig)?;
    let poses = match &a.pose {
        Some(p) => read_rig(p)?.1,
        None => own,
    };
    let poses = if poses.is_empty() { vec![rig.canonical_pose()] } else { poses };
    let canonical = read_mesh(&a.mesh)?;
    let skinned = SkinnedSurface::new(&canonical, &rig, None)?;
    let mut w = Writer::new(out);
    for (i, pose) in poses.iter().enumerate() {
        pose.check_covers(&rig)?;
        w.mesh(format!("frames/frame_{i:04}.ply"), &skinned.to_mesh(skinned.deform(&rig, pose)?))?;
    }
    Ok(w.finish())
}

fn render_mask(a: &RenderMaskArgs, cfg: &Config, out: &Path) -> CliResult<Vec<PathBuf>> {
    let (rig, own) = read_rig(&a.rig)?;
    let pose = match &a.pose {
        Some(p) => pose_from_file(p, &rig)?,
        None => own.into_iter().next().unwrap_or_else(|| rig.canonical_pose()),
    };
    pose.check_covers(&rig)?;
    let cameras = match &a.cameras {
        Some(p) => load_cameras(p)?,
        None => {
            let mut b = Aabb::empty();
            for (_, e) in leaf_ellipsoids(&rig, &pose)? {
                let r = e.bounding_radius(1.0);
                b.include(&(e.center - boneforge::Vec3::repeat(r)));
                b.include(&(e.center + boneforge::Vec3::repeat(r)));
            }
            let fov: f64 = 0.8;
            let distance = 1.15 * 0.5 * b.diagonal() / (fov / 2.0).tan();
            orbit_cameras(b.center(), distance, 0.35, cfg.render.views, fov, cfg.render.image_size)?
        }
    };
    let masks = cameras
        .iter()
        .map(|c| render_bone_mask(&rig, &pose, c, &cfg.occupancy, cfg.occupancy.samples_per_ray))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = Writer::new(out);
    w.masks(Path::new("masks"), &masks)?;
    Ok(w.finish())
}
