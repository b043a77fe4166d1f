//! Procedural ground truth: articulated capsule figures with known rigs, poses,
//! per-frame meshes and rendered bone masks.
//!
//! Frame 0 is always the rest pose. Every bone has a pivot and a kinematic
//! parent, which may differ from its rig parent: a `chain-k` rig is flat (k
//! roots) while its joints still articulate as a chain.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_cameras, Camera};
use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::mask::MaskImage;
use crate::occupancy::{render_bone_mask, OccupancyConfig};
use crate::rig::{BoneId, Frame, Pose, Rig};
use crate::skinning::SkinnedSurface;
use crate::transform::{exp_so3, Mat3, RigidTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScenarioKind {
    Chain(u32),
    Quadruped,
    Dumbbell,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioKind::Chain(k) => write!(f, "chain-{k}"),
            ScenarioKind::Quadruped => f.write_str("quadruped"),
            ScenarioKind::Dumbbell => f.write_str("dumbbell"),
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadruped" => Ok(ScenarioKind::Quadruped),
            "dumbbell" => Ok(ScenarioKind::Dumbbell),
            _ => match s.strip_prefix("chain-").map(str::parse::<u32>) {
                Some(Ok(k)) if k >= 1 => Ok(ScenarioKind::Chain(k)),
                _ => Err(Error::Config(format!(
                    "unknown scenario kind {s:?} (expected chain-<k>, quadruped or dumbbell)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for ScenarioKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScenarioKind> for String {
    fn from(k: ScenarioKind) -> String {
        k.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub kind: ScenarioKind,
    pub n_frames: usize,
    pub seed: u64,
    /// Standard deviation of Gaussian jitter added to per-frame mesh vertices.
    pub noise: Option<f64>,
    /// Largest joint rotation in radians for frames after the first.
    pub amplitude: f64,
    pub views: usize,
    pub image_size: u32,
    /// Vertices around each capsule.
    pub resolution: usize,
    /// Skip mask rendering.
    pub skip_masks: bool,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Chain(3),
            n_frames: 4,
            seed: 0,
            noise: None,
            amplitude: 30f64.to_radians(),
            views: 4,
            image_size: 64,
            resolution: 12,
            skip_masks: false,
        }
    }
}

impl SynthScenario {
    pub fn new(kind: ScenarioKind, n_frames: usize, seed: u64) -> Self {
        Self { kind, n_frames, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 1 {
            return Err(Error::Config("n_frames must be at least 1".into()));
        }
        if self.resolution < 3 {
            return Err(Error::Config("resolution must be at least 3".into()));
        }
        if !(self.amplitude >= 0.0) || matches!(self.noise, Some(s) if !(s >= 0.0)) {
            return Err(Error::Config("amplitude and noise must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything generated for one scenario.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub scenario: SynthScenario,
    pub rig: Rig,
    /// One pose per frame, frame 0 at rest.
    pub poses: Vec<Pose>,
    pub canonical: TriMesh,
    pub frames: Vec<TriMesh>,
    pub cameras: Vec<Camera>,
    /// `masks[frame][view]`.
    pub masks: Vec<Vec<MaskImage>>,
    pub joints: Vec<Joint>,
}

/// Articulation of one bone: it turns about `pivot` (rest-pose world
/// coordinates) relative to its kinematic parent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Joint {
    pub bone: BoneId,
    pub kinematic_parent: Option<BoneId>,
    pub pivot: Vec3,
    /// Multiplier on the scenario amplitude.
    pub mobility: f64,
}

struct Part {
    rig_parent: Option<usize>,
    kin_parent: Option<usize>,
    pivot: Vec3,
    a: Vec3,
    b: Vec3,
    radius: f64,
    /// Leaves carry a capsule in the mesh.
    leaf: bool,
    mobility: f64,
}

impl Part {
    fn world(&self) -> RigidTransform {
        RigidTransform::new(frame_along(self.b - self.a), (self.a + self.b) * 0.5)
    }

    fn scale(&self) -> Vec3 {
        let along = 0.6 * (self.b - self.a).norm() + if (self.b - self.a).norm() == 0.0 { 1.25 * self.radius } else { 0.0 };
        Vec3::new(along, 1.3 * self.radius, 1.3 * self.radius)
    }
}

/// Rotation whose first column points along `d` (x when `d` is zero).
fn frame_along(d: Vec3) -> Mat3 {
    let x = d.try_normalize(1e-12).unwrap_or_else(Vec3::x);
    let helper = if x.y.abs() < 0.9 { Vec3::y() } else { Vec3::z() };
    let z = x.cross(&helper).normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

fn part(rig_parent: Option<usize>, kin_parent: Option<usize>, pivot: Vec3, a: Vec3, b: Vec3, radius: f64, leaf: bool, mobility: f64) -> Part {
    Part { rig_parent, kin_parent, pivot, a, b, radius, leaf, mobility }
}

fn parts(kind: ScenarioKind) -> Vec<Part> {
    let v = Vec3::new;
    match kind {
        ScenarioKind::Chain(k) => (0..k as usize)
            .map(|i| {
                let a = v(i as f64, 0.0, 0.0);
                part(None, i.checked_sub(1), a, a, v(i as f64 + 1.0, 0.0, 0.0), 0.2, true, 1.0)
            })
            .collect(),
        ScenarioKind::Dumbbell => vec![
            part(None, None, v(0.0, 0.0, 0.0), v(-0.7, 0.0, 0.0), v(-0.7, 0.0, 0.0), 0.45, true, 0.3),
            part(None, Some(0), v(0.0, 0.0, 0.0), v(0.7, 0.0, 0.0), v(0.7, 0.0, 0.0), 0.45, true, 1.0),
        ],
        ScenarioKind::Quadruped => {
            let mut p = Vec::new();
            // Torso root and its two halves.
            p.push(part(None, None, v(0.0, 1.0, 0.0), v(-1.0, 1.0, 0.0), v(1.0, 1.0, 0.0), 0.3, false, 0.2));
            p.push(part(Some(0), Some(0), v(0.0, 1.0, 0.0), v(-1.0, 1.0, 0.0), v(0.0, 1.0, 0.0), 0.3, true, 0.0));
            p.push(part(Some(0), Some(0), v(0.0, 1.0, 0.0), v(0.0, 1.0, 0.0), v(1.0, 1.0, 0.0), 0.3, true, 0.0));
            for (x, z) in [(0.75, 0.2), (0.75, -0.2), (-0.75, 0.2), (-0.75, -0.2)] {
                let hip = v(x, 0.9, z);
                let knee = v(x, 0.45, z);
                let foot = v(x, 0.0, z);
                let root = p.len();
                p.push(part(None, Some(0), hip, hip, foot, 0.1, false, 1.0));
                p.push(part(Some(root), Some(root), hip, hip, knee, 0.1, true, 0.0));
                p.push(part(Some(root), Some(root + 1), knee, knee, foot, 0.1, true, 1.0));
            }
            let base = v(1.0, 1.05, 0.0);
            let mid = v(1.35, 1.4, 0.0);
            let tip = v(1.75, 1.45, 0.0);
            let root = p.len();
            p.push(part(None, Some(0), base, base, tip, 0.13, false, 0.7));
            p.push(part(Some(root), Some(root), base, base, mid, 0.12, true, 0.0));
            p.push(part(Some(root), Some(root + 1), mid, mid, tip, 0.15, true, 0.7));
            p
        }
    }
}

/// Triangulated capsule around segment `a`–`b`; a sphere when they coincide.
pub fn capsule(a: Vec3, b: Vec3, radius: f64, resolution: usize) -> TriMesh {
    let frame = frame_along(b - a);
    let (ax, u, w) = (frame.column(0).into_owned(), frame.column(1).into_owned(), frame.column(2).into_owned());
    let len = (b - a).norm();
    let rings = (resolution / 4).max(2);
    let rows = if len > 0.0 { (resolution / 2).max(1) } else { 0 };
    let mut vertices = vec![a - ax * radius];
    // (center along the axis, ring radius) for each ring from the `a` pole to the `b` pole.
    let mut profile = Vec::new();
    for j in 1..=rings {
        let phi = PI / 2.0 * j as f64 / rings as f64;
        profile.push((-radius * phi.cos(), radius * phi.sin()));
    }
    for j in 1..rows {
        profile.push((len * j as f64 / rows as f64, radius));
    }
    let top_ring = if len > 0.0 { rings } else { rings - 1 };
    for j in (0..=top_ring).rev() {
        let phi = PI / 2.0 * j as f64 / rings as f64;
        profile.push((len + radius * phi.cos(), radius * phi.sin()));
    }
    // The last hemisphere entry at phi = 0 is the `b` pole.
    let pole_b = profile.pop().unwrap();
    for (along, r) in &profile {
        for s in 0..resolution {
            let t = 2.0 * PI * s as f64 / resolution as f64;
            vertices.push(a + ax * *along + (u * t.cos() + w * t.sin()) * *r);
        }
    }
    vertices.push(a + ax * pole_b.0);
    let n = resolution as u32;
    let last = vertices.len() as u32 - 1;
    let mut triangles = Vec::new();
    for s in 0..n {
        triangles.push([0, 1 + (s + 1) % n, 1 + s]);
    }
    for r in 0..profile.len() as u32 - 1 {
        let (r0, r1) = (1 + r * n, 1 + (r + 1) * n);
        for s in 0..n {
            let s1 = (s + 1) % n;
            triangles.push([r0 + s, r0 + s1, r1 + s1]);
            triangles.push([r0 + s, r1 + s1, r1 + s]);
        }
    }
    let top = 1 + (profile.len() as u32 - 1) * n;
    for s in 0..n {
        triangles.push([last, top + s, top + (s + 1) % n]);
    }
    TriMesh { vertices, triangles, colors: None }
}

/// Rotates about `pivot`: `x ↦ pivot + R (x − pivot)`.
fn about(pivot: Vec3, rotation: Mat3) -> RigidTransform {
    RigidTransform::new(rotation, pivot - rotation * pivot)
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        if let Some(u) = v.try_normalize(1e-9) {
            return u;
        }
    }
}

/// Pose of `rig` produced by per-bone joint rotations `angles` (axis-angle, indexed like the bones).
pub fn articulate(rig: &Rig, joints: &[Joint], angles: &[Vec3], frame: Frame) -> Result<Pose> {
    let canonical = rig.canonical_world();
    let mut motion: Vec<RigidTransform> = Vec::with_capacity(joints.len());
    let index = |id: BoneId| joints.iter().position(|j| j.bone == id);
    for (k, j) in joints.iter().enumerate() {
        let parent = match j.kinematic_parent {
            Some(p) => motion[index(p).filter(|i| *i < k).ok_or(Error::UnknownBone(p))?],
            None => RigidTransform::identity(),
        };
        motion.push(parent * about(j.pivot, exp_so3(&angles[k])));
    }
    let world: Vec<RigidTransform> = joints.iter().zip(&motion).map(|(j, m)| *m * canonical[&j.bone]).collect();
    let mut locals = std::collections::BTreeMap::new();
    for (k, j) in joints.iter().enumerate() {
        let local = match rig.bone(j.bone)?.parent {
            None => world[k],
            Some(p) => world[index(p).ok_or(Error::UnknownBone(p))?].inverse() * world[k],
        };
        locals.insert(j.bone, local);
    }
    Ok(Pose::new(frame, locals))
}

/// Ground-truth rig, rest mesh and joints for `kind`.
pub fn scenario_rig(kind: ScenarioKind, resolution: usize) -> Result<(Rig, TriMesh, Vec<Joint>)> {
    let ps = parts(kind);
    let worlds: Vec<RigidTransform> = ps.iter().map(Part::world).collect();
    let specs = ps
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let local = match p.rig_parent {
                None => worlds[i],
                Some(q) => worlds[q].inverse() * worlds[i],
            };
            (BoneId(i as u32), p.rig_parent.map(|q| BoneId(q as u32)), local, p.scale())
        })
        .collect();
    let rig = Rig::from_specs(specs, None)?;
    let mesh = TriMesh::merge(
        &ps.iter()
            .filter(|p| p.leaf)
            .map(|p| capsule(p.a, p.b, p.radius, resolution))
            .collect::<Vec<_>>(),
    );
    let joints = ps
        .iter()
        .enumerate()
        .map(|(i, p)| Joint {
            bone: BoneId(i as u32),
            kinematic_parent: p.kin_parent.map(|q| BoneId(q as u32)),
            pivot: p.pivot,
            mobility: p.mobility,
        })
        .collect();
    Ok((rig, mesh, joints))
}

/// Orbit cameras framing `mesh`.
pub fn framing_cameras(mesh: &TriMesh, views: usize, size: u32) -> Result<Vec<Camera>> {
    let b = mesh.bounds();
    let fov: f64 = 0.8;
    let distance = 1.15 * 0.5 * b.diagonal() / (fov / 2.0).tan();
    orbit_cameras(b.center(), distance, 0.35, views, fov, size)
}

pub fn make_scenario(spec: &SynthScenario) -> Result<SynthData> {
    spec.validate()?;
    let (rig, canonical, joints) = scenario_rig(spec.kind, spec.resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut poses = vec![rig.canonical_pose().with_frame(Frame::Index(0))];
    for f in 1..spec.n_frames {
        let angles: Vec<Vec3> = joints
            .iter()
            .map(|j| {
                let axis = random_axis(&mut rng);
                let mag: f64 = rng.random_range(-1.0..=1.0);
                axis * (mag * spec.amplitude * j.mobility)
            })
            .collect();
        poses.push(articulate(&rig, &joints, &angles, Frame::Index(f as u32))?);
    }
    let skinned = SkinnedSurface::new(&canonical, &rig, None)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let mut frames = Vec::with_capacity(poses.len());
    for p in &poses {
        let mut v = skinned.deform(&rig, p)?;
        if let Some(sigma) = spec.noise.filter(|s| *s > 0.0) {
            let n = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            for x in &mut v {
                *x += Vec3::new(n.sample(&mut noise_rng), n.sample(&mut noise_rng), n.sample(&mut noise_rng));
            }
        }
        frames.push(skinned.to_mesh(v));
    }
    let cameras = framing_cameras(&canonical, spec.views, spec.image_size)?;
    let occ = OccupancyConfig::default();
    let masks = if spec.skip_masks {
        vec![Vec::new(); poses.len()]
    } else {
        poses
            .iter()
            .map(|p| {
                cameras
                    .iter()
                    .map(|c| render_bone_mask(&rig, p, c, &occ, occ.samples_per_ray))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(SynthData {
        scenario: spec.clone(),
        rig,
        poses,
        canonical,
        frames,
        cameras,
        masks,
        joints,
    })
}

/// Applies to every bone a rotation of exactly `magnitude` radians about a
/// random axis and a translation of length `magnitude × max semi-axis` in a
/// random direction.
pub fn perturb_pose(rig: &Rig, pose: &Pose, magnitude: f64, seed: u64) -> Result<Pose> {
    if !(magnitude >= 0.0) {
        return Err(Error::Config("perturbation magnitude must be nonnegative".into()));
    }
    pose.check_covers(rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = pose.clone();
    for bone in rig.bones() {
        let axis = random_axis(&mut rng);
        let dir = random_axis(&mut rng);
        if magnitude == 0.0 {
            continue;
        }
        let local = out.locals.get_mut(&bone.id).expect("pose covers the rig");
        local.rotation = exp_so3(&(axis * magnitude)) * local.rotation;
        local.translation += dir * (magnitude * bone.scale.max());
    }
    Ok(out)
}
