//! Bone occupancy `g_b(x) = d_M(x, b) - γ`, its unified minimum over leaves,
//! soft bone-mask rendering and the mask, overlap and coverage regularizers.
//!
//! Gradients are with respect to each leaf ellipsoid's world center, left
//! rotation increment and semi-axes, in leaf order. Evaluation is parallel over
//! image rows or point chunks; partial results are reduced in index order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::ellipsoid::{leaf_ellipsoids, Ellipsoid, EllipsoidGrad};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::mask::MaskImage;
use crate::rig::{Pose, Rig};
use crate::transform::{RigidTransform, Vec3};

const POINT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupancyConfig {
    /// Occupancy threshold in Mahalanobis units.
    pub gamma: f64,
    /// Sigmoid temperature in Mahalanobis units.
    pub tau: f64,
    /// Soft bone count tolerated at a surface point before the overlap hinge engages.
    pub lambda_max: f64,
    /// Points per bone considered by the coverage loss.
    pub n_cover: usize,
    /// Opacity per unit length of fully occupied space.
    pub density_scale: f64,
    pub samples_per_ray: usize,
    /// When set, the unified occupancy is the log-sum-exp soft minimum at this temperature.
    pub smooth_min: Option<f64>,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tau: 0.1,
            lambda_max: 2.0,
            n_cover: 64,
            density_scale: 20.0,
            samples_per_ray: 64,
            smooth_min: None,
        }
    }
}

impl OccupancyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if self.n_cover < 1 {
            return bad("n_cover must be at least 1");
        }
        if !(self.density_scale > 0.0) {
            return bad("density_scale must be positive");
        }
        if !(self.lambda_max >= 0.0) || !self.gamma.is_finite() {
            return bad("lambda_max must be nonnegative and gamma finite");
        }
        if self.samples_per_ray < 2 {
            return bad("samples_per_ray must be at least 2");
        }
        if matches!(self.smooth_min, Some(b) if !(b > 0.0)) {
            return bad("smooth_min temperature must be positive");
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bone_occ(x: &Vec3, bone_world: &RigidTransform, scale: &Vec3, cfg: &OccupancyConfig) -> f64 {
    Ellipsoid::from_transform(bone_world, *scale).mahalanobis(x) - cfg.gamma
}

/// `sigmoid(-g / τ)`.
pub fn occ_density(g: f64, cfg: &OccupancyConfig) -> f64 {
    sigmoid(-g / cfg.tau)
}

/// Unified occupancy over `bones`. With a hard minimum, ties resolve to the lowest index.
pub fn unified_occ_bones(x: &Vec3, bones: &[Ellipsoid], cfg: &OccupancyConfig) -> Result<f64> {
    if bones.is_empty() {
        return Err(Error::EmptyRig);
    }
    Ok(unified(x, bones, cfg))
}

fn unified(x: &Vec3, bones: &[Ellipsoid], cfg: &OccupancyConfig) -> f64 {
    match cfg.smooth_min {
        None => bones
            .iter()
            .map(|b| b.mahalanobis(x) - cfg.gamma)
            .fold(f64::INFINITY, f64::min),
        Some(beta) => {
            let g: Vec<f64> = bones.iter().map(|b| b.mahalanobis(x) - cfg.gamma).collect();
            let m = g.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = g.iter().map(|v| (-(v - m) / beta).exp()).sum();
            m - beta * s.ln()
        }
    }
}

/// Accumulates `scale · ∂G/∂θ` at `x` into `grads`.
fn unified_backward(x: &Vec3, bones: &[Ellipsoid], cfg: &OccupancyConfig, scale: f64, grads: &mut [EllipsoidGrad]) {
    match cfg.smooth_min {
        None => {
            let mut best = (0, f64::INFINITY);
            for (i, b) in bones.iter().enumerate() {
                let d = b.mahalanobis(x);
                if d < best.1 {
                    best = (i, d);
                }
            }
            let (_, g) = bones[best.0].mahalanobis_grad(x);
            grads[best.0] += g * scale;
        }
        Some(beta) => {
            let dg: Vec<(f64, EllipsoidGrad)> = bones.iter().map(|b| b.mahalanobis_grad(x)).collect();
            let m = dg.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = dg.iter().map(|v| (-(v.0 - m) / beta).exp()).collect();
            let s: f64 = w.iter().sum();
            for (i, (_, g)) in dg.iter().enumerate() {
                grads[i] += *g * (scale * w[i] / s);
            }
        }
    }
}

/// Unified occupancy of the rig's leaves under `pose`.
pub fn unified_occ(x: &Vec3, rig: &Rig, pose: &Pose, cfg: &OccupancyConfig) -> Result<f64> {
    let bones: Vec<Ellipsoid> = leaf_ellipsoids(rig, pose)?.into_iter().map(|(_, e)| e).collect();
    unified_occ_bones(x, &bones, cfg)
}

/// Box enclosing every bone out to where its density is negligible.
pub fn occupancy_bounds(bones: &[Ellipsoid], cfg: &OccupancyConfig) -> Aabb {
    let reach = (cfg.gamma + 12.0 * cfg.tau).max(0.0);
    let mut b = Aabb::empty();
    for e in bones {
        let r = e.bounding_radius(reach);
        b.include(&(e.center - Vec3::repeat(r)));
        b.include(&(e.center + Vec3::repeat(r)));
    }
    b
}

struct RaySamples {
    start: Vec3,
    step: Vec3,
    delta: f64,
    n: usize,
}

fn ray_samples(camera: &Camera, px: u32, py: u32, bounds: &Aabb, n: usize) -> Option<RaySamples> {
    let (o, d) = camera.ray(px, py);
    let (t0, t1) = bounds.ray_interval(&o, &d)?;
    let t0 = t0.max(0.0);
    if t1 <= t0 {
        return None;
    }
    let delta = (t1 - t0) / n as f64;
    Some(RaySamples {
        start: o + d * (t0 + 0.5 * delta),
        step: d * delta,
        delta,
        n,
    })
}

/// Optical depth `Σ k σ(-G(x_i)/τ) δ` along one ray (midpoint samples).
fn optical_depth(s: &RaySamples, bones: &[Ellipsoid], cfg: &OccupancyConfig) -> f64 {
    let mut sum = 0.0;
    for i in 0..s.n {
        let x = s.start + s.step * i as f64;
        sum += cfg.density_scale * occ_density(unified(&x, bones, cfg), cfg) * s.delta;
    }
    sum
}

/// Renders `M = 1 - exp(-Σ ρ δ)` per pixel. `bounds` fixes the sampled
/// interval; `None` uses [`occupancy_bounds`] of `bones`.
pub fn render_mask_bones(
    bones: &[Ellipsoid],
    camera: &Camera,
    cfg: &OccupancyConfig,
    bounds: Option<&Aabb>,
) -> Result<MaskImage> {
    camera.validate()?;
    cfg.validate()?;
    let (w, h) = (camera.width, camera.height);
    if bones.is_empty() {
        return Ok(MaskImage::zeros(*camera));
    }
    let bounds = bounds.copied().unwrap_or_else(|| occupancy_bounds(bones, cfg));
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|py| {
            (0..w)
                .map(|px| match ray_samples(camera, px, py, &bounds, cfg.samples_per_ray) {
                    Some(s) => 1.0 - (-optical_depth(&s, bones, cfg)).exp(),
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    MaskImage::new(*camera, rows.concat())
}

/// Soft bone mask of the rig's leaves seen from `camera`.
pub fn render_bone_mask(
    rig: &Rig,
    pose: &Pose,
    camera: &Camera,
    cfg: &OccupancyConfig,
    samples_per_ray: usize,
) -> Result<MaskImage> {
    let bones: Vec<Ellipsoid> = leaf_ellipsoids(rig, pose)?.into_iter().map(|(_, e)| e).collect();
    let cfg = OccupancyConfig {
        samples_per_ray,
        ..cfg.clone()
    };
    render_mask_bones(&bones, camera, &cfg, None)
}

/// Mean squared difference over pixels.
pub fn bone_mask_loss(pred: &MaskImage, gt: &MaskImage) -> Result<f64> {
    pred.same_dimensions(gt)?;
    let n = pred.values.len() as f64;
    Ok(pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Mask loss of `bones` against `gt` (rendered from `gt.camera`) with its gradient.
/// The sampling interval `bounds` is held fixed.
pub fn bone_mask_loss_grad(
    bones: &[Ellipsoid],
    gt: &MaskImage,
    cfg: &OccupancyConfig,
    bounds: &Aabb,
) -> Result<(f64, Vec<EllipsoidGrad>)> {
    let camera = &gt.camera;
    camera.validate()?;
    cfg.validate()?;
    if bones.is_empty() {
        return Err(Error::EmptyRig);
    }
    let (w, h) = (camera.width, camera.height);
    let n_pix = (w as f64) * (h as f64);
    let rows: Vec<(f64, Vec<EllipsoidGrad>)> = (0..h)
        .into_par_iter()
        .map(|py| {
            let mut grads = vec![EllipsoidGrad::zero(); bones.len()];
            let mut loss = 0.0;
            for px in 0..w {
                let target = gt.values[py as usize * w as usize + px as usize];
                let Some(s) = ray_samples(camera, px, py, bounds, cfg.samples_per_ray) else {
                    loss += target * target;
                    continue;
                };
                let depth = optical_depth(&s, bones, cfg);
                let transmittance = (-depth).exp();
                let m = 1.0 - transmittance;
                loss += (m - target) * (m - target);
                // dL/dS for this pixel.
                let upstream = 2.0 * (m - target) / n_pix * transmittance;
                if upstream == 0.0 {
                    continue;
                }
                for i in 0..s.n {
                    let x = s.start + s.step * i as f64;
                    let z = -unified(&x, bones, cfg) / cfg.tau;
                    let sg = sigmoid(z);
                    let dsig = sg * (1.0 - sg);
                    if dsig == 0.0 {
                        continue;
                    }
                    let scale = upstream * cfg.density_scale * s.delta * dsig * (-1.0 / cfg.tau);
                    unified_backward(&x, bones, cfg, scale, &mut grads);
                }
            }
            (loss, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = vec![EllipsoidGrad::zero(); bones.len()];
    for (l, g) in rows {
        total += l;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((total / n_pix, grads))
}

fn reduce_chunks(parts: Vec<(f64, Vec<EllipsoidGrad>)>, n_bones: usize) -> (f64, Vec<EllipsoidGrad>) {
    let mut total = 0.0;
    let mut grads = vec![EllipsoidGrad::zero(); n_bones];
    for (l, g) in parts {
        total += l;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    (total, grads)
}

/// `(1/|V|) Σ_x max(0, Σ_b σ(-g_b(x)/τ) - λ)` and its gradient.
pub fn overlap_loss_bones(points: &[Vec3], bones: &[Ellipsoid], cfg: &OccupancyConfig) -> Result<(f64, Vec<EllipsoidGrad>)> {
    if points.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let parts: Vec<(f64, Vec<EllipsoidGrad>)> = points
        .par_chunks(POINT_CHUNK)
        .map(|chunk| {
            let mut grads = vec![EllipsoidGrad::zero(); bones.len()];
            let mut loss = 0.0;
            let mut dg = Vec::with_capacity(bones.len());
            for x in chunk {
                dg.clear();
                let mut soft = 0.0;
                for b in bones {
                    let (d, g) = b.mahalanobis_grad(x);
                    let sg = sigmoid(-(d - cfg.gamma) / cfg.tau);
                    soft += sg;
                    dg.push((sg, g));
                }
                if soft > cfg.lambda_max {
                    loss += soft - cfg.lambda_max;
                    for (acc, (sg, g)) in grads.iter_mut().zip(&dg) {
                        *acc += *g * (-sg * (1.0 - sg) / cfg.tau);
                    }
                }
            }
            (loss, grads)
        })
        .collect();
    let (total, grads) = reduce_chunks(parts, bones.len());
    let inv = 1.0 / points.len() as f64;
    Ok((total * inv, grads.into_iter().map(|g| g * inv).collect()))
}

/// Indices of the `n` points nearest to `bone` in Mahalanobis distance,
/// ties broken by lower index.
pub fn cover_neighbourhood(points: &[Vec3], bone: &Ellipsoid, n: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (bone.mahalanobis(p), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if n < d.len() {
        d.select_nth_unstable_by(n, cmp);
        d.truncate(n);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// `Σ_b Σ_{x ∈ N_b} max(0, g_b(x))` with `N_b` the `n_cover` Mahalanobis-nearest
/// points to bone `b`, re-selected on every call.
pub fn coverage_loss_bones(points: &[Vec3], bones: &[Ellipsoid], cfg: &OccupancyConfig) -> Result<(f64, Vec<EllipsoidGrad>)> {
    if points.len() < cfg.n_cover {
        return Err(Error::TooFewPoints {
            needed: cfg.n_cover,
            got: points.len(),
        });
    }
    let per_bone: Vec<(f64, EllipsoidGrad)> = bones
        .par_iter()
        .map(|b| {
            let mut loss = 0.0;
            let mut grad = EllipsoidGrad::zero();
            for i in cover_neighbourhood(points, b, cfg.n_cover) {
                let (d, g) = b.mahalanobis_grad(&points[i]);
                let occ = d - cfg.gamma;
                if occ > 0.0 {
                    loss += occ;
                    grad += g;
                }
            }
            (loss, grad)
        })
        .collect();
    let total = per_bone.iter().map(|p| p.0).sum();
    Ok((total, per_bone.into_iter().map(|p| p.1).collect()))
}

pub fn overlap_loss(points: &[Vec3], rig: &Rig, pose: &Pose, cfg: &OccupancyConfig) -> Result<(f64, Vec<EllipsoidGrad>)> {
    let bones: Vec<Ellipsoid> = leaf_ellipsoids(rig, pose)?.into_iter().map(|(_, e)| e).collect();
    overlap_loss_bones(points, &bones, cfg)
}

pub fn coverage_loss(points: &[Vec3], rig: &Rig, pose: &Pose, cfg: &OccupancyConfig) -> Result<(f64, Vec<EllipsoidGrad>)> {
    let bones: Vec<Ellipsoid> = leaf_ellipsoids(rig, pose)?.into_iter().map(|(_, e)| e).collect();
    coverage_loss_bones(points, &bones, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::BoneInit;
    use crate::transform::Mat3;

    fn sphere(c: Vec3, r: f64) -> Ellipsoid {
        Ellipsoid::new(c, Mat3::identity(), Vec3::repeat(r))
    }

    fn cfg() -> OccupancyConfig {
        OccupancyConfig::default()
    }

    #[test]
    fn bone_occ_values() {
        let t = RigidTransform::identity();
        let s = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(bone_occ(&Vec3::zeros(), &t, &s, &cfg()), -1.0);
        assert_eq!(bone_occ(&Vec3::new(0.0, 2.0, 0.0), &t, &s, &cfg()), 0.0);
        assert_eq!(bone_occ(&Vec3::new(5.0, 0.0, 0.0), &t, &s, &cfg()), 4.0);
    }

    #[test]
    fn density_values() {
        let c = cfg();
        assert_eq!(occ_density(0.0, &c), 0.5);
        assert_eq!(occ_density(f64::NEG_INFINITY, &c), 1.0);
        assert_eq!(occ_density(-1e300, &c), 1.0);
        assert!((occ_density(c.tau, &c) - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn unified_is_min() {
        let bones = [sphere(Vec3::zeros(), 1.0), sphere(Vec3::new(10.0, 0.0, 0.0), 1.0)];
        let x = Vec3::new(0.5, 0.0, 0.0);
        assert_eq!(unified_occ_bones(&x, &bones, &cfg()).unwrap(), -0.5);
        assert!(unified_occ_bones(&x, &[], &cfg()).is_err());
        let rig = Rig::single(RigidTransform::identity(), Vec3::repeat(1.0)).unwrap();
        let pose = rig.canonical_pose();
        assert_eq!(
            unified_occ(&x, &rig, &pose, &cfg()).unwrap(),
            bone_occ(&x, &RigidTransform::identity(), &Vec3::repeat(1.0), &cfg())
        );
    }

    #[test]
    fn smooth_min_is_below_min() {
        let bones = [sphere(Vec3::zeros(), 1.0), sphere(Vec3::new(1.0, 0.0, 0.0), 1.0)];
        let x = Vec3::new(0.3, 0.2, 0.0);
        let hard = unified_occ_bones(&x, &bones, &cfg()).unwrap();
        let soft = unified_occ_bones(&x, &bones, &OccupancyConfig { smooth_min: Some(0.05), ..cfg() }).unwrap();
        assert!(soft <= hard && hard - soft < 0.05 * 2f64.ln() + 1e-12);
    }

    fn camera(size: u32) -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -6.0), Vec3::zeros(), Vec3::y(), 0.6, size, size).unwrap()
    }

    #[test]
    fn mask_misses_and_hits() {
        let bones = [sphere(Vec3::zeros(), 0.5)];
        let m = render_mask_bones(&bones, &camera(32), &cfg(), None).unwrap();
        // Corner rays pass far from the sphere.
        assert!(m.get(0, 0) < 1e-3);
        // Center ray crosses a chord of length 1.0 with k·L = 20.
        assert!(m.get(16, 16) > 0.99);
        assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_frustum_renders_zeros() {
        let bones = [sphere(Vec3::new(0.0, 0.0, -20.0), 0.5)];
        let m = render_mask_bones(&bones, &camera(8), &cfg(), None).unwrap();
        assert!(m.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_focal_is_an_error() {
        let mut cam = camera(8);
        cam.fy = 0.0;
        assert!(render_mask_bones(&[sphere(Vec3::zeros(), 1.0)], &cam, &cfg(), None).is_err());
    }

    #[test]
    fn mask_monotone_in_density_scale() {
        let bones = [sphere(Vec3::zeros(), 0.5), sphere(Vec3::new(0.6, 0.2, 0.0), 0.3)];
        let bounds = occupancy_bounds(&bones, &cfg());
        let lo = render_mask_bones(&bones, &camera(16), &OccupancyConfig { density_scale: 5.0, ..cfg() }, Some(&bounds)).unwrap();
        let hi = render_mask_bones(&bones, &camera(16), &OccupancyConfig { density_scale: 9.0, ..cfg() }, Some(&bounds)).unwrap();
        assert!(lo.values.iter().zip(&hi.values).all(|(a, b)| a <= b));
    }

    #[test]
    fn mask_loss_values() {
        let cam = camera(4);
        let ones = MaskImage::new(cam, vec![1.0; 16]).unwrap();
        let zeros = MaskImage::zeros(cam);
        assert_eq!(bone_mask_loss(&ones, &ones).unwrap(), 0.0);
        assert_eq!(bone_mask_loss(&ones, &zeros).unwrap(), 1.0);
        let other = MaskImage::zeros(camera(5));
        assert!(matches!(bone_mask_loss(&ones, &other), Err(Error::Dimension(_))));
    }

    #[test]
    fn overlap_single_bone_is_inactive() {
        let bones = [sphere(Vec3::zeros(), 1.0)];
        let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.05, 0.0, 0.0)).collect();
        let c = OccupancyConfig { lambda_max: 1.0, ..cfg() };
        assert_eq!(overlap_loss_bones(&pts, &bones, &c).unwrap().0, 0.0);
    }

    #[test]
    fn overlap_coincident_bones() {
        let bones = [sphere(Vec3::zeros(), 1.0), sphere(Vec3::zeros(), 1.0)];
        let c = OccupancyConfig { lambda_max: 1.0, ..cfg() };
        let (v, _) = overlap_loss_bones(&[Vec3::zeros()], &bones, &c).unwrap();
        let expected = 2.0 * sigmoid(10.0) - 1.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.0).abs() < 1e-4);
    }

    #[test]
    fn overlap_separated_bones() {
        let bones = [sphere(Vec3::zeros(), 0.5), sphere(Vec3::new(3.0, 0.0, 0.0), 0.5)];
        let pts: Vec<Vec3> = (0..61).map(|i| Vec3::new(i as f64 * 0.05, 0.0, 0.0)).collect();
        assert!(overlap_loss_bones(&pts, &bones, &cfg()).unwrap().0 < 1e-6);
    }

    #[test]
    fn coverage_inside_is_zero_and_far_bone_pays() {
        let pts: Vec<Vec3> = (0..100)
            .map(|i| Vec3::new((i % 10) as f64 * 0.01, (i / 10) as f64 * 0.01, 0.0))
            .collect();
        let c = OccupancyConfig { n_cover: 10, ..cfg() };
        let inside = [sphere(Vec3::new(0.05, 0.05, 0.0), 1.0)];
        assert_eq!(coverage_loss_bones(&pts, &inside, &c).unwrap().0, 0.0);
        // Tiny bone at distance ~d from the cluster: each of N terms ≈ d/ε - 1.
        let d = 2.0;
        for eps in [0.1, 0.05] {
            let far = [sphere(Vec3::new(0.05, 0.05, d), eps)];
            let (v, _) = coverage_loss_bones(&pts, &far, &c).unwrap();
            let approx = 10.0 * (d / eps - 1.0);
            assert!((v - approx).abs() / approx < 1e-3, "{v} vs {approx}");
        }
        assert!(coverage_loss_bones(&pts[..5], &inside, &c).is_err());
    }

    #[test]
    fn rig_wrappers_use_leaves() {
        let rig = Rig::single(RigidTransform::identity(), Vec3::repeat(1.0)).unwrap();
        let (rig, _) = rig
            .add_child_bones(
                crate::rig::BoneId(0),
                &[BoneInit::new(RigidTransform::from_translation(Vec3::new(5.0, 0.0, 0.0)), Vec3::repeat(0.5))],
            )
            .unwrap();
        let pose = rig.canonical_pose();
        // The root is no longer a leaf; the origin is 10 units from the only leaf.
        assert!((unified_occ(&Vec3::zeros(), &rig, &pose, &cfg()).unwrap() - 9.0).abs() < 1e-12);
    }
    fn fd_check(bones: &[Ellipsoid], f: impl Fn(&[Ellipsoid]) -> (f64, Vec<EllipsoidGrad>)) -> f64 {
        use crate::gradcheck::*;
        let (_, g) = f(bones);
        let zero = vec![0.0; 9 * bones.len()];
        let num = central_difference(|d| f(&step_ellipsoids(bones, d)).0, &zero, DEFAULT_STEP);
        relative_error(&flatten_grads(&g), &num)
    }

    fn two_bones() -> Vec<Ellipsoid> {
        vec![
            Ellipsoid::new(Vec3::new(-0.3, 0.1, 0.0), crate::transform::exp_so3(&Vec3::new(0.2, -0.4, 0.3)), Vec3::new(0.5, 0.3, 0.4)),
            Ellipsoid::new(Vec3::new(0.4, -0.1, 0.2), crate::transform::exp_so3(&Vec3::new(-0.5, 0.1, 0.7)), Vec3::new(0.3, 0.6, 0.35)),
        ]
    }

    #[test]
    fn mask_gradient_matches_differences() {
        let cam = camera(12);
        let truth = [sphere(Vec3::new(0.1, 0.0, 0.0), 0.6)];
        let c = OccupancyConfig { samples_per_ray: 24, ..cfg() };
        let gt = render_mask_bones(&truth, &cam, &c, None).unwrap();
        let bones = vec![two_bones()[0]];
        let bounds = occupancy_bounds(&truth, &c).expanded(1.0);
        let err = fd_check(&bones, |b| bone_mask_loss_grad(b, &gt, &c, &bounds).unwrap());
        assert!(err < 1e-4, "{err}");
        let smooth = OccupancyConfig { smooth_min: Some(0.2), ..c };
        let err = fd_check(&two_bones(), |b| bone_mask_loss_grad(b, &gt, &smooth, &bounds).unwrap());
        assert!(err < 1e-4, "{err}");
        let (l, _) = bone_mask_loss_grad(&bones, &gt, &c, &bounds).unwrap();
        let pred = render_mask_bones(&bones, &cam, &c, Some(&bounds)).unwrap();
        assert!((l - bone_mask_loss(&pred, &gt).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn overlap_and_coverage_gradients_match_differences() {
        let pts: Vec<Vec3> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                Vec3::new(t.sin() * 0.7, (1.3 * t).cos() * 0.5, (0.7 * t).sin() * 0.4)
            })
            .collect();
        let c = OccupancyConfig { lambda_max: 0.8, n_cover: 20, ..cfg() };
        let err = fd_check(&two_bones(), |b| overlap_loss_bones(&pts, b, &c).unwrap());
        assert!(err < 1e-4, "{err}");
        let err = fd_check(&two_bones(), |b| coverage_loss_bones(&pts, b, &c).unwrap());
        assert!(err < 1e-4, "{err}");
    }
}
