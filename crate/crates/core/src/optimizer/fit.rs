//! Regularized bone fitting to silhouettes and surface samples, and the
//! coarse-to-fine schedule that alternates fitting with growth.
//!
//! Only leaf bones move; their ancestors stay fixed. Each leaf has nine free
//! parameters `[ω, τ, σ]`: a left rotation increment and a translation in its
//! parent's frame, and log semi-axes. The mask renderer's sampling box is
//! frozen at the start of a run so every evaluation sees the same function.

use serde::{Deserialize, Serialize};

use super::grow::{grow_depth, GrowConfig};
use super::kmeans::lloyd;
use super::{descend, Eval, OptimConfig, Problem, StopReason};
use crate::ellipsoid::{Ellipsoid, EllipsoidGrad};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, TriMesh};
use crate::mask::MaskImage;
use crate::occupancy::{bone_mask_loss_grad, coverage_loss_bones, occupancy_bounds, overlap_loss_bones, OccupancyConfig};
use crate::rig::{BoneInit, Pose, Rig};
use crate::skinning::SkinnedSurface;
use crate::transform::{exp_so3, Mat3, RigidTransform, Vec3};

/// Observations a rig is fitted to.
#[derive(Clone, Debug)]
pub struct FitData {
    /// Surface samples used by the overlap and coverage terms.
    pub surface: Vec<Vec3>,
    /// Target silhouettes, each with its camera.
    pub masks: Vec<MaskImage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStep {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub rig: Rig,
    pub pose: Pose,
    pub steps: Vec<FitStep>,
    pub stop: StopReason,
    pub bounds: Aabb,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub depth: usize,
    pub leaves: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub stop: StopReason,
}

#[derive(Clone, Debug)]
pub struct CoarseToFine {
    pub rig: Rig,
    pub pose: Pose,
    pub depths: Vec<DepthSummary>,
}

type LeafState = Vec<(RigidTransform, Vec3)>;

struct FitProblem<'a> {
    parents: Vec<RigidTransform>,
    data: &'a FitData,
    occ: &'a OccupancyConfig,
    weights: super::LossWeights,
    bounds: Aabb,
}

impl FitProblem<'_> {
    fn ellipsoids(&self, state: &LeafState) -> Vec<Ellipsoid> {
        state
            .iter()
            .zip(&self.parents)
            .map(|((local, log_s), parent)| Ellipsoid::from_transform(&(*parent * *local), log_s.map(f64::exp)))
            .collect()
    }
}

impl Problem for FitProblem<'_> {
    type State = LeafState;

    fn evaluate(&self, state: &LeafState) -> Result<Eval> {
        let bones = self.ellipsoids(state);
        let mut loss = 0.0;
        let mut eg = vec![EllipsoidGrad::zero(); bones.len()];
        let mut add = |w: f64, (l, g): (f64, Vec<EllipsoidGrad>)| {
            loss += w * l;
            for (a, b) in eg.iter_mut().zip(g) {
                *a += b * w;
            }
        };
        let w = &self.weights;
        if w.bone_mask > 0.0 {
            let per_view = w.bone_mask / self.data.masks.len() as f64;
            for m in &self.data.masks {
                add(per_view, bone_mask_loss_grad(&bones, m, self.occ, &self.bounds)?);
            }
        }
        if w.overlap > 0.0 {
            add(w.overlap, overlap_loss_bones(&self.data.surface, &bones, self.occ)?);
        }
        if w.cover > 0.0 {
            add(w.cover, coverage_loss_bones(&self.data.surface, &bones, self.occ)?);
        }
        let mut grad = Vec::with_capacity(9 * bones.len());
        for ((g, parent), e) in eg.iter().zip(&self.parents).zip(&bones) {
            grad.extend_from_slice(parent.rotation.tr_mul(&g.rotation).as_slice());
            grad.extend_from_slice(parent.rotation.tr_mul(&g.center).as_slice());
            grad.extend_from_slice(g.scale.component_mul(&e.scale).as_slice());
        }
        Ok(Eval { loss, metric: loss, grad })
    }

    fn retract(&self, state: &LeafState, step: &[f64]) -> LeafState {
        state
            .iter()
            .zip(step.chunks_exact(9))
            .map(|((local, log_s), d)| {
                let rotation = exp_so3(&Vec3::new(d[0], d[1], d[2])) * local.rotation;
                let translation = local.translation + Vec3::new(d[3], d[4], d[5]);
                (RigidTransform::new(rotation, translation), log_s + Vec3::new(d[6], d[7], d[8]))
            })
            .collect()
    }
}

/// Sampling box used by [`fit_bones`]: the occupancy bounds of `bones`
/// joined with the surface bounds.
pub fn fit_mask_bounds(bones: &[Ellipsoid], surface: &[Vec3], occ: &OccupancyConfig) -> Aabb {
    let mut b = occupancy_bounds(bones, occ);
    for p in surface {
        b.include(p);
    }
    b
}

/// Minimizes `w_mask·L_mask + w_overlap·L_overlap + w_cover·L_cover` over the
/// leaf bones of `rig` posed by `pose`. The mask term averages over views.
/// Fitted leaf locals are written both into the returned rig and the returned pose.
pub fn fit_bones(rig: &Rig, pose: &Pose, data: &FitData, cfg: &OptimConfig, occ: &OccupancyConfig) -> Result<FitReport> {
    if data.surface.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    if cfg.loss_weights.bone_mask > 0.0 && data.masks.is_empty() {
        return Err(Error::Config("the mask term needs at least one view".into()));
    }
    occ.validate()?;
    let world = rig.compose_world(pose)?;
    let leaves = rig.leaf_bones();
    let mut parents = Vec::with_capacity(leaves.len());
    let mut init = Vec::with_capacity(leaves.len());
    for id in &leaves {
        let bone = rig.bone(*id)?;
        parents.push(bone.parent.map_or(RigidTransform::identity(), |p| world[&p]));
        init.push((pose.locals[id], bone.scale.map(f64::ln)));
    }
    let mut problem = FitProblem {
        parents,
        data,
        occ,
        weights: cfg.loss_weights.clone(),
        bounds: Aabb::empty(),
    };
    problem.bounds = fit_mask_bounds(&problem.ellipsoids(&init), &data.surface, occ);
    let out = descend(&problem, init, cfg, |_, _, _| true)?;
    let mut fitted = rig.clone();
    let mut fitted_pose = pose.clone();
    for (id, (local, log_s)) in leaves.iter().zip(&out.state) {
        fitted = fitted.with_local(*id, *local)?.with_scale(*id, log_s.map(f64::exp))?;
        fitted_pose = fitted_pose.with_local(*id, *local);
    }
    Ok(FitReport {
        rig: fitted,
        pose: fitted_pose,
        steps: out.trace.iter().map(|(step, loss, _)| FitStep { step: *step, loss: *loss }).collect(),
        stop: out.stop,
        bounds: problem.bounds,
    })
}

/// Alternates [`fit_bones`] at the canonical pose with [`grow_depth`] until the
/// rig has `depths` levels below its roots' level. `cfg.max_steps` is the
/// per-depth budget.
pub fn coarse_to_fine(
    rig: &Rig,
    mesh: &TriMesh,
    data: &FitData,
    depths: usize,
    cfg: &OptimConfig,
    occ: &OccupancyConfig,
    grow: &GrowConfig,
) -> Result<CoarseToFine> {
    if depths < 1 {
        return Err(Error::Config("depths must be at least 1".into()));
    }
    let mut rig = rig.clone();
    let mut summaries = Vec::with_capacity(depths);
    for level in 1..=depths {
        let pose = rig.canonical_pose();
        let report = fit_bones(&rig, &pose, data, cfg, occ)?;
        summaries.push(DepthSummary {
            depth: level,
            leaves: rig.leaf_bones().len(),
            initial_loss: report.steps[0].loss,
            final_loss: report.steps.last().unwrap().loss,
            steps: report.steps.len() - 1,
            stop: report.stop,
        });
        log::info!(
            "depth {level}: {} leaves, loss {:.6e} -> {:.6e}",
            summaries[level - 1].leaves,
            summaries[level - 1].initial_loss,
            summaries[level - 1].final_loss
        );
        rig = report.rig;
        if level < depths {
            let skinned = SkinnedSurface::new(mesh, &rig, None)?;
            rig = grow_depth(&rig, &[], &skinned, grow)?.rig;
        }
    }
    let pose = rig.canonical_pose();
    Ok(CoarseToFine { rig, pose, depths: summaries })
}

/// Root bones from a k-means split of `points`, each aligned with its
/// cluster's principal axes and sized to twice the standard deviations.
pub fn init_roots(points: &[Vec3], n_roots: usize, seed: u64) -> Result<Rig> {
    let km = lloyd(points, n_roots, seed, 100)?;
    let extent = Aabb::from_points(points).diagonal().max(1e-9);
    let floor = 1e-3 * extent;
    let mut inits = Vec::with_capacity(n_roots);
    for (j, c) in km.centers.iter().enumerate() {
        let members: Vec<&Vec3> = points.iter().zip(&km.assignment).filter(|(_, a)| **a == j).map(|(p, _)| p).collect();
        let mut cov = Mat3::zeros();
        for p in &members {
            let d = *p - c;
            cov += d * d.transpose();
        }
        cov /= members.len().max(1) as f64;
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let mut rot = Mat3::from_columns(&[
            eig.eigenvectors.column(order[0]).into_owned(),
            eig.eigenvectors.column(order[1]).into_owned(),
            eig.eigenvectors.column(order[2]).into_owned(),
        ]);
        if rot.determinant() < 0.0 {
            rot.set_column(2, &(-rot.column(2)));
        }
        let rot = crate::transform::orthonormalize(&rot);
        let scale = Vec3::new(
            (2.0 * eig.eigenvalues[order[0]].max(0.0).sqrt()).max(floor),
            (2.0 * eig.eigenvalues[order[1]].max(0.0).sqrt()).max(floor),
            (2.0 * eig.eigenvalues[order[2]].max(0.0).sqrt()).max(floor),
        );
        inits.push(BoneInit::new(RigidTransform::new(rot, *c), scale));
    }
    Rig::from_roots(&inits)
}

