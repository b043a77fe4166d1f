//! Pose retargeting: fit pose locals so the skinned surface matches a target
//! point cloud under the symmetric Chamfer distance.
//!
//! Nearest-neighbour correspondences are fixed while differentiating and
//! recomputed at every evaluation. Per-leaf gradients are first accumulated as
//! world-frame twists about the origin, `(Σ w p × g, Σ w g)`, then mapped to each
//! bone's local increment through its parent frame.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{descend, Eval, OptimConfig, Problem, StopReason};
use crate::error::{Error, Result};
use crate::geometry::{KdTree, PointCloud};
use crate::rig::{BoneId, Pose, Rig};
use crate::skinning::SkinnedSurface;
use crate::transform::{exp_so3, Mat3, RigidTransform, Vec3};

const VERTEX_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetargetScope {
    /// Every bone's local transform is free.
    #[default]
    AllDepths,
    LeavesOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    pub optim: OptimConfig,
    pub scope: RetargetScope,
    /// Steps at which the Chamfer distance is reported.
    pub checkpoints: Vec<usize>,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            scope: RetargetScope::AllDepths,
            checkpoints: vec![50, 100, 150, 200],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetStep {
    pub step: usize,
    pub cd: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RetargetReport {
    /// Initial state and every accepted step.
    pub steps: Vec<RetargetStep>,
    /// State after each configured checkpoint; runs that stop early report their final values.
    pub checkpoints: Vec<RetargetStep>,
    #[serde(skip)]
    pub final_pose: Pose,
    pub stop: StopReason,
    pub wall_time_s: f64,
}

impl PartialEq for RetargetReport {
    /// Ignores wall time.
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps
            && self.checkpoints == other.checkpoints
            && self.final_pose == other.final_pose
            && self.stop == other.stop
    }
}

impl RetargetReport {
    pub fn final_cd(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.cd)
    }

    /// First step whose Chamfer distance is below `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.steps.iter().find(|s| s.cd < threshold).map(|s| s.step)
    }
}

/// The retargeting objective with its free-parameter layout: six entries per
/// free bone, `[ω, τ]`, where the local becomes `(exp(ω) R, t + τ)`.
pub struct RetargetObjective<'a> {
    rig: &'a Rig,
    skinned: &'a SkinnedSurface,
    target: &'a [Vec3],
    target_tree: KdTree,
    canonical_inv: Vec<RigidTransform>,
    free: Vec<BoneId>,
    /// Leaf indices under each free bone.
    free_leaves: Vec<Vec<usize>>,
    weight: f64,
}

impl<'a> RetargetObjective<'a> {
    pub fn new(
        rig: &'a Rig,
        skinned: &'a SkinnedSurface,
        target: &'a PointCloud,
        scope: RetargetScope,
        weight: f64,
    ) -> Result<Self> {
        let leaves = rig.leaf_bones();
        if leaves != skinned.leaves() {
            return Err(Error::Dimension("rig leaves differ from the skinned surface".into()));
        }
        if target.is_empty() || skinned.vertices.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        let canonical = rig.canonical_world();
        let canonical_inv = leaves.iter().map(|id| canonical[id].inverse()).collect();
        let free = match scope {
            RetargetScope::AllDepths => rig.traversal(),
            RetargetScope::LeavesOnly => leaves.clone(),
        };
        let free_leaves = free
            .iter()
            .map(|id| {
                let sub = rig.subtree(*id)?;
                Ok(leaves
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| sub.contains(l))
                    .map(|(i, _)| i)
                    .collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(Self {
            rig,
            skinned,
            target: &target.points,
            target_tree: KdTree::new(&target.points),
            canonical_inv,
            free,
            free_leaves,
            weight,
        })
    }

    pub fn free_bones(&self) -> &[BoneId] {
        &self.free
    }

    pub fn n_params(&self) -> usize {
        6 * self.free.len()
    }

    pub fn deformed(&self, pose: &Pose) -> Result<(Vec<Vec3>, Vec<RigidTransform>)> {
        let world = self.rig.compose_world(pose)?;
        let leaf_maps: Vec<RigidTransform> = self
            .skinned
            .leaves()
            .iter()
            .zip(&self.canonical_inv)
            .map(|(id, inv)| world[id] * *inv)
            .collect();
        Ok((self.skinned.deform_with(&leaf_maps), leaf_maps))
    }

    /// Chamfer distance between the deformed surface and the target.
    pub fn chamfer(&self, pose: &Pose) -> Result<f64> {
        let (y, _) = self.deformed(pose)?;
        Ok(self.chamfer_parts(&y).0)
    }

    /// Returns the distance plus, per direction, nearest indices and distances.
    #[allow(clippy::type_complexity)]
    fn chamfer_parts(&self, y: &[Vec3]) -> (f64, Vec<(usize, f64)>, Vec<(usize, f64)>) {
        let y_tree = KdTree::new(y);
        let fwd: Vec<(usize, f64)> = y
            .par_iter()
            .map(|p| {
                let (j, d2) = self.target_tree.nearest(p).expect("target is nonempty");
                (j, d2.sqrt())
            })
            .collect();
        let bwd: Vec<(usize, f64)> = self
            .target
            .par_iter()
            .map(|q| {
                let (i, d2) = y_tree.nearest(q).expect("surface is nonempty");
                (i, d2.sqrt())
            })
            .collect();
        let mean = |v: &[(usize, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
        (0.5 * (mean(&fwd) + mean(&bwd)), fwd, bwd)
    }

    /// `(weight · cd, cd, gradient)` at `pose`.
    pub fn value_grad(&self, pose: &Pose) -> Result<(f64, f64, Vec<f64>)> {
        let (y, leaf_maps) = self.deformed(pose)?;
        let (cd, fwd, bwd) = self.chamfer_parts(&y);
        let mut grad = vec![0.0; self.n_params()];
        if self.weight == 0.0 {
            return Ok((0.0, cd, grad));
        }
        let (n, m) = (y.len() as f64, self.target.len() as f64);
        let mut g = vec![Vec3::zeros(); y.len()];
        let unit = |v: Vec3| {
            let len = v.norm();
            if len > 0.0 {
                v / len
            } else {
                Vec3::zeros()
            }
        };
        for (i, (j, _)) in fwd.iter().enumerate() {
            g[i] += unit(y[i] - self.target[*j]) * (0.5 / n);
        }
        for (j, (i, _)) in bwd.iter().enumerate() {
            g[*i] += unit(y[*i] - self.target[j]) * (0.5 / m);
        }
        let n_leaves = leaf_maps.len();
        let parts: Vec<Vec<(Vec3, Vec3)>> = self
            .skinned
            .vertices
            .par_chunks(VERTEX_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc = vec![(Vec3::zeros(), Vec3::zeros()); n_leaves];
                for (k, x) in chunk.iter().enumerate() {
                    let i = c * VERTEX_CHUNK + k;
                    let gi = g[i];
                    if gi == Vec3::zeros() {
                        continue;
                    }
                    for (b, w) in self.skinned.weight_row(i).iter().enumerate() {
                        if *w == 0.0 {
                            continue;
                        }
                        let p = leaf_maps[b].apply(x);
                        acc[b].0 += p.cross(&gi) * *w;
                        acc[b].1 += gi * *w;
                    }
                }
                acc
            })
            .collect();
        let mut twist = vec![(Vec3::zeros(), Vec3::zeros()); n_leaves];
        for part in parts {
            for (t, p) in twist.iter_mut().zip(part) {
                t.0 += p.0;
                t.1 += p.1;
            }
        }
        let world = self.rig.compose_world(pose)?;
        for (f, id) in self.free.iter().enumerate() {
            let (mut gw, mut gt) = (Vec3::zeros(), Vec3::zeros());
            for b in &self.free_leaves[f] {
                gw += twist[*b].0;
                gt += twist[*b].1;
            }
            let parent_rot = match self.rig.bone(*id)?.parent {
                Some(p) => world[&p].rotation,
                None => Mat3::identity(),
            };
            let c = world[id].translation;
            let d_omega = parent_rot.tr_mul(&(gw - c.cross(&gt))) * self.weight;
            let d_tau = parent_rot.tr_mul(&gt) * self.weight;
            grad[6 * f..6 * f + 3].copy_from_slice(d_omega.as_slice());
            grad[6 * f + 3..6 * f + 6].copy_from_slice(d_tau.as_slice());
        }
        Ok((self.weight * cd, cd, grad))
    }

    pub fn retract(&self, pose: &Pose, step: &[f64]) -> Pose {
        let mut out = pose.clone();
        for (f, id) in self.free.iter().enumerate() {
            let s = &step[6 * f..6 * f + 6];
            let local = out.locals.get_mut(id).expect("pose covers the rig");
            local.rotation = exp_so3(&Vec3::new(s[0], s[1], s[2])) * local.rotation;
            local.translation += Vec3::new(s[3], s[4], s[5]);
        }
        out
    }
}

impl Problem for RetargetObjective<'_> {
    type State = Pose;

    fn evaluate(&self, pose: &Pose) -> Result<Eval> {
        let (loss, metric, grad) = self.value_grad(pose)?;
        Ok(Eval { loss, metric, grad })
    }

    fn retract(&self, pose: &Pose, step: &[f64]) -> Pose {
        RetargetObjective::retract(self, pose, step)
    }
}

pub fn retarget(
    rig: &Rig,
    skinned: &SkinnedSurface,
    pose_init: &Pose,
    target: &PointCloud,
    cfg: &RetargetConfig,
) -> Result<RetargetReport> {
    retarget_with(rig, skinned, pose_init, target, cfg, |_| true)
}

/// As [`retarget`], calling `observe` after the initial evaluation and every
/// accepted step; returning `false` stops the run.
pub fn retarget_with(
    rig: &Rig,
    skinned: &SkinnedSurface,
    pose_init: &Pose,
    target: &PointCloud,
    cfg: &RetargetConfig,
    mut observe: impl FnMut(&RetargetStep) -> bool,
) -> Result<RetargetReport> {
    let start = Instant::now();
    pose_init.check_covers(rig)?;
    let objective = RetargetObjective::new(rig, skinned, target, cfg.scope, cfg.optim.loss_weights.data)?;
    let out = descend(&objective, pose_init.clone(), &cfg.optim, |step, loss, cd| {
        observe(&RetargetStep { step, cd, loss })
    })?;
    let steps: Vec<RetargetStep> = out
        .trace
        .iter()
        .map(|(step, loss, cd)| RetargetStep { step: *step, cd: *cd, loss: *loss })
        .collect();
    let checkpoints = cfg
        .checkpoints
        .iter()
        .map(|cp| {
            let at = steps.iter().rev().find(|s| s.step <= *cp).unwrap_or(&steps[0]);
            RetargetStep { step: *cp, ..*at }
        })
        .collect();
    log::debug!("retarget stopped after {} steps: {:?}", steps.len() - 1, out.stop);
    Ok(RetargetReport {
        steps,
        checkpoints,
        final_pose: out.state,
        stop: out.stop,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
