//! Spawning child bones under each leaf from clusters of the vertices it dominates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kmeans::lloyd;
use crate::error::{Error, Result};
use crate::rig::{BoneId, BoneInit, Pose, Rig, WorldTransforms};
use crate::skinning::SkinnedSurface;
use crate::transform::{Mat3, RigidTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildScale {
    /// Half the parent's semi-axes.
    HalfParent,
    Constant([f64; 3]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowConfig {
    pub children: usize,
    pub seed: u64,
    pub child_scale: ChildScale,
    pub lloyd_iters: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            children: 2,
            seed: 0,
            child_scale: ChildScale::HalfParent,
            lloyd_iters: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Growth {
    pub rig: Rig,
    /// Input poses extended with canonical locals for the new bones.
    pub poses: Vec<Pose>,
    pub children: BTreeMap<BoneId, Vec<BoneId>>,
    /// Leaves that owned too few vertices to split.
    pub skipped: Vec<BoneId>,
}

/// Adds up to `cfg.children` children under every leaf. Each child is centered
/// on a Lloyd cluster of the canonical vertices whose largest cached weight
/// selects that leaf, with the parent's orientation.
pub fn grow_depth(rig: &Rig, poses: &[Pose], skinned: &SkinnedSurface, cfg: &GrowConfig) -> Result<Growth> {
    if cfg.children == 0 {
        return Err(Error::Config("children must be at least 1".into()));
    }
    let leaves = rig.leaf_bones();
    if leaves != skinned.leaves() {
        return Err(Error::Dimension("rig leaves differ from the skinned surface".into()));
    }
    let canonical = rig.canonical_world();
    let mut owned: Vec<Vec<Vec3>> = vec![Vec::new(); leaves.len()];
    for (i, v) in skinned.vertices.iter().enumerate() {
        owned[skinned.dominant_leaf(i)].push(*v);
    }
    let mut out = rig.clone();
    let mut children = BTreeMap::new();
    let mut skipped = Vec::new();
    for (li, leaf) in leaves.iter().enumerate() {
        if owned[li].len() < cfg.children {
            log::info!(
                "bone {leaf} owns {} vertices, fewer than {}; not split",
                owned[li].len(),
                cfg.children
            );
            skipped.push(*leaf);
            continue;
        }
        let inits = child_inits(rig, &canonical, *leaf, &owned[li], cfg)?;
        let (next, ids) = out.add_child_bones(*leaf, &inits)?;
        out = next;
        children.insert(*leaf, ids);
    }
    let poses = poses.iter().map(|p| p.reconciled(&out)).collect();
    Ok(Growth { rig: out, poses, children, skipped })
}

fn child_inits(rig: &Rig, canonical: &WorldTransforms, parent: BoneId, points: &[Vec3], cfg: &GrowConfig) -> Result<Vec<BoneInit>> {
    let km = lloyd(points, cfg.children, cfg.seed.wrapping_add(parent.0 as u64), cfg.lloyd_iters)?;
    let frame = &canonical[&parent];
    let scale = match cfg.child_scale {
        ChildScale::HalfParent => rig.bone(parent)?.scale * 0.5,
        ChildScale::Constant(s) => Vec3::from(s),
    };
    Ok(km
        .centers
        .iter()
        .map(|c| BoneInit::new(RigidTransform::new(Mat3::identity(), frame.rotation.tr_mul(&(c - frame.translation))), scale))
        .collect())
}

/// Adds `cfg.children` children under any bone, clustering the canonical
/// vertices dominated by leaves of its subtree. For a leaf this is the
/// per-leaf step of [`grow_depth`].
pub fn grow_bone(rig: &Rig, skinned: &SkinnedSurface, parent: BoneId, cfg: &GrowConfig) -> Result<(Rig, Vec<BoneId>)> {
    if cfg.children == 0 {
        return Err(Error::Config("children must be at least 1".into()));
    }
    if rig.leaf_bones() != skinned.leaves() {
        return Err(Error::Dimension("rig leaves differ from the skinned surface".into()));
    }
    let subtree: std::collections::BTreeSet<BoneId> = rig.subtree(parent)?.into_iter().collect();
    let points: Vec<Vec3> = skinned
        .vertices
        .iter()
        .enumerate()
        .filter(|(i, _)| subtree.contains(&skinned.leaves()[skinned.dominant_leaf(*i)]))
        .map(|(_, v)| *v)
        .collect();
    if points.len() < cfg.children {
        return Err(Error::TooFewPoints { needed: cfg.children, got: points.len() });
    }
    let inits = child_inits(rig, &rig.canonical_world(), parent, &points, cfg)?;
    rig.add_child_bones(parent, &inits)
}
