//! Bone hierarchy: ellipsoidal bones arranged in a forest, per-frame poses and
//! world-space composition along ancestor chains.
//!
//! A bone's world transform is the product of the local transforms on the path
//! from its root, root first: `W = L_root · … · L_parent · L_bone`. Rigs and
//! poses are values; every edit returns a new rig.

mod file;

pub use file::{load_rig, parse_rig, save_rig, write_rig, RigDocument, RIG_FILE_VERSION};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{RigidTransform, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoneId(pub u32);

impl fmt::Display for BoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bone {
    pub id: BoneId,
    /// Canonical local transform relative to the parent's frame (world for roots).
    pub local: RigidTransform,
    /// Ellipsoid semi-axis lengths, strictly positive, shared by all frames.
    pub scale: Vec3,
    pub parent: Option<BoneId>,
    pub children: Vec<BoneId>,
}

/// Geometry for a bone being added to a rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoneInit {
    pub local: RigidTransform,
    pub scale: Vec3,
}

impl BoneInit {
    pub fn new(local: RigidTransform, scale: Vec3) -> Self {
        Self { local, scale }
    }
}

#[derive(Clone, Debug)]
pub struct Rig {
    pub(crate) bones: BTreeMap<BoneId, Bone>,
    roots: Vec<BoneId>,
    depth_of: BTreeMap<BoneId, usize>,
    next_id: u32,
}

/// Two rigs are equal when their bones and tree layout match; the id allocator is ignored.
impl PartialEq for Rig {
    fn eq(&self, other: &Self) -> bool {
        self.bones == other.bones && self.roots == other.roots
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Frame {
    Canonical,
    Index(u32),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Canonical => f.write_str("canonical"),
            Frame::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Local transforms of every bone for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub frame: Frame,
    pub locals: BTreeMap<BoneId, RigidTransform>,
}

pub type WorldTransforms = BTreeMap<BoneId, RigidTransform>;

fn check_scale(id: BoneId, scale: &Vec3) -> Result<()> {
    if scale.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidRig(format!(
            "bone {id} has non-positive scale ({}, {}, {})",
            scale.x, scale.y, scale.z
        )))
    }
}

fn check_local(id: BoneId, local: &RigidTransform) -> Result<()> {
    if local.is_rigid() {
        Ok(())
    } else {
        Err(Error::InvalidRig(format!(
            "bone {id} local transform is not a proper rigid transform"
        )))
    }
}

impl Rig {
    /// Single-bone rig.
    pub fn single(local: RigidTransform, scale: Vec3) -> Result<Rig> {
        Rig::from_roots(&[BoneInit::new(local, scale)])
    }

    /// Flat rig with one root per entry, ids assigned in order from 0.
    pub fn from_roots(inits: &[BoneInit]) -> Result<Rig> {
        let specs: Vec<_> = inits
            .iter()
            .enumerate()
            .map(|(i, b)| (BoneId(i as u32), None, b.local, b.scale))
            .collect();
        Rig::from_specs(specs, None)
    }

    /// Builds a rig from `(id, parent, local, scale)` records. Record order fixes
    /// the order of roots and of each bone's children.
    pub fn from_specs(
        specs: Vec<(BoneId, Option<BoneId>, RigidTransform, Vec3)>,
        next_id: Option<u32>,
    ) -> Result<Rig> {
        let mut bones = BTreeMap::new();
        for (id, parent, local, scale) in &specs {
            check_scale(*id, scale)?;
            check_local(*id, local)?;
            let bone = Bone {
                id: *id,
                local: *local,
                scale: *scale,
                parent: *parent,
                children: Vec::new(),
            };
            if bones.insert(*id, bone).is_some() {
                return Err(Error::InvalidRig(format!("duplicate bone id {id}")));
            }
        }
        let mut roots = Vec::new();
        for (id, parent, _, _) in &specs {
            match parent {
                None => roots.push(*id),
                Some(p) => {
                    if p == id {
                        return Err(Error::Cycle(*id));
                    }
                    match bones.get_mut(p) {
                        Some(pb) => pb.children.push(*id),
                        None => {
                            return Err(Error::InvalidRig(format!(
                                "bone {id} has unknown parent {p}"
                            )))
                        }
                    }
                }
            }
        }
        // Every bone must reach a root within |bones| steps.
        for id in bones.keys() {
            let mut cur = *id;
            let mut steps = 0;
            while let Some(p) = bones[&cur].parent {
                cur = p;
                steps += 1;
                if steps > bones.len() {
                    return Err(Error::Cycle(*id));
                }
            }
        }
        if bones.is_empty() {
            return Err(Error::EmptyRig);
        }
        let max_id = bones.keys().next_back().map(|b| b.0 + 1).unwrap_or(0);
        let next_id = next_id.unwrap_or(max_id).max(max_id);
        let mut rig = Rig {
            bones,
            roots,
            depth_of: BTreeMap::new(),
            next_id,
        };
        rig.recompute_depths();
        Ok(rig)
    }

    fn recompute_depths(&mut self) {
        self.depth_of.clear();
        let mut stack: Vec<(BoneId, usize)> = self.roots.iter().rev().map(|r| (*r, 1)).collect();
        while let Some((id, d)) = stack.pop() {
            self.depth_of.insert(id, d);
            for c in self.bones[&id].children.iter().rev() {
                stack.push((*c, d + 1));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn bone(&self, id: BoneId) -> Result<&Bone> {
        self.bones.get(&id).ok_or(Error::UnknownBone(id))
    }

    pub fn contains(&self, id: BoneId) -> bool {
        self.bones.contains_key(&id)
    }

    /// Bones in id order.
    pub fn bones(&self) -> impl Iterator<Item = &Bone> {
        self.bones.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = BoneId> + '_ {
        self.bones.keys().copied()
    }

    pub fn roots(&self) -> &[BoneId] {
        &self.roots
    }

    pub fn depth(&self, id: BoneId) -> Result<usize> {
        self.depth_of.get(&id).copied().ok_or(Error::UnknownBone(id))
    }

    pub fn depths(&self) -> &BTreeMap<BoneId, usize> {
        &self.depth_of
    }

    pub fn max_depth(&self) -> usize {
        self.depth_of.values().copied().max().unwrap_or(0)
    }

    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    /// Depth-first pre-order over the forest, honouring root and child order.
    pub fn traversal(&self) -> Vec<BoneId> {
        let mut out = Vec::with_capacity(self.bones.len());
        let mut stack: Vec<BoneId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.bones[&id].children.iter().rev().copied());
        }
        out
    }

    /// Leaf bones in depth-first order.
    pub fn leaf_bones(&self) -> Vec<BoneId> {
        self.traversal()
            .into_iter()
            .filter(|id| self.bones[id].children.is_empty())
            .collect()
    }

    pub fn is_leaf(&self, id: BoneId) -> bool {
        self.bones.get(&id).is_some_and(|b| b.children.is_empty())
    }

    /// Path from the root down to `id`, inclusive.
    pub fn chain(&self, id: BoneId) -> Result<Vec<BoneId>> {
        let mut out = vec![id];
        let mut cur = self.bone(id)?;
        while let Some(p) = cur.parent {
            out.push(p);
            cur = &self.bones[&p];
        }
        out.reverse();
        Ok(out)
    }

    /// `id` and all of its descendants, pre-order.
    pub fn subtree(&self, id: BoneId) -> Result<Vec<BoneId>> {
        self.bone(id)?;
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(b) = stack.pop() {
            out.push(b);
            stack.extend(self.bones[&b].children.iter().rev().copied());
        }
        Ok(out)
    }

    pub fn canonical_pose(&self) -> Pose {
        Pose {
            frame: Frame::Canonical,
            locals: self.bones.iter().map(|(id, b)| (*id, b.local)).collect(),
        }
    }

    /// World transforms of every bone under `pose`.
    pub fn compose_world(&self, pose: &Pose) -> Result<WorldTransforms> {
        pose.check_covers(self)?;
        let mut world = BTreeMap::new();
        for id in self.traversal() {
            let local = &pose.locals[&id];
            let w = match self.bones[&id].parent {
                None => *local,
                Some(p) => world[&p] * *local,
            };
            world.insert(id, w);
        }
        Ok(world)
    }

    pub fn canonical_world(&self) -> WorldTransforms {
        self.compose_world(&self.canonical_pose())
            .expect("canonical pose always covers its rig")
    }

    /// Appends one child per entry of `inits` under `parent`, returning the new
    /// rig and the fresh ids. Child locals are relative to the parent's frame.
    pub fn add_child_bones(&self, parent: BoneId, inits: &[BoneInit]) -> Result<(Rig, Vec<BoneId>)> {
        self.bone(parent)?;
        if inits.is_empty() {
            return Err(Error::InvalidRig("at least one child bone is required".into()));
        }
        let mut rig = self.clone();
        let mut ids = Vec::with_capacity(inits.len());
        for init in inits {
            let id = BoneId(rig.next_id);
            check_scale(id, &init.scale)?;
            check_local(id, &init.local)?;
            rig.next_id += 1;
            rig.bones.insert(
                id,
                Bone {
                    id,
                    local: init.local,
                    scale: init.scale,
                    parent: Some(parent),
                    children: Vec::new(),
                },
            );
            rig.bones.get_mut(&parent).unwrap().children.push(id);
            ids.push(id);
        }
        rig.recompute_depths();
        Ok((rig, ids))
    }

    /// Adds a new root bone.
    pub fn add_root(&self, init: BoneInit) -> Result<(Rig, BoneId)> {
        let id = BoneId(self.next_id);
        check_scale(id, &init.scale)?;
        check_local(id, &init.local)?;
        let mut rig = self.clone();
        rig.next_id += 1;
        rig.bones.insert(
            id,
            Bone {
                id,
                local: init.local,
                scale: init.scale,
                parent: None,
                children: Vec::new(),
            },
        );
        rig.roots.push(id);
        rig.recompute_depths();
        Ok((rig, id))
    }

    /// Removes `id` and every descendant. Removing the last remaining bones is an error.
    pub fn delete_subtree(&self, id: BoneId) -> Result<Rig> {
        let doomed: BTreeSet<BoneId> = self.subtree(id)?.into_iter().collect();
        if doomed.len() == self.bones.len() {
            return Err(Error::EmptyRig);
        }
        let mut rig = self.clone();
        for b in &doomed {
            rig.bones.remove(b);
        }
        match self.bones[&id].parent {
            Some(p) => rig.bones.get_mut(&p).unwrap().children.retain(|c| *c != id),
            None => rig.roots.retain(|r| *r != id),
        }
        rig.recompute_depths();
        Ok(rig)
    }

    /// Replaces the canonical local transform of one bone.
    pub fn with_local(&self, id: BoneId, local: RigidTransform) -> Result<Rig> {
        self.bone(id)?;
        check_local(id, &local)?;
        let mut rig = self.clone();
        rig.bones.get_mut(&id).unwrap().local = local;
        Ok(rig)
    }

    pub fn with_scale(&self, id: BoneId, scale: Vec3) -> Result<Rig> {
        self.bone(id)?;
        check_scale(id, &scale)?;
        let mut rig = self.clone();
        rig.bones.get_mut(&id).unwrap().scale = scale;
        Ok(rig)
    }

    /// Flat rig whose roots sit at this rig's leaf world transforms under `pose`,
    /// keeping leaf ids and scales. Skinning against it is identical.
    pub fn flattened(&self, pose: &Pose) -> Result<Rig> {
        let world = self.compose_world(pose)?;
        let specs = self
            .leaf_bones()
            .into_iter()
            .map(|id| (id, None, world[&id], self.bones[&id].scale))
            .collect();
        Rig::from_specs(specs, Some(self.next_id))
    }
}

impl Pose {
    pub fn new(frame: Frame, locals: BTreeMap<BoneId, RigidTransform>) -> Pose {
        Pose { frame, locals }
    }

    /// The pose must list exactly the rig's bones.
    pub fn check_covers(&self, rig: &Rig) -> Result<()> {
        for id in rig.ids() {
            if !self.locals.contains_key(&id) {
                return Err(Error::PoseCoverage(id));
            }
        }
        if self.locals.len() != rig.len() {
            let extra = self.locals.keys().find(|id| !rig.contains(**id)).copied();
            return Err(Error::PoseExtraBone(extra.unwrap_or(BoneId(u32::MAX))));
        }
        Ok(())
    }

    pub fn with_local(&self, id: BoneId, local: RigidTransform) -> Pose {
        let mut p = self.clone();
        p.locals.insert(id, local);
        p
    }

    pub fn with_frame(mut self, frame: Frame) -> Pose {
        self.frame = frame;
        self
    }

    /// Adapts the pose to an edited rig: drops removed bones and fills new ones
    /// with their canonical locals.
    pub fn reconciled(&self, rig: &Rig) -> Pose {
        let locals = rig
            .bones()
            .map(|b| (b.id, self.locals.get(&b.id).copied().unwrap_or(b.local)))
            .collect();
        Pose {
            frame: self.frame,
            locals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{exp_so3, Mat4};
    use std::f64::consts::FRAC_PI_2;

    fn tr(x: f64, y: f64, z: f64) -> RigidTransform {
        RigidTransform::from_translation(Vec3::new(x, y, z))
    }

    fn unit() -> Vec3 {
        Vec3::new(1.0, 1.0, 1.0)
    }

    #[test]
    fn root_world_equals_local() {
        let rig = Rig::single(tr(1.0, 0.0, 0.0), unit()).unwrap();
        let w = rig.canonical_world();
        assert_eq!(w[&BoneId(0)].translation, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn child_translations_add() {
        let rig = Rig::single(tr(1.0, 0.0, 0.0), unit()).unwrap();
        let (rig, ids) = rig
            .add_child_bones(BoneId(0), &[BoneInit::new(tr(0.0, 1.0, 0.0), unit())])
            .unwrap();
        let w = rig.canonical_world();
        assert_eq!(w[&ids[0]].translation, Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(rig.depth(ids[0]).unwrap(), 2);
    }

    #[test]
    fn parent_rotation_carries_child() {
        let parent = RigidTransform::new(exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2)), Vec3::zeros());
        let rig = Rig::single(parent, unit()).unwrap();
        let (rig, ids) = rig
            .add_child_bones(BoneId(0), &[BoneInit::new(tr(1.0, 0.0, 0.0), unit())])
            .unwrap();
        let w = rig.canonical_world()[&ids[0]];
        // Oracle: explicit homogeneous product.
        let oracle = parent.to_matrix() * tr(1.0, 0.0, 0.0).to_matrix();
        assert!((w.to_matrix() - oracle).abs().max() < 1e-15);
        assert!((w.translation - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        let _ = Mat4::identity();
    }

    #[test]
    fn missing_bone_in_pose() {
        let rig = Rig::from_roots(&[
            BoneInit::new(tr(0.0, 0.0, 0.0), unit()),
            BoneInit::new(tr(1.0, 0.0, 0.0), unit()),
        ])
        .unwrap();
        let mut pose = rig.canonical_pose();
        pose.locals.remove(&BoneId(1));
        assert!(matches!(rig.compose_world(&pose), Err(Error::PoseCoverage(BoneId(1)))));
    }

    #[test]
    fn add_children_replaces_leaf() {
        let rig = Rig::single(RigidTransform::identity(), unit()).unwrap();
        assert_eq!(rig.leaf_bones(), vec![BoneId(0)]);
        let init = BoneInit::new(tr(0.5, 0.0, 0.0), unit() * 0.5);
        let (grown, ids) = rig.add_child_bones(BoneId(0), &[init, init]).unwrap();
        assert_eq!(grown.leaf_bones(), ids);
        assert!(!grown.is_leaf(BoneId(0)));
        assert!(matches!(
            rig.add_child_bones(BoneId(9), &[init]),
            Err(Error::UnknownBone(BoneId(9)))
        ));
    }

    #[test]
    fn add_then_delete_restores() {
        let rig = Rig::single(RigidTransform::identity(), unit()).unwrap();
        let init = BoneInit::new(tr(0.5, 0.0, 0.0), unit() * 0.5);
        let (grown, ids) = rig.add_child_bones(BoneId(0), &[init, init]).unwrap();
        let back = grown.delete_subtree(ids[0]).unwrap().delete_subtree(ids[1]).unwrap();
        assert_eq!(back, rig);
        assert!(back.next_id() > rig.next_id(), "ids are not recycled");
    }

    #[test]
    fn five_roots_two_children_each() {
        let inits: Vec<_> = (0..5)
            .map(|i| BoneInit::new(tr(i as f64, 0.0, 0.0), unit()))
            .collect();
        let mut rig = Rig::from_roots(&inits).unwrap();
        for r in rig.roots().to_vec() {
            let child = BoneInit::new(tr(0.0, 0.2, 0.0), unit() * 0.5);
            rig = rig.add_child_bones(r, &[child, child]).unwrap().0;
        }
        assert_eq!(rig.leaf_bones().len(), 10);
        assert_eq!(rig.len(), 15);
        assert_eq!(rig.max_depth(), 2);
    }

    #[test]
    fn delete_subtree_counts() {
        let rig = Rig::single(RigidTransform::identity(), unit()).unwrap();
        let init = BoneInit::new(tr(0.5, 0.0, 0.0), unit() * 0.5);
        let (rig, mid) = rig.add_child_bones(BoneId(0), &[init, init]).unwrap();
        let (rig, _) = rig.add_child_bones(mid[0], &[init, init]).unwrap();
        assert_eq!(rig.len(), 5);
        let pruned = rig.delete_subtree(mid[0]).unwrap();
        assert_eq!(pruned.len(), 2);
        assert_eq!(pruned.bone(BoneId(0)).unwrap().children, vec![mid[1]]);
        let pruned = pruned.delete_subtree(mid[1]).unwrap();
        assert_eq!(pruned.leaf_bones(), vec![BoneId(0)]);
        assert!(matches!(pruned.delete_subtree(BoneId(0)), Err(Error::EmptyRig)));
    }

    #[test]
    fn delete_and_readd_keeps_leaf_worlds() {
        let rig = Rig::single(tr(0.3, 0.0, 0.0), unit()).unwrap();
        let a = BoneInit::new(RigidTransform::from_axis_angle(Vec3::new(0.2, 0.1, 0.0), Vec3::new(0.5, 0.0, 0.0)), unit() * 0.5);
        let b = BoneInit::new(tr(-0.5, 0.0, 0.1), unit() * 0.4);
        let (rig, ids) = rig.add_child_bones(BoneId(0), &[a, b]).unwrap();
        let before = rig.canonical_world();
        let removed = rig.delete_subtree(ids[0]).unwrap().delete_subtree(ids[1]).unwrap();
        let (again, new_ids) = removed.add_child_bones(BoneId(0), &[a, b]).unwrap();
        let after = again.canonical_world();
        for (old, new) in ids.iter().zip(&new_ids) {
            assert_eq!(before[old], after[new]);
        }
    }

    #[test]
    fn rejects_cycles_and_bad_scale() {
        let specs = vec![
            (BoneId(0), Some(BoneId(1)), RigidTransform::identity(), unit()),
            (BoneId(1), Some(BoneId(0)), RigidTransform::identity(), unit()),
            (BoneId(2), None, RigidTransform::identity(), unit()),
        ];
        assert!(matches!(Rig::from_specs(specs, None), Err(Error::Cycle(_))));
        let bad = Rig::single(RigidTransform::identity(), Vec3::new(1.0, 0.0, 1.0));
        assert!(matches!(bad, Err(Error::InvalidRig(_))));
    }

    #[test]
    fn reconcile_after_growth() {
        let rig = Rig::single(RigidTransform::identity(), unit()).unwrap();
        let pose = rig.canonical_pose().with_local(BoneId(0), tr(1.0, 2.0, 3.0));
        let (grown, ids) = rig
            .add_child_bones(BoneId(0), &[BoneInit::new(tr(0.1, 0.0, 0.0), unit())])
            .unwrap();
        let p2 = pose.reconciled(&grown);
        assert!(p2.check_covers(&grown).is_ok());
        assert_eq!(p2.locals[&BoneId(0)], tr(1.0, 2.0, 3.0));
        assert_eq!(p2.locals[&ids[0]], tr(0.1, 0.0, 0.0));
    }
}
