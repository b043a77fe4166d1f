//! Per-session editing state: the current (rig, pose) snapshot, undo/redo
//! stacks and the retargeting lock. All mutations go through [`Session`]
//! methods, which the server calls under the session's mutex.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use boneforge::optimizer::{grow_bone, GrowConfig};
use boneforge::{BoneId, Pose, Rig, RigidTransform, SkinnedSurface, Vec3};
use serde::{Deserialize, Serialize};

use crate::catalog::RigEntry;
use crate::protocol::{BoneView, ServerMessage, TransformRecord};

pub const DEFAULT_MAX_UNDO: usize = 256;
pub const MAX_CHILDREN: usize = 16;

/// One immutable (rig, pose) state with the skinning cache for its rig.
#[derive(Debug)]
pub struct Snapshot {
    pub rig: Rig,
    pub pose: Pose,
    pub skinned: Arc<SkinnedSurface>,
}

impl Snapshot {
    /// Deformed canonical vertices under the snapshot's pose.
    pub fn mesh(&self) -> Vec<Vec3> {
        self.skinned.deform(&self.rig, &self.pose).expect("snapshot poses cover their rig")
    }

    pub fn bone_views(&self) -> BTreeMap<u32, BoneView> {
        let world = self.rig.compose_world(&self.pose).expect("snapshot poses cover their rig");
        self.rig
            .bones()
            .map(|b| {
                let view = BoneView {
                    id: b.id.0,
                    parent: b.parent.map(|p| p.0),
                    children: b.children.iter().map(|c| c.0).collect(),
                    depth: self.rig.depth(b.id).unwrap_or(0),
                    scale: b.scale.into(),
                    rest: (&b.local).into(),
                    local: (&self.pose.locals[&b.id]).into(),
                    world: (&world[&b.id]).into(),
                };
                (b.id.0, view)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditError {
    pub code: &'static str,
    pub message: String,
}

impl EditError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn busy() -> Self {
        Self::new("busy", "a retarget is running on this session")
    }

    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::error(self.code, self.message.clone())
    }
}

fn lib_error(e: boneforge::Error) -> EditError {
    let code = match e {
        boneforge::Error::UnknownBone(_) => "unknown_bone",
        boneforge::Error::EmptyRig => "empty_rig",
        boneforge::Error::TooFewPoints { .. } => "too_few_points",
        boneforge::Error::InvalidRig(_) => "invalid_transform",
        _ => "invalid_request",
    };
    EditError::new(code, e.to_string())
}

/// Full session state as served by `GET /sessions/{id}/state`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub v: u32,
    pub session_id: String,
    pub rig_id: String,
    pub revision: u64,
    pub bones: Vec<BoneView>,
    pub roots: Vec<u32>,
    pub leaves: Vec<u32>,
    pub max_depth: usize,
    pub undo_depth: usize,
    pub redo_depth: usize,
    pub busy: bool,
    /// True once any edit has been accepted.
    pub dirty: bool,
}

pub struct Session {
    pub id: String,
    pub entry: Arc<RigEntry>,
    current: Arc<Snapshot>,
    undo: VecDeque<Arc<Snapshot>>,
    redo: Vec<Arc<Snapshot>>,
    max_undo: usize,
    revision: u64,
    dirty: bool,
    /// Cancellation flag of the running retarget.
    retarget: Option<Arc<AtomicBool>>,
    seed: u64,
}

impl Session {
    pub fn new(id: String, entry: Arc<RigEntry>, max_undo: usize, seed: u64) -> boneforge::Result<Session> {
        let skinned = Arc::new(SkinnedSurface::new(&entry.canonical, &entry.rig, None)?);
        let current = Arc::new(Snapshot { rig: entry.rig.clone(), pose: entry.rig.canonical_pose(), skinned });
        Ok(Session {
            id,
            entry,
            current,
            undo: VecDeque::new(),
            redo: Vec::new(),
            max_undo,
            revision: 0,
            dirty: false,
            retarget: None,
            seed,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.clone()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn busy(&self) -> bool {
        self.retarget.is_some()
    }

    pub fn undo_depth(&self) -> usize {
        self.undo.len()
    }

    pub fn redo_depth(&self) -> usize {
        self.redo.len()
    }

    pub fn state(&self) -> StateView {
        let s = &self.current;
        StateView {
            v: crate::protocol::PROTOCOL_VERSION,
            session_id: self.id.clone(),
            rig_id: self.entry.id.clone(),
            revision: self.revision,
            bones: s.bone_views().into_values().collect(),
            roots: s.rig.roots().iter().map(|b| b.0).collect(),
            leaves: s.rig.leaf_bones().iter().map(|b| b.0).collect(),
            max_depth: s.rig.max_depth(),
            undo_depth: self.undo.len(),
            redo_depth: self.redo.len(),
            busy: self.busy(),
            dirty: self.dirty,
        }
    }

    fn ensure_idle(&self) -> Result<(), EditError> {
        if self.busy() {
            Err(EditError::busy())
        } else {
            Ok(())
        }
    }

    /// Bones that are new or whose state differs between two snapshots, and removed ids.
    fn delta(&self, old: &Snapshot) -> ServerMessage {
        let before = old.bone_views();
        let after = self.current.bone_views();
        let changed = after
            .iter()
            .filter(|(id, v)| before.get(id) != Some(v))
            .map(|(_, v)| v.clone())
            .collect();
        let removed = before.keys().filter(|id| !after.contains_key(id)).copied().collect();
        ServerMessage::StateDelta {
            revision: self.revision,
            changed,
            removed,
            undo_depth: self.undo.len(),
            redo_depth: self.redo.len(),
        }
    }

    fn commit(&mut self, next: Snapshot) -> ServerMessage {
        let old = std::mem::replace(&mut self.current, Arc::new(next));
        self.undo.push_back(old.clone());
        while self.undo.len() > self.max_undo {
            self.undo.pop_front();
        }
        self.redo.clear();
        self.revision += 1;
        self.dirty = true;
        self.delta(&old)
    }

    fn restructure(&self, rig: Rig) -> Result<Snapshot, EditError> {
        let pose = self.current.pose.reconciled(&rig);
        let skinned = Arc::new(SkinnedSurface::new(&self.entry.canonical, &rig, None).map_err(lib_error)?);
        Ok(Snapshot { rig, pose, skinned })
    }

    pub fn set_bone_local(&mut self, bone: u32, local: &TransformRecord) -> Result<ServerMessage, EditError> {
        self.ensure_idle()?;
        let id = BoneId(bone);
        if !self.current.rig.contains(id) {
            return Err(EditError::new("unknown_bone", format!("no bone {bone}")));
        }
        let t = local.to_transform().map_err(|m| EditError::new("invalid_transform", m))?;
        let next = Snapshot {
            rig: self.current.rig.clone(),
            pose: self.current.pose.with_local(id, t),
            skinned: self.current.skinned.clone(),
        };
        Ok(self.commit(next))
    }

    /// Replaces the whole pose; it must list exactly the rig's bones.
    pub fn set_pose(&mut self, locals: &BTreeMap<u32, TransformRecord>) -> Result<ServerMessage, EditError> {
        self.ensure_idle()?;
        let mut map = BTreeMap::new();
        for (id, rec) in locals {
            let t: RigidTransform = rec.to_transform().map_err(|m| EditError::new("invalid_pose", format!("bone {id}: {m}")))?;
            map.insert(BoneId(*id), t);
        }
        let pose = Pose::new(self.current.pose.frame, map);
        pose.check_covers(&self.current.rig).map_err(|e| EditError::new("invalid_pose", e.to_string()))?;
        let next = Snapshot { rig: self.current.rig.clone(), pose, skinned: self.current.skinned.clone() };
        Ok(self.commit(next))
    }

    pub fn add_children(&mut self, parent: u32, k: usize) -> Result<ServerMessage, EditError> {
        self.ensure_idle()?;
        if !(1..=MAX_CHILDREN).contains(&k) {
            return Err(EditError::new("invalid_request", format!("k must be between 1 and {MAX_CHILDREN}")));
        }
        let cfg = GrowConfig { children: k, seed: self.seed, ..GrowConfig::default() };
        let (rig, _) = grow_bone(&self.current.rig, &self.current.skinned, BoneId(parent), &cfg).map_err(lib_error)?;
        let next = self.restructure(rig)?;
        Ok(self.commit(next))
    }

    pub fn delete_subtree(&mut self, bone: u32) -> Result<ServerMessage, EditError> {
        self.ensure_idle()?;
        let rig = self.current.rig.delete_subtree(BoneId(bone)).map_err(lib_error)?;
        let next = self.restructure(rig)?;
        Ok(self.commit(next))
    }

    pub fn undo(&mut self) -> Result<ServerMessage, EditError> {
        self.ensure_idle()?;
        let prev = self.undo.pop_back().ok_or_else(|| EditError::new("nothing_to_undo", "undo stack is empty"))?;
        let old = std::mem::replace(&mut self.current, prev);
        self.redo.push(old.clone());
        self.revision += 1;
        Ok(self.delta(&old))
    }

    pub fn redo(&mut self) -> Result<ServerMessage, EditError> {
        self.ensure_idle()?;
        let next = self.redo.pop().ok_or_else(|| EditError::new("nothing_to_redo", "redo stack is empty"))?;
        let old = std::mem::replace(&mut self.current, next);
        self.undo.push_back(old.clone());
        while self.undo.len() > self.max_undo {
            self.undo.pop_front();
        }
        self.revision += 1;
        Ok(self.delta(&old))
    }

    /// Marks the session busy and hands out the starting snapshot and a cancel flag.
    pub fn begin_retarget(&mut self) -> Result<(Arc<Snapshot>, Arc<AtomicBool>), EditError> {
        self.ensure_idle()?;
        let flag = Arc::new(AtomicBool::new(false));
        self.retarget = Some(flag.clone());
        Ok((self.current.clone(), flag))
    }

    pub fn cancel_retarget(&self) -> bool {
        match &self.retarget {
            Some(f) => {
                f.store(true, std::sync::atomic::Ordering::Relaxed);
                true
            }
            None => false,
        }
    }

    /// Ends a retarget; a result pose is committed as one undoable edit.
    pub fn finish_retarget(&mut self, pose: Option<Pose>) -> Option<ServerMessage> {
        self.retarget = None;
        let pose = pose?;
        let next = Snapshot { rig: self.current.rig.clone(), pose, skinned: self.current.skinned.clone() };
        Some(self.commit(next))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
