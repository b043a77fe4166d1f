//! Wire types. Every JSON message carries `"v": 1`.
//!
//! Client → server (WebSocket text frames), tagged by `type`:
//! `set_bone_local {bone_id, rotation[9], translation[3]}`, `add_children {parent_id, k}`,
//! `delete_subtree {bone_id}`, `retarget_start {target_ref, steps, samples?}`,
//! `retarget_cancel`, `undo`, `redo`.
//!
//! Server → client: `state_delta`, `mesh_update`, `retarget_progress`,
//! `retarget_done`, `error {code, message}`. A binary `mesh_update` envelope is
//! followed by one binary frame: `u32` vertex count then `3 × count` `f32`, little-endian.

use std::collections::BTreeMap;

use boneforge::transform::{is_rotation, rotation_from_row_major, rotation_to_row_major};
use boneforge::{Pose, RigidTransform, Vec3};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        Self {
            rotation: rotation_to_row_major(&t.rotation),
            translation: t.translation.into(),
        }
    }
}

impl TransformRecord {
    /// Rejects non-finite values and rotations that are not proper orthonormal.
    pub fn to_transform(&self) -> Result<RigidTransform, String> {
        if self.rotation.iter().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err("transform has non-finite entries".into());
        }
        let r = rotation_from_row_major(&self.rotation);
        if !is_rotation(&r) {
            return Err("rotation is not a proper orthonormal matrix".into());
        }
        Ok(RigidTransform::new(r, Vec3::from(self.translation)))
    }
}

/// Bone locals keyed by the decimal bone id.
pub fn pose_record(pose: &Pose) -> BTreeMap<String, TransformRecord> {
    pose.locals.iter().map(|(id, t)| (id.0.to_string(), t.into())).collect()
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(flatten)]
    pub message: ClientMessage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetBoneLocal {
        bone_id: u32,
        rotation: [f64; 9],
        translation: [f64; 3],
    },
    AddChildren {
        parent_id: u32,
        k: usize,
    },
    DeleteSubtree {
        bone_id: u32,
    },
    RetargetStart {
        /// `frame:<index>` into the rig's catalog frames.
        target_ref: String,
        steps: usize,
        #[serde(default)]
        samples: Option<usize>,
    },
    RetargetCancel,
    Undo,
    Redo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneView {
    pub id: u32,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    pub depth: usize,
    pub scale: [f64; 3],
    /// Canonical local transform.
    pub rest: TransformRecord,
    /// Local transform in the current pose.
    pub local: TransformRecord,
    pub world: TransformRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    StateDelta {
        revision: u64,
        /// Bones added or whose world transform changed, with their new state.
        changed: Vec<BoneView>,
        removed: Vec<u32>,
        undo_depth: usize,
        redo_depth: usize,
    },
    MeshUpdate {
        revision: u64,
        vertex_count: usize,
        /// `binary` when a binary frame follows, `json` when `vertices` is inline.
        encoding: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vertices: Option<Vec<[f64; 3]>>,
    },
    RetargetProgress {
        step: usize,
        cd: f64,
        loss: f64,
    },
    RetargetDone {
        stop: String,
        steps: usize,
        final_cd: f64,
        pose: BTreeMap<String, TransformRecord>,
    },
    Error {
        code: String,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Tagged<T> {
    v: u32,
    #[serde(flatten)]
    inner: T,
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.into(), message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Tagged { v: PROTOCOL_VERSION, inner: self }).expect("messages hold finite floats")
    }

    pub fn from_json(text: &str) -> serde_json::Result<(u32, ServerMessage)> {
        let t: Tagged<ServerMessage> = serde_json::from_str(text)?;
        Ok((t.v, t.inner))
    }
}

/// Parses a client frame, checking the version.
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ServerMessage::error("bad_message", e.to_string()))?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(ServerMessage::error("unsupported_version", format!("version {v} is not supported"))),
        None => return Err(ServerMessage::error("bad_message", "missing protocol version field v")),
    }
    let env: Envelope = serde_json::from_value(value).map_err(|e| ServerMessage::error("bad_message", e.to_string()))?;
    Ok(env.message)
}

/// `u32` count followed by `f32` coordinates, little-endian.
pub fn encode_vertices(vertices: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 * vertices.len());
    out.extend_from_slice(&(vertices.len() as u32).to_le_bytes());
    for v in vertices {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_vertices(bytes: &[u8]) -> Result<Vec<[f32; 3]>, String> {
    let n = u32::from_le_bytes(bytes.get(..4).ok_or("frame shorter than its header")?.try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() != n.checked_mul(12).ok_or("vertex count overflows")? {
        return Err(format!("expected {} bytes of vertices, got {}", n * 12, body.len()));
    }
    Ok(body
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().unwrap());
            [f(0), f(4), f(8)]
        })
        .collect())
}

/// Mesh body for `GET /sessions/{id}/mesh`: the vertex frame followed by a
/// `u32` triangle count and `3 × count` `u32` indices.
pub fn encode_mesh(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Vec<u8> {
    let mut out = encode_vertices(vertices);
    out.extend_from_slice(&(triangles.len() as u32).to_le_bytes());
    for t in triangles {
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}
