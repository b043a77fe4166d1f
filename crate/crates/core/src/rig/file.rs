//! JSON rig/pose documents.
//!
//! ```json
//! { "version": 1,
//!   "bones": [{"id": 0, "parent": null, "rotation": [9 floats, row-major],
//!              "translation": [x, y, z], "scale": [sx, sy, sz]}],
//!   "poses": [{"frame": 0, "locals": {"0": {"rotation": [...], "translation": [...]}}}] }
//! ```
//!
//! Floats are written with shortest round-trip formatting so a save/load cycle
//! is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoneId, Frame, Pose, Rig};
use crate::error::{Error, Result};
use crate::transform::{rotation_from_row_major, rotation_to_row_major, RigidTransform, Vec3};

pub const RIG_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigDocument {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_id: Option<u32>,
    pub bones: Vec<BoneRecord>,
    #[serde(default)]
    pub poses: Vec<PoseRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneRecord {
    pub id: u32,
    pub parent: Option<u32>,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub frame: FrameRecord,
    pub locals: BTreeMap<String, LocalRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameRecord {
    Index(u32),
    Tag(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for LocalRecord {
    fn from(t: &RigidTransform) -> Self {
        LocalRecord {
            rotation: rotation_to_row_major(&t.rotation),
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl LocalRecord {
    fn to_transform(&self, what: &str) -> Result<RigidTransform> {
        let t = RigidTransform::new(
            rotation_from_row_major(&self.rotation),
            Vec3::from(self.translation),
        );
        if !t.is_rigid() {
            return Err(Error::InvalidRig(format!("{what}: rotation is not orthonormal")));
        }
        Ok(t)
    }
}

impl RigDocument {
    pub fn from_rig(rig: &Rig, poses: &[Pose]) -> RigDocument {
        let bones = rig
            .traversal()
            .into_iter()
            .map(|id| {
                let b = &rig.bones[&id];
                BoneRecord {
                    id: id.0,
                    parent: b.parent.map(|p| p.0),
                    rotation: rotation_to_row_major(&b.local.rotation),
                    translation: [b.local.translation.x, b.local.translation.y, b.local.translation.z],
                    scale: [b.scale.x, b.scale.y, b.scale.z],
                }
            })
            .collect();
        let poses = poses
            .iter()
            .map(|p| PoseRecord {
                frame: match p.frame {
                    Frame::Canonical => FrameRecord::Tag("canonical".into()),
                    Frame::Index(i) => FrameRecord::Index(i),
                },
                locals: p
                    .locals
                    .iter()
                    .map(|(id, t)| (id.0.to_string(), LocalRecord::from(t)))
                    .collect(),
            })
            .collect();
        RigDocument {
            version: RIG_FILE_VERSION,
            next_id: Some(rig.next_id),
            bones,
            poses,
        }
    }

    pub fn into_rig(self) -> Result<(Rig, Vec<Pose>)> {
        if self.version != RIG_FILE_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: RIG_FILE_VERSION,
            });
        }
        let mut specs = Vec::with_capacity(self.bones.len());
        for b in &self.bones {
            let local = LocalRecord {
                rotation: b.rotation,
                translation: b.translation,
            }
            .to_transform(&format!("bone {}", b.id))?;
            specs.push((BoneId(b.id), b.parent.map(BoneId), local, Vec3::from(b.scale)));
        }
        let rig = Rig::from_specs(specs, self.next_id)?;
        let mut poses = Vec::with_capacity(self.poses.len());
        for (i, p) in self.poses.iter().enumerate() {
            let frame = match &p.frame {
                FrameRecord::Index(f) => Frame::Index(*f),
                FrameRecord::Tag(t) if t == "canonical" => Frame::Canonical,
                FrameRecord::Tag(t) => {
                    return Err(Error::Malformed(format!("pose {i}: unknown frame tag {t:?}")))
                }
            };
            let mut locals = BTreeMap::new();
            for (key, rec) in &p.locals {
                let id: u32 = key
                    .parse()
                    .map_err(|_| Error::Malformed(format!("pose {i}: bad bone key {key:?}")))?;
                locals.insert(BoneId(id), rec.to_transform(&format!("pose {i} bone {id}"))?);
            }
            let pose = Pose { frame, locals };
            pose.check_covers(&rig)?;
            poses.push(pose);
        }
        Ok((rig, poses))
    }
}

/// Parses a rig document from text, checking the schema version before the body.
pub fn parse_rig(text: &str) -> Result<(Rig, Vec<Pose>)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Malformed("missing integer field `version`".into()))?;
    if version != RIG_FILE_VERSION as u64 {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: RIG_FILE_VERSION,
        });
    }
    let doc: RigDocument =
        serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
    doc.into_rig()
}

pub fn write_rig(rig: &Rig, poses: &[Pose]) -> String {
    let doc = RigDocument::from_rig(rig, poses);
    let mut s = serde_json::to_string_pretty(&doc).expect("rig documents contain only finite floats");
    s.push('\n');
    s
}

pub fn save_rig(path: impl AsRef<Path>, rig: &Rig, poses: &[Pose]) -> Result<()> {
    std::fs::write(path, write_rig(rig, poses))?;
    Ok(())
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<(Rig, Vec<Pose>)> {
    parse_rig(&std::fs::read_to_string(path)?)
}
