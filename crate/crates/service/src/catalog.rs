//! Rigs available to new sessions.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use boneforge::geometry::{load_mesh, TriMesh};
use boneforge::synth::{make_scenario, ScenarioKind, SynthScenario};
use boneforge::{load_rig, Rig};
use serde::Serialize;

#[derive(Debug)]
pub struct RigEntry {
    pub id: String,
    pub rig: Rig,
    pub canonical: TriMesh,
    /// Retargeting targets, addressed as `frame:<index>`.
    pub frames: Vec<TriMesh>,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct RigSummary {
    pub id: String,
    pub bones: usize,
    pub leaves: usize,
    pub max_depth: usize,
    pub vertices: usize,
    pub frames: usize,
}

impl RigEntry {
    pub fn summary(&self) -> RigSummary {
        RigSummary {
            id: self.id.clone(),
            bones: self.rig.len(),
            leaves: self.rig.leaf_bones().len(),
            max_depth: self.rig.max_depth(),
            vertices: self.canonical.vertices.len(),
            frames: self.frames.len(),
        }
    }

    pub fn target(&self, target_ref: &str) -> Option<&TriMesh> {
        let idx: usize = target_ref.strip_prefix("frame:")?.parse().ok()?;
        self.frames.get(idx)
    }
}

#[derive(Debug, Default)]
pub struct Catalog {
    entries: BTreeMap<String, Arc<RigEntry>>,
}

impl Catalog {
    pub fn insert(&mut self, entry: RigEntry) {
        self.entries.insert(entry.id.clone(), Arc::new(entry));
    }

    pub fn get(&self, id: &str) -> Option<Arc<RigEntry>> {
        self.entries.get(id).cloned()
    }

    pub fn summaries(&self) -> Vec<RigSummary> {
        self.entries.values().map(|e| e.summary()).collect()
    }

    /// Synthetic scenarios with their ground-truth rigs and animated frames.
    pub fn builtin(seed: u64) -> boneforge::Result<Catalog> {
        let mut c = Catalog::default();
        for kind in [ScenarioKind::Chain(3), ScenarioKind::Chain(5), ScenarioKind::Quadruped, ScenarioKind::Dumbbell] {
            let spec = SynthScenario { skip_masks: true, ..SynthScenario::new(kind, 4, seed) };
            let data = make_scenario(&spec)?;
            c.insert(RigEntry {
                id: format!("synth-{kind}"),
                rig: data.rig,
                canonical: data.canonical,
                frames: data.frames,
            });
        }
        Ok(c)
    }

    /// Adds every subdirectory of `dir` holding `rig.json` and `canonical.ply`
    /// (the layout `boneforge synth` writes); `frames/*.ply` become targets.
    pub fn load_dir(&mut self, dir: &Path) -> boneforge::Result<usize> {
        let mut added = 0;
        let mut subdirs: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        subdirs.sort();
        for sub in subdirs {
            let (rig_path, mesh_path) = (sub.join("rig.json"), sub.join("canonical.ply"));
            if !rig_path.is_file() || !mesh_path.is_file() {
                continue;
            }
            let (rig, _) = load_rig(&rig_path)?;
            let canonical = load_mesh(&mesh_path)?;
            let mut frame_paths: Vec<_> = match std::fs::read_dir(sub.join("frames")) {
                Ok(rd) => rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "ply")).collect(),
                Err(_) => Vec::new(),
            };
            frame_paths.sort();
            let frames = frame_paths.iter().map(load_mesh).collect::<boneforge::Result<_>>()?;
            let id = sub.file_name().unwrap().to_string_lossy().into_owned();
            self.insert(RigEntry { id, rig, canonical, frames });
            added += 1;
        }
        Ok(added)
    }
}
