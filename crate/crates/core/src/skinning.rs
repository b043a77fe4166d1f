//! Skinning weights and linear blend skinning between frame and canonical space.
//!
//! Weights are a softmax over negative Mahalanobis distances to the leaf bones,
//! optionally offset per leaf by a delta table. Warps blend the per-leaf
//! homogeneous matrices `T_dst · T_src⁻¹` with weights evaluated at the input
//! point in the source pose. Reductions run over leaves in leaf order; batched
//! calls are data-parallel over points only, so results do not depend on the
//! thread count.

use rayon::prelude::*;

use crate::ellipsoid::{leaf_ellipsoids, Ellipsoid};
use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::rig::{BoneId, Pose, Rig};
use crate::transform::{Mat3, RigidTransform, Vec3};

/// Additive log-domain weight offsets, one row per vertex and one column per leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaWeights {
    n_leaves: usize,
    values: Vec<f64>,
}

impl DeltaWeights {
    pub fn zeros(n_vertices: usize, n_leaves: usize) -> Self {
        Self {
            n_leaves,
            values: vec![0.0; n_vertices * n_leaves],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_leaves = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_leaves) {
            return Err(Error::Dimension("ragged delta weight rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Malformed("delta weights must be finite".into()));
        }
        Ok(Self {
            n_leaves,
            values: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_leaves..(i + 1) * self.n_leaves]
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }
}

/// Shifted softmax of `-d_M + Δw` over `bones`, written into `out`.
pub fn weights_into(x: &Vec3, bones: &[Ellipsoid], delta: Option<&[f64]>, out: &mut [f64]) {
    debug_assert_eq!(out.len(), bones.len());
    let mut max_logit = f64::NEG_INFINITY;
    for (b, (e, o)) in bones.iter().zip(out.iter_mut()).enumerate() {
        let logit = -e.mahalanobis(x) + delta.map_or(0.0, |d| d[b]);
        *o = logit;
        max_logit = max_logit.max(logit);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max_logit).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Skinning weights of `x` over the leaves of `rig` posed by `pose`, in leaf order.
pub fn skinning_weights(x: &Vec3, rig: &Rig, pose: &Pose, delta: Option<&[f64]>) -> Result<Vec<f64>> {
    let bones: Vec<Ellipsoid> = leaf_ellipsoids(rig, pose)?.into_iter().map(|(_, e)| e).collect();
    if let Some(d) = delta {
        if d.len() != bones.len() {
            return Err(Error::Dimension(format!(
                "delta has {} entries for {} leaves",
                d.len(),
                bones.len()
            )));
        }
    }
    let mut w = vec![0.0; bones.len()];
    weights_into(x, &bones, delta, &mut w);
    Ok(w)
}

/// Weighted blend of rigid transforms as a 3×4 affine map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineBlend {
    pub linear: Mat3,
    pub offset: Vec3,
}

impl AffineBlend {
    pub fn blend(transforms: &[RigidTransform], weights: &[f64]) -> AffineBlend {
        let mut linear = Mat3::zeros();
        let mut offset = Vec3::zeros();
        for (t, w) in transforms.iter().zip(weights) {
            linear += t.rotation * *w;
            offset += t.translation * *w;
        }
        AffineBlend { linear, offset }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.linear * x + self.offset
    }
}

/// Precomputed warp from a source pose to a destination pose.
#[derive(Clone, Debug)]
pub struct LbsWarp {
    leaves: Vec<BoneId>,
    source_bones: Vec<Ellipsoid>,
    transforms: Vec<RigidTransform>,
}

impl LbsWarp {
    pub fn new(rig: &Rig, source: &Pose, destination: &Pose) -> Result<Self> {
        let src = rig.compose_world(source)?;
        let dst = rig.compose_world(destination)?;
        let leaves = rig.leaf_bones();
        let source_bones = leaves
            .iter()
            .map(|id| Ellipsoid::from_transform(&src[id], rig.bones[id].scale))
            .collect();
        let transforms = leaves.iter().map(|id| dst[id] * src[id].inverse()).collect();
        Ok(Self {
            leaves,
            source_bones,
            transforms,
        })
    }

    pub fn leaves(&self) -> &[BoneId] {
        &self.leaves
    }

    /// Per-leaf rigid maps from source to destination.
    pub fn transforms(&self) -> &[RigidTransform] {
        &self.transforms
    }

    pub fn weights(&self, x: &Vec3, delta: Option<&[f64]>) -> Vec<f64> {
        let mut w = vec![0.0; self.leaves.len()];
        weights_into(x, &self.source_bones, delta, &mut w);
        w
    }

    pub fn warp_point(&self, x: &Vec3, delta: Option<&[f64]>) -> Vec3 {
        let w = self.weights(x, delta);
        AffineBlend::blend(&self.transforms, &w).apply(x)
    }

    pub fn warp_points(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.par_iter().map(|p| self.warp_point(p, None)).collect()
    }
}

/// Maps a frame-space point into canonical space, weights taken in the frame pose.
pub fn backward_warp(x: &Vec3, rig: &Rig, pose_t: &Pose, pose_c: &Pose) -> Result<Vec3> {
    Ok(LbsWarp::new(rig, pose_t, pose_c)?.warp_point(x, None))
}

/// Maps a canonical point into frame space, weights taken in the canonical pose.
pub fn forward_warp(x_c: &Vec3, rig: &Rig, pose_c: &Pose, pose_t: &Pose) -> Result<Vec3> {
    Ok(LbsWarp::new(rig, pose_c, pose_t)?.warp_point(x_c, None))
}

/// Residual of a backward then forward warp.
pub fn cycle_error(x: &Vec3, rig: &Rig, pose_t: &Pose, pose_c: &Pose) -> Result<f64> {
    let xc = backward_warp(x, rig, pose_t, pose_c)?;
    let back = forward_warp(&xc, rig, pose_c, pose_t)?;
    Ok((back - x).norm())
}

/// Canonical mesh with per-vertex skinning weights against the rig's leaves,
/// computed once in the rig's canonical pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedSurface {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    leaves: Vec<BoneId>,
    weights: Vec<f64>,
}

impl SkinnedSurface {
    pub fn new(mesh: &TriMesh, rig: &Rig, delta: Option<&DeltaWeights>) -> Result<Self> {
        Self::build(mesh.vertices.clone(), mesh.triangles.clone(), rig, delta)
    }

    /// Skins a bare point set, such as surface samples of the canonical mesh.
    pub fn from_points(points: Vec<Vec3>, rig: &Rig, delta: Option<&DeltaWeights>) -> Result<Self> {
        Self::build(points, Vec::new(), rig, delta)
    }

    fn build(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, rig: &Rig, delta: Option<&DeltaWeights>) -> Result<Self> {
        let canonical = rig.canonical_pose();
        let bones: Vec<(BoneId, Ellipsoid)> = leaf_ellipsoids(rig, &canonical)?;
        let n_leaves = bones.len();
        if let Some(d) = delta {
            if d.n_leaves() != n_leaves || d.values.len() != vertices.len() * n_leaves {
                return Err(Error::Dimension("delta weight table does not match mesh and rig".into()));
            }
        }
        let ellipsoids: Vec<Ellipsoid> = bones.iter().map(|(_, e)| *e).collect();
        let rows: Vec<Vec<f64>> = vertices
            .par_iter()
            .enumerate()
            .map(|(i, v)| {
                let mut w = vec![0.0; n_leaves];
                weights_into(v, &ellipsoids, delta.map(|d| d.row(i)), &mut w);
                w
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            leaves: bones.into_iter().map(|(id, _)| id).collect(),
            weights: rows.concat(),
        })
    }

    pub fn leaves(&self) -> &[BoneId] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        let n = self.leaves.len();
        &self.weights[i * n..(i + 1) * n]
    }

    /// Index of the leaf with the largest cached weight at vertex `i` (lowest index on ties).
    pub fn dominant_leaf(&self, i: usize) -> usize {
        let row = self.weight_row(i);
        let mut best = 0;
        for (b, w) in row.iter().enumerate() {
            if *w > row[best] {
                best = b;
            }
        }
        best
    }

    /// Per-leaf canonical-to-frame maps `W_t · W_c⁻¹` for a pose of `rig`.
    pub fn leaf_transforms(&self, rig: &Rig, pose: &Pose) -> Result<Vec<RigidTransform>> {
        let wc = rig.canonical_world();
        let wt = rig.compose_world(pose)?;
        self.leaves
            .iter()
            .map(|id| match (wt.get(id), wc.get(id)) {
                (Some(t), Some(c)) => Ok(*t * c.inverse()),
                _ => Err(Error::UnknownBone(*id)),
            })
            .collect()
    }

    /// Forward-warps every vertex using cached weights. The rest pose returns
    /// the canonical vertices unchanged rather than blending identities.
    pub fn deform(&self, rig: &Rig, pose: &Pose) -> Result<Vec<Vec3>> {
        if rig.leaf_bones() != self.leaves {
            return Err(Error::Dimension("rig leaves differ from the skinned surface".into()));
        }
        let transforms = self.leaf_transforms(rig, pose)?;
        if rig.bones().all(|b| pose.locals.get(&b.id) == Some(&b.local)) {
            return Ok(self.vertices.clone());
        }
        Ok(self.deform_with(&transforms))
    }

    pub fn deform_with(&self, transforms: &[RigidTransform]) -> Vec<Vec3> {
        self.vertices
            .par_iter()
            .enumerate()
            .map(|(i, v)| AffineBlend::blend(transforms, self.weight_row(i)).apply(v))
            .collect()
    }

    pub fn to_mesh(&self, vertices: Vec<Vec3>) -> TriMesh {
        TriMesh {
            vertices,
            triangles: self.triangles.clone(),
            colors: None,
        }
    }
}
