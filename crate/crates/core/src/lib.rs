//! Hierarchical ellipsoidal bone rigs: skinning, occupancy rendering,
//! fitting, retargeting and evaluation.

pub mod camera;
pub mod ellipsoid;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod mask;
pub mod occupancy;
pub mod optimizer;
pub mod rig;
pub mod skinning;
pub mod synth;
pub mod transform;

pub use camera::{orbit_cameras, Camera, CameraRecord};
pub use ellipsoid::{leaf_ellipsoids, mahalanobis, Ellipsoid, EllipsoidGrad};
pub use error::{Error, Result};
pub use mask::MaskImage;
pub use occupancy::{
    bone_mask_loss, bone_occ, coverage_loss, occ_density, overlap_loss, render_bone_mask, unified_occ,
    OccupancyConfig,
};
pub use rig::{load_rig, parse_rig, save_rig, write_rig, Bone, BoneId, BoneInit, Frame, Pose, Rig};
pub use skinning::{backward_warp, cycle_error, forward_warp, skinning_weights, DeltaWeights, LbsWarp, SkinnedSurface};
pub use transform::{RigidTransform, Mat3, Mat4, Vec3};
