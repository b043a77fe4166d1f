//! Meshes, point clouds, file formats, spatial indexing and shape metrics.

mod icp;
mod kdtree;
mod mesh;
mod metrics;
pub mod obj;
pub mod ply;
mod raster;
mod sample;

pub use icp::{icp_align, umeyama, IcpConfig, IcpResult, Similarity};
pub use kdtree::KdTree;
pub use mesh::{Aabb, PointCloud, TriMesh};
pub use metrics::{
    chamfer, evaluate, f_score, f_score_at, f_score_threshold, MetricRecord, DEFAULT_REPORT_FACTOR, F_SCORE_FRACTION,
};
pub use raster::rasterize_silhouette;
pub use sample::sample_surface;

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyAscii,
    PlyBinary,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<MeshFormat> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            Some(e) if e == "ply" => Ok(MeshFormat::PlyBinary),
            _ => Err(Error::Malformed(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriMesh> {
    match format {
        MeshFormat::Obj => obj::parse_obj(bytes),
        MeshFormat::PlyAscii | MeshFormat::PlyBinary => ply::parse_ply(bytes),
    }
}

pub fn encode_mesh(mesh: &TriMesh, format: MeshFormat) -> Vec<u8> {
    match format {
        MeshFormat::Obj => obj::write_obj(mesh).into_bytes(),
        MeshFormat::PlyAscii => ply::write_ply_ascii(mesh).into_bytes(),
        MeshFormat::PlyBinary => ply::write_ply_binary(mesh),
    }
}

/// Loads an OBJ or PLY mesh; the PLY encoding is read from its header.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    parse_mesh(&std::fs::read(path)?, format)
}

/// Saves by extension; `.ply` is written as binary little-endian.
pub fn save_mesh(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    let format = MeshFormat::from_path(path)?;
    std::fs::write(path, encode_mesh(mesh, format))?;
    Ok(())
}
