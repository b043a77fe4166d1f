use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PointCloud, TriMesh};
use crate::error::{Error, Result};

/// Area-weighted uniform samples on the mesh surface, deterministic per seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * total;
        let tri = cumulative.partition_point(|c| *c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(tri);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = u.sqrt();
        let p = a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v);
        points.push(p);
        let nrm = (b - a).cross(&(c - a));
        normals.push(nrm.try_normalize(0.0).unwrap_or_else(nalgebra::Vector3::z));
    }
    Ok(PointCloud {
        points,
        normals: Some(normals),
    })
}
