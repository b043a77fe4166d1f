use super::TriMesh;
use crate::camera::Camera;

/// Binary silhouette of a mesh: 1 where a pixel center is covered by any
/// triangle in front of the camera. Row-major, `camera.width × camera.height`.
pub fn rasterize_silhouette(mesh: &TriMesh, camera: &Camera) -> Vec<f64> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut out = vec![0.0; w * h];
    for i in 0..mesh.triangles.len() {
        let tri = mesh.triangle(i);
        let Some(p) = tri
            .iter()
            .map(|v| camera.project(v))
            .collect::<Option<Vec<(f64, f64, f64)>>>()
        else {
            continue;
        };
        let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[1].1 - p[0].1) * (p[2].0 - p[0].0);
        if area == 0.0 {
            continue;
        }
        let min_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64) as usize;
        let min_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64) as usize;
        for y in min_y..max_y {
            for x in min_x..max_x {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let edge = |a: (f64, f64, f64), b: (f64, f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let e = [edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0])];
                let inside = if area > 0.0 {
                    e.iter().all(|v| *v >= 0.0)
                } else {
                    e.iter().all(|v| *v <= 0.0)
                };
                if inside {
                    out[y * w + x] = 1.0;
                }
            }
        }
    }
    out
}
