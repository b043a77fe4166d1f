use crate::error::{Error, Result};
use crate::transform::{RigidTransform, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Aabb {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Aabb {
        let mut b = Aabb::empty();
        for p in points {
            b.include(p);
        }
        b
    }

    pub fn include(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.extent().norm()
        }
    }

    pub fn longest_edge(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.extent().max()
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    /// Slab test; returns the parameter interval of the ray inside the box.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<TriMesh> {
        let m = TriMesh {
            vertices,
            triangles,
            colors: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Malformed(format!("vertex {i} has a non-finite coordinate")));
        }
        let n = self.vertices.len() as u64;
        if let Some(i) = self
            .triangles
            .iter()
            .position(|t| t.iter().any(|&k| u64::from(k) >= n))
        {
            return Err(Error::Malformed(format!("triangle {i} references a missing vertex")));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.vertices.len() {
                return Err(Error::Malformed("color count differs from vertex count".into()));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }

    /// Concatenates meshes, re-indexing triangles.
    pub fn merge(parts: &[TriMesh]) -> TriMesh {
        let mut out = TriMesh::default();
        for p in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&p.vertices);
            out.triangles
                .extend(p.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        out
    }

    pub fn to_point_cloud(&self) -> PointCloud {
        PointCloud::new(self.vertices.clone())
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> PointCloud {
        PointCloud {
            points,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.points)
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| t.rotation * v).collect()),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len().max(1) as f64
    }
}
