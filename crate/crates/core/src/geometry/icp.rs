//! Point-to-point ICP with closed-form similarity updates (rotation,
//! translation and uniform scale).

use nalgebra::SVD;

use super::{KdTree, PointCloud};
use crate::error::{Error, Result};
use crate::transform::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop once the residual improves by less than this (absolute, mean squared distance).
    pub tol: f64,
    /// Fraction of the worst correspondences discarded each iteration.
    pub trim_fraction: f64,
    pub estimate_scale: bool,
    /// Initial rotation guess; translation and scale start from centroid and spread matching.
    pub initial_rotation: Mat3,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-12,
            trim_fraction: 0.0,
            estimate_scale: true,
            initial_rotation: Mat3::identity(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub transform: Similarity,
    pub aligned: PointCloud,
    /// Mean squared correspondence distance before the first update and after each iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn check_nondegenerate(points: &[Vec3]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("ICP needs at least 3 points, got {}", points.len())));
    }
    let c: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let sv = cov.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    if !(sv[2] > 0.0) || sv[1] <= 1e-12 * sv[2] {
        return Err(Error::Degenerate("source points are coincident or collinear".into()));
    }
    Ok(())
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]`.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Similarity> {
    let n = src.len() as f64;
    let mu_s: Vec3 = src.iter().sum::<Vec3>() / n;
    let mu_d: Vec3 = dst.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let ds = s - mu_s;
        cov += (d - mu_d) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if !(var_s > 0.0) {
        return Err(Error::Degenerate("zero source variance".into()));
    }
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = if with_scale {
        (svd.singular_values.component_mul(&s.diagonal())).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Similarity {
        rotation,
        translation,
        scale,
    })
}

fn rms_radius(points: &[Vec3]) -> f64 {
    let c: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len() as f64).sqrt()
}

/// Correspondences from the current transform; keeps the closest `1 - trim` fraction.
fn correspond(src: &[Vec3], tree: &KdTree, t: &Similarity, trim: f64) -> (Vec<usize>, Vec<usize>, f64) {
    let mut pairs: Vec<(f64, usize, usize)> = src
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (j, d2) = tree.nearest(&t.apply(p)).expect("destination is nonempty");
            (d2, i, j)
        })
        .collect();
    let keep = ((1.0 - trim) * pairs.len() as f64).ceil().max(3.0) as usize;
    if keep < pairs.len() {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pairs.truncate(keep);
    }
    let residual = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    (
        pairs.iter().map(|p| p.1).collect(),
        pairs.iter().map(|p| p.2).collect(),
        residual,
    )
}

/// Aligns `src` onto `dst`. The residual sequence is nonincreasing: each step
/// re-pairs by nearest neighbour and then solves the pairing exactly.
pub fn icp_align(src: &PointCloud, dst: &PointCloud, cfg: &IcpConfig) -> Result<IcpResult> {
    check_nondegenerate(&src.points)?;
    if dst.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let tree = KdTree::new(&dst.points);
    let scale = if cfg.estimate_scale {
        rms_radius(&dst.points) / rms_radius(&src.points)
    } else {
        1.0
    };
    let mut t = Similarity {
        rotation: cfg.initial_rotation,
        translation: Vec3::zeros(),
        scale,
    };
    t.translation = dst.centroid() - t.rotation * src.centroid() * t.scale;
    let (mut si, mut di, mut residual) = correspond(&src.points, &tree, &t, cfg.trim_fraction);
    let mut residuals = vec![residual];
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let s: Vec<Vec3> = si.iter().map(|&i| src.points[i]).collect();
        let d: Vec<Vec3> = di.iter().map(|&j| dst.points[j]).collect();
        let next = umeyama(&s, &d, cfg.estimate_scale)?;
        let (nsi, ndi, next_residual) = correspond(&src.points, &tree, &next, cfg.trim_fraction);
        iterations += 1;
        if next_residual > residual {
            // Rounding-level increase at convergence; keep the previous estimate.
            break;
        }
        let improvement = residual - next_residual;
        t = next;
        si = nsi;
        di = ndi;
        residual = next_residual;
        residuals.push(residual);
        if improvement <= cfg.tol {
            break;
        }
    }
    let aligned = PointCloud {
        points: src.points.iter().map(|p| t.apply(p)).collect(),
        normals: src
            .normals
            .as_ref()
            .map(|n| n.iter().map(|v| t.rotation * v).collect()),
    };
    Ok(IcpResult {
        transform: t,
        aligned,
        residuals,
        iterations,
    })
}
