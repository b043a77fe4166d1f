//! Lloyd's algorithm with deterministic farthest-point seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transform::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec3>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// First center drawn uniformly by `seed`; each further center is the point
/// farthest from those chosen so far (lowest index on ties).
pub fn farthest_point_init(points: &[Vec3], k: usize, seed: u64) -> Result<Vec<Vec3>> {
    if points.len() < k || k == 0 {
        return Err(Error::TooFewPoints { needed: k.max(1), got: points.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..points.len());
    let mut centers = vec![points[first]];
    let mut nearest: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while centers.len() < k {
        let mut best = 0;
        for (i, d) in nearest.iter().enumerate() {
            if *d > nearest[best] {
                best = i;
            }
        }
        let c = points[best];
        centers.push(c);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    Ok(centers)
}

fn nearest_center(p: &Vec3, centers: &[Vec3]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Alternates nearest-center assignment and centroid updates until the
/// assignment stops changing or `max_iters` is reached. A cluster that loses
/// all its points keeps its previous center.
pub fn lloyd(points: &[Vec3], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let mut centers = farthest_point_init(points, k, seed)?;
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, a) in points.iter().zip(&assignment) {
            sums[*a] += p;
            counts[*a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeans { centers, assignment, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_blobs_recover_centroids() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let o = Vec3::new((i % 5) as f64 * 0.01, (i / 5) as f64 * 0.01, 0.0);
            pts.push(o + Vec3::new(-5.0, 0.0, 0.0));
            pts.push(o + Vec3::new(5.0, 1.0, 0.0));
        }
        let km = lloyd(&pts, 2, 3, 100).unwrap();
        let mut expect = [Vec3::zeros(); 2];
        for (i, p) in pts.iter().enumerate() {
            expect[i % 2] += p / 20.0;
        }
        let mut got = km.centers.clone();
        got.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert!((got[0] - expect[0]).norm() < 1e-12);
        assert!((got[1] - expect[1]).norm() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(lloyd(&[Vec3::zeros()], 2, 0, 10).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let pts: Vec<Vec3> = (0..100).map(|i| Vec3::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), 0.0)).collect();
        assert_eq!(lloyd(&pts, 4, 9, 50).unwrap(), lloyd(&pts, 4, 9, 50).unwrap());
    }
}
