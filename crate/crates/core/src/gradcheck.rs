//! Central finite differences for checking analytic gradients.

use crate::ellipsoid::{Ellipsoid, EllipsoidGrad};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let hi = f(&probe);
            probe[i] = x[i] - h;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-8)
}

pub fn flatten_grads(grads: &[EllipsoidGrad]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.to_array()).collect()
}

/// Applies a flat increment (nine entries per ellipsoid, laid out as in
/// [`EllipsoidGrad::to_array`]) to each ellipsoid.
pub fn step_ellipsoids(bones: &[Ellipsoid], delta: &[f64]) -> Vec<Ellipsoid> {
    assert_eq!(delta.len(), 9 * bones.len());
    bones
        .iter()
        .zip(delta.chunks_exact(9))
        .map(|(b, d)| {
            b.stepped(&EllipsoidGrad {
                center: [d[0], d[1], d[2]].into(),
                rotation: [d[3], d[4], d[5]].into(),
                scale: [d[6], d[7], d[8]].into(),
            })
        })
        .collect()
}
