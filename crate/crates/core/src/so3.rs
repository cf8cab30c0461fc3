//! Lie-group numerics on SO(3).
//!
//! Rotations are stored as 3x3 matrices. Tangent vectors live in so(3),
//! identified with R³ through the axis-angle representation: the direction is
//! the rotation axis and the norm is the rotation angle in radians.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Threshold of the piecewise logarithm (radians).
pub const DEFAULT_LOG_EPS: f64 = 1e-7;

/// Orthonormality tolerance accepted without repair.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Drift beyond [`ORTHONORMAL_TOL`] but within this bound is repaired by
/// polar projection; anything larger is rejected.
pub const REPAIR_TOL: f64 = 1e-4;

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validate `m` as a rotation.
    ///
    /// Matrices drifting from SO(3) by less than [`REPAIR_TOL`] are projected
    /// back with a warning; larger deviations are a domain error.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::domain("rotation matrix has non-finite entries"));
        }
        let drift = orthonormality_drift(&m);
        if drift <= ORTHONORMAL_TOL {
            Ok(Rotation(m))
        } else if drift <= REPAIR_TOL {
            log::warn!("re-orthonormalizing rotation with drift {drift:.3e}");
            Ok(Rotation(polar_projection(&m)))
        } else {
            Err(Error::domain(format!(
                "matrix is not a rotation (orthonormality drift {drift:.3e})"
            )))
        }
    }

    /// Wrap a matrix known to be a rotation by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn about_axis(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_map(&TangentVector(axis * (angle / n)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotation angle in [0, π], from the trace.
    pub fn angle(&self) -> f64 {
        trace_angle(&self.0).0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Element of so(3) in axis-angle form.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector(pub Vector3<f64>);

impl TangentVector {
    pub fn zero() -> Self {
        TangentVector(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Unit rotation axis, or the zero vector for the identity.
    pub fn axis(&self) -> Vector3<f64> {
        let theta = self.angle();
        if theta > 0.0 {
            self.0 / theta
        } else {
            Vector3::zeros()
        }
    }
}

/// Skew-symmetric matrix of `v`, so that `hat(v) * x == v.cross(x)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axial vector of a skew-symmetric matrix.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn orthonormality_drift(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    let off = gram.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    off.max((m.determinant() - 1.0).abs())
}

/// Nearest rotation in the Frobenius sense.
pub(crate) fn polar_projection(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // flip the direction of the smallest singular value
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
        let mut d = Matrix3::identity();
        d[(idx, idx)] = -1.0;
        r = u * d * v_t;
    }
    r
}

/// (θ, sin θ) from the trace, via atan2.
fn trace_angle(m: &Matrix3<f64>) -> (f64, f64) {
    let tr = m.trace();
    let cos = 0.5 * (tr - 1.0);
    let sin = 0.5 * ((3.0 - tr).max(0.0) * (1.0 + tr).max(0.0)).sqrt();
    (sin.atan2(cos), sin)
}

/// Logarithmic map at the identity, stabilized near θ = 0 and θ = π.
pub fn log_map(r: &Rotation, eps: f64) -> TangentVector {
    let m = &r.0;
    let (theta, _) = trace_angle(m);
    let skew = vee(&(m - m.transpose()));
    if theta < eps {
        TangentVector::zero()
    } else if theta <= PI - eps {
        // ‖skew‖ = 2 sin θ; the trace-derived sine loses digits close to π
        TangentVector(skew * (theta / skew.norm()))
    } else {
        TangentVector(near_pi_axis(m, &skew) * theta)
    }
}

/// Logarithm of an arbitrary matrix, validating it first.
pub fn log_matrix(m: &Matrix3<f64>, eps: f64) -> Result<TangentVector> {
    Ok(log_map(&Rotation::new(*m)?, eps))
}

/// Rotation axis near the cut locus from S = R + Rᵀ + (1 - tr R) I = 2(1 - cos θ) n nᵀ.
fn near_pi_axis(m: &Matrix3<f64>, skew: &Vector3<f64>) -> Vector3<f64> {
    let tr = m.trace();
    let s = m + m.transpose() + Matrix3::identity() * (1.0 - tr);
    let denom = 3.0 - tr;
    // the largest diagonal entry fixes the pivot; off-diagonals carry the relative signs
    let k = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let nk = (s[(k, k)] / denom).max(0.0).sqrt();
    let mut n = Vector3::zeros();
    for j in 0..3 {
        n[j] = if j == k { nk } else { s[(k, j)] / (denom * nk) };
    }
    let norm = n.norm();
    if norm > 0.0 {
        n /= norm;
    }
    if skew.norm() > 1e-12 {
        if n.dot(skew) < 0.0 {
            n = -n;
        }
    } else if let Some(first) = n.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            n = -n;
        }
    }
    n
}

/// Exponential map at the identity (Rodrigues formula).
pub fn exp_map(w: &TangentVector) -> Rotation {
    let theta = w.0.norm();
    let k = hat(&w.0);
    let k2 = k * k;
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(Matrix3::identity() + k * a + k2 * b)
}

/// Geodesic distance ‖log(aᵀ b)‖ in radians.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    log_map(&(a.inverse() * *b), DEFAULT_LOG_EPS).angle()
}

/// How the intrinsic-mean iteration is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanInit {
    #[default]
    FirstSample,
    /// Polar projection of the arithmetic mean of the matrices.
    Chordal,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MeanSettings {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Gradient-norm threshold in radians.
    pub tol: f64,
    #[serde(default)]
    pub init: MeanInit,
}

impl Default for MeanSettings {
    /// 256 iterations, learning rate 0.1, threshold 1e-3.
    fn default() -> Self {
        MeanSettings {
            max_iters: 256,
            learning_rate: 0.1,
            tol: 1e-3,
            init: MeanInit::FirstSample,
        }
    }
}

impl MeanSettings {
    pub fn new(max_iters: usize, learning_rate: f64, tol: f64) -> Result<Self> {
        let s = MeanSettings {
            max_iters,
            learning_rate,
            tol,
            init: MeanInit::FirstSample,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::domain("max_iters must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning_rate must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::domain("tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanResult {
    pub mean: Rotation,
    pub converged: bool,
    /// Number of update steps taken.
    pub iters: usize,
    pub gradient_norm: f64,
}

/// Mean tangent direction from `base` to every sample.
fn riemannian_gradient(base: &Rotation, rs: &[Rotation]) -> Vector3<f64> {
    let inv = base.inverse();
    let sum = rs
        .iter()
        .fold(Vector3::zeros(), |acc, r| acc + log_map(&(inv * *r), DEFAULT_LOG_EPS).0);
    sum / rs.len() as f64
}

/// Intrinsic (Karcher) mean by Riemannian gradient descent with a fixed step.
///
/// Non-convergence is reported through [`MeanResult::converged`], not as an
/// error.
pub fn intrinsic_mean(rs: &[Rotation], settings: &MeanSettings) -> Result<MeanResult> {
    settings.validate()?;
    if rs.is_empty() {
        return Err(Error::domain("intrinsic mean of an empty sequence"));
    }
    let mut mean = match settings.init {
        MeanInit::FirstSample => rs[0],
        MeanInit::Chordal => {
            let sum = rs.iter().fold(Matrix3::zeros(), |acc, r| acc + r.0);
            Rotation(polar_projection(&(sum / rs.len() as f64)))
        }
    };
    let mut grad = riemannian_gradient(&mean, rs);
    let mut iters = 0;
    while iters < settings.max_iters && grad.norm() >= settings.tol {
        mean = mean * exp_map(&TangentVector(grad * settings.learning_rate));
        grad = riemannian_gradient(&mean, rs);
        iters += 1;
    }
    let gradient_norm = grad.norm();
    Ok(MeanResult {
        mean,
        converged: gradient_norm < settings.tol,
        iters,
        gradient_norm,
    })
}

/// Logarithm of every rotation in `rs`, parallel over chunks of `chunk` items.
pub fn log_map_batch(rs: &[Rotation], chunk: usize, eps: f64) -> Vec<TangentVector> {
    let chunk = chunk.max(1);
    let mut out = vec![TangentVector::zero(); rs.len()];
    out.par_chunks_mut(chunk)
        .zip(rs.par_chunks(chunk))
        .for_each(|(dst, src)| {
            for (d, r) in dst.iter_mut().zip(src) {
                *d = log_map(r, eps);
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quaternion (w, x, y, z) from a rotation matrix (Shepperd).
    fn quat_from_matrix(m: &Matrix3<f64>) -> [f64; 4] {
        let tr = m.trace();
        let cand = [tr, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let k = (0..4).max_by(|&a, &b| cand[a].total_cmp(&cand[b])).unwrap();
        let q = match k {
            0 => {
                let s = (1.0 + tr).sqrt() * 2.0;
                [0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
            }
            1 => {
                let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
                [(m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
            }
            2 => {
                let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
                [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s]
            }
            _ => {
                let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
                [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s]
            }
        };
        if q[0] < 0.0 {
            [-q[0], -q[1], -q[2], -q[3]]
        } else {
            q
        }
    }

    fn quat_log(m: &Matrix3<f64>) -> Vector3<f64> {
        let q = quat_from_matrix(m);
        let v = Vector3::new(q[1], q[2], q[3]);
        let s = v.norm();
        if s == 0.0 {
            return Vector3::zeros();
        }
        v * (2.0 * s.atan2(q[0]) / s)
    }

    fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        Rotation::about_axis(&axis, rng.random::<f64>() * max_angle)
    }

    #[test]
    fn hat_layout() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let h = hat(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(h, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(vee(&h), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(h.transpose(), -h);
    }

    #[test]
    fn log_of_identity_and_quarter_turn() {
        assert_eq!(log_map(&Rotation::identity(), DEFAULT_LOG_EPS), TangentVector::zero());
        let rz = Rotation::new(Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        let w = log_map(&rz, DEFAULT_LOG_EPS).0;
        assert!((w - Vector3::new(0.0, 0.0, PI / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn log_near_pi_uses_stabilized_branch() {
        let theta = PI - 1e-9;
        let r = Rotation::about_axis(&Vector3::x(), theta);
        let w = log_map(&r, DEFAULT_LOG_EPS).0;
        assert!((w - Vector3::new(theta, 0.0, 0.0)).norm() < 1e-6, "{w:?}");
        assert!((w - quat_log(r.matrix())).norm() < 1e-6);
    }

    #[test]
    fn near_pi_axis_keeps_relative_signs() {
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        let theta = PI - 1e-8;
        let r = Rotation::about_axis(&axis, theta);
        let w = log_map(&r, DEFAULT_LOG_EPS).0;
        assert!((w - axis * theta).norm() < 1e-6, "{w:?}");
    }

    #[test]
    fn exactly_pi_uses_deterministic_sign() {
        let r = Rotation::new(Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0)).unwrap();
        let w = log_map(&r, DEFAULT_LOG_EPS).0;
        assert!((w - Vector3::new(0.0, PI, 0.0)).norm() < 1e-12);
        let axis = Vector3::new(0.0, -1.0, 1.0).normalize();
        let m = Matrix3::identity() * -1.0 + axis * axis.transpose() * 2.0;
        let w = log_map(&Rotation::new(m).unwrap(), DEFAULT_LOG_EPS).0;
        // first nonzero component positive: y > 0
        assert!(w.y > 0.0 && (w.norm() - PI).abs() < 1e-12);
    }

    #[test]
    fn exp_of_quarter_turn() {
        let r = exp_map(&TangentVector(Vector3::new(0.0, 0.0, PI / 2.0)));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expected).norm() < 1e-15);
        assert_eq!(exp_map(&TangentVector::zero()), Rotation::identity());
    }

    #[test]
    fn exp_log_round_trip_many() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng, PI - 1e-6);
            let back = exp_map(&log_map(&r, DEFAULT_LOG_EPS));
            worst = worst.max((back.matrix() - r.matrix()).norm());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn rejects_and_repairs_non_rotations() {
        let mut m = *Rotation::about_axis(&Vector3::y(), 0.3).matrix();
        m[(0, 0)] += 1e-6;
        let r = Rotation::new(m).unwrap();
        assert!(orthonormality_drift(r.matrix()) < 1e-12);
        m[(0, 0)] += 1e-2;
        assert!(matches!(Rotation::new(m), Err(Error::Domain(_))));
        assert!(log_matrix(&Matrix3::identity().scale(2.0), DEFAULT_LOG_EPS).is_err());
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Rotation::new(reflection).is_err());
    }

    #[test]
    fn geodesic_distance_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let theta = rng.random::<f64>() * (PI - 1e-3) + 1e-4;
            let axis = Vector3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1);
            let r = Rotation::about_axis(&axis, theta);
            assert!((geodesic_distance(&Rotation::identity(), &r) - theta).abs() < 1e-9);
            assert_eq!(geodesic_distance(&r, &r), 0.0);
        }
        for _ in 0..1000 {
            let a = random_rotation(&mut rng, PI);
            let b = random_rotation(&mut rng, PI);
            let c = random_rotation(&mut rng, PI);
            let ab = geodesic_distance(&a, &b);
            assert!((ab - geodesic_distance(&b, &a)).abs() < 1e-9);
            assert!(ab <= geodesic_distance(&a, &c) + geodesic_distance(&c, &b) + 1e-9);
            assert!((0.0..=PI).contains(&ab));
        }
    }

    #[test]
    fn mean_of_identical_rotations() {
        let r = Rotation::about_axis(&Vector3::new(1.0, 1.0, 0.0), 0.7);
        let res = intrinsic_mean(&[r, r, r], &MeanSettings::default()).unwrap();
        assert!(res.converged && res.iters <= 1);
        assert!((res.mean.matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn mean_of_two_rotations_is_midpoint() {
        let rs = [
            Rotation::about_axis(&Vector3::z(), 0.2),
            Rotation::about_axis(&Vector3::z(), 0.6),
        ];
        let settings = MeanSettings::new(256, 1.0, 1e-12).unwrap();
        let res = intrinsic_mean(&rs, &settings).unwrap();
        let mid = Rotation::about_axis(&Vector3::z(), 0.4);
        assert!(geodesic_distance(&res.mean, &mid) < 1e-6);
    }

    #[test]
    fn mean_errors_and_flags() {
        assert!(intrinsic_mean(&[], &MeanSettings::default()).is_err());
        assert!(MeanSettings::new(0, 0.1, 1e-3).is_err());
        assert!(MeanSettings::new(10, 0.0, 1e-3).is_err());
        assert!(MeanSettings::new(10, 0.1, 0.0).is_err());
        let rs = [
            Rotation::about_axis(&Vector3::x(), 0.0),
            Rotation::about_axis(&Vector3::x(), 1.0),
        ];
        let res = intrinsic_mean(&rs, &MeanSettings::new(1, 0.01, 1e-9).unwrap()).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iters, 1);
    }

    #[test]
    fn chordal_init_converges_to_same_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rs: Vec<_> = (0..20).map(|_| random_rotation(&mut rng, 0.5)).collect();
        let mut s = MeanSettings::new(500, 1.0, 1e-12).unwrap();
        let a = intrinsic_mean(&rs, &s).unwrap();
        s.init = MeanInit::Chordal;
        let b = intrinsic_mean(&rs, &s).unwrap();
        assert!(geodesic_distance(&a.mean, &b.mean) < 1e-9);
    }

    #[test]
    fn batch_matches_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rs: Vec<_> = (0..257).map(|_| random_rotation(&mut rng, PI)).collect();
        let batch = log_map_batch(&rs, 16, DEFAULT_LOG_EPS);
        for (r, w) in rs.iter().zip(&batch) {
            assert_eq!(*w, log_map(r, DEFAULT_LOG_EPS));
        }
    }

    proptest! {
        #[test]
        fn vee_inverts_hat(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let v = Vector3::new(x, y, z);
            prop_assert_eq!(vee(&hat(&v)), v);
        }

        #[test]
        fn log_antisymmetric_and_left_invariant(
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in 0.1..1.0f64, theta in 1e-3..3.0f64,
            qx in -1.0..1.0f64, qy in 0.1..1.0f64, qz in -1.0..1.0f64, phi in 0.0..3.1f64,
        ) {
            let r = Rotation::about_axis(&Vector3::new(ax, ay, az), theta);
            let w = log_map(&r, DEFAULT_LOG_EPS).0;
            let w_inv = log_map(&r.inverse(), DEFAULT_LOG_EPS).0;
            prop_assert!((w + w_inv).norm() < 1e-9);
            prop_assert!((w.norm() - r.angle()).abs() < 1e-9);
            let q = Rotation::about_axis(&Vector3::new(qx, qy, qz), phi);
            let b = Rotation::about_axis(&Vector3::new(az, ax, ay), theta * 0.5);
            let d1 = geodesic_distance(&r, &b);
            let d2 = geodesic_distance(&(q * r), &(q * b));
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn mean_is_equivariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rs: Vec<_> = (0..8).map(|_| random_rotation(&mut rng, 0.8)).collect();
            let q = random_rotation(&mut rng, PI);
            let s = MeanSettings::new(256, 1.0, 1e-10).unwrap();
            let a = intrinsic_mean(&rs, &s).unwrap();
            let moved: Vec<_> = rs.iter().map(|r| q * *r).collect();
            let b = intrinsic_mean(&moved, &s).unwrap();
            prop_assert!(a.converged && b.converged);
            prop_assert!(geodesic_distance(&(q * a.mean), &b.mean) < 1e-6);
        }
    }
}
