//! Fixtures and independent oracles shared by the integration targets.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3, Vector3};
use orientfeat::trajio::{Backbone, BackboneTrajectory, Point, ReferenceStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng))
}

pub fn unit_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(v)
}

// ---------------------------------------------------------------------------
// Quaternion oracle, kept separate from the library's matrix formulas.

/// Unit quaternion (w, x, y, z) to rotation matrix.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn quat_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> [f64; 4] {
    let a = axis.normalize() * (angle / 2.0).sin();
    [(angle / 2.0).cos(), a.x, a.y, a.z]
}

pub fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    quat_to_matrix(quat_from_axis_angle(axis, angle))
}

/// Shepperd's method: pick the largest of the four squared components.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> [f64; 4] {
    let tr = m.trace();
    let cands = [tr, m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let k = (0..4).max_by(|&a, &b| cands[a].total_cmp(&cands[b])).unwrap();
    let q = match k {
        0 => {
            let s = 2.0 * (1.0 + tr).sqrt();
            [s / 4.0, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
        }
        1 => {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            [(m[(2, 1)] - m[(1, 2)]) / s, s / 4.0, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
        }
        2 => {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, s / 4.0, (m[(1, 2)] + m[(2, 1)]) / s]
        }
        _ => {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, s / 4.0]
        }
    };
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

/// Rotation vector from the quaternion half-angle form.
pub fn quat_log(m: &Matrix3<f64>) -> Vector3<f64> {
    let [w, x, y, z] = matrix_to_quat(m);
    let v = Vector3::new(x, y, z);
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    v * (2.0 * s.atan2(w) / s)
}

/// Uniform rotation (Shoemake).
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = [normal(rng), normal(rng), normal(rng), normal(rng)];
    quat_to_matrix(q)
}

/// Angle between two rotations via the quaternion inner product.
pub fn quat_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let qa = matrix_to_quat(a);
    let qb = matrix_to_quat(b);
    let dot: f64 = qa.iter().zip(&qb).map(|(x, y)| x * y).sum::<f64>().abs().min(1.0);
    2.0 * dot.acos()
}

// ---------------------------------------------------------------------------
// Synthetic backbones.

/// Helical chain with bond-like N and C offsets around each Cα.
pub fn helix(n: usize, origin: Vector3<f64>) -> Vec<Backbone> {
    let step = 100f64.to_radians();
    let half = 55f64.to_radians();
    (0..n)
        .map(|i| {
            let a = step * i as f64;
            let ca = origin + Vector3::new(2.3 * a.cos(), 2.3 * a.sin(), 1.5 * i as f64);
            let tangent = Vector3::new(-2.3 * step * a.sin(), 2.3 * step * a.cos(), 1.5).normalize();
            let radial = Vector3::new(a.cos(), a.sin(), 0.0);
            let n_dir = -tangent * half.cos() + radial * half.sin();
            let c_dir = tangent * half.cos() + radial * half.sin();
            Backbone::new(ca + n_dir * 1.46, ca, ca + c_dir * 1.52)
        })
        .collect()
}

/// Rotate N and C of one residue about its Cα.
pub fn twist(b: &Backbone, rot: &Matrix3<f64>) -> Backbone {
    Backbone::new(b.ca + rot * (b.n - b.ca), b.ca, b.ca + rot * (b.c - b.ca))
}

pub fn rigid(b: &Backbone, rot: &Matrix3<f64>, shift: &Vector3<f64>) -> Backbone {
    Backbone::new(rot * b.n + shift, rot * b.ca + shift, rot * b.c + shift)
}

/// Helix whose residues wobble independently from frame to frame.
pub fn wobbling_trajectory(frames: usize, residues: usize, wobble: f64, seed: u64) -> BackboneTrajectory {
    let mut rng = rng(seed);
    let base = helix(residues, Vector3::zeros());
    let out: Vec<Vec<Backbone>> = (0..frames)
        .map(|_| {
            base.iter()
                .map(|b| {
                    let rot = axis_angle_matrix(&unit_axis(&mut rng), wobble * normal(&mut rng));
                    let shift = normal3(&mut rng) * (0.3 * wobble);
                    let t = twist(b, &rot);
                    Backbone::new(t.n + shift, t.ca + shift, t.c + shift)
                })
                .collect()
        })
        .collect();
    BackboneTrajectory::from_frames(out).unwrap()
}

pub fn constant_trajectory(frames: usize, residues: usize) -> BackboneTrajectory {
    let base = helix(residues, Vector3::zeros());
    BackboneTrajectory::from_frames(vec![base; frames]).unwrap()
}

/// Two-chain complex with a bound and an unbound state.
pub struct TwoStateComplex {
    pub crystal: ReferenceStructure,
    pub trajectory: BackboneTrajectory,
    pub bound: Vec<bool>,
    /// Residues (indices within their chain) that switch conformation on binding.
    pub switch_a: usize,
    pub switch_b: usize,
}

pub const COMPLEX_CHAIN_LEN: usize = 6;

/// Chain B packs against chain A in the crystal. In the first half of the
/// frames the complex is bound and one residue per chain is twisted; in the
/// second half B sits 25 Å further out along y.
pub fn two_state_complex(frames: usize, seed: u64) -> TwoStateComplex {
    let mut rng = rng(seed);
    let len = COMPLEX_CHAIN_LEN;
    let round3 = |b: Backbone| {
        let r = |p: Point| p.map(|v| (v * 1000.0).round() / 1000.0);
        Backbone::new(r(b.n), r(b.ca), r(b.c))
    };
    let mut residues: Vec<Backbone> = helix(len, Vector3::zeros()).into_iter().map(round3).collect();
    residues.extend(helix(len, Vector3::new(0.0, 7.0, 0.0)).into_iter().map(round3));
    let chain_ids: Vec<u8> = [vec![b'A'; len], vec![b'B'; len]].concat();
    let crystal = ReferenceStructure::from_backbone(residues.clone(), chain_ids.clone()).unwrap();

    let (switch_a, switch_b) = (2, 3);
    let kink = axis_angle_matrix(&Vector3::new(0.3, -0.2, 1.0), 70f64.to_radians());
    let mut bound = Vec::with_capacity(frames);
    let coords: Vec<Vec<Backbone>> = (0..frames)
        .map(|t| {
            let is_bound = t < frames / 2;
            bound.push(is_bound);
            let b_shift = normal3(&mut rng) * 0.4 + if is_bound { Vector3::zeros() } else { Vector3::new(0.0, 25.0, 0.0) };
            residues
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let wobble = axis_angle_matrix(&unit_axis(&mut rng), 0.05 * normal(&mut rng));
                    let mut r = twist(b, &wobble);
                    if is_bound && (i == switch_a || i == len + switch_b) {
                        r = twist(&r, &kink);
                    }
                    if i >= len {
                        r = rigid(&r, &Matrix3::identity(), &b_shift);
                    }
                    r
                })
                .collect()
        })
        .collect();
    let trajectory = BackboneTrajectory::from_frames(coords).unwrap().with_chain_ids(chain_ids).unwrap();
    TwoStateComplex { crystal, trajectory, bound, switch_a, switch_b }
}

pub fn pdb_text(reference: &ReferenceStructure) -> String {
    let mut out = String::new();
    let mut serial = 1;
    let mut seq = 0;
    let mut last_chain = 0u8;
    for (b, &chain) in reference.residues.iter().zip(&reference.chain_ids) {
        if chain != last_chain {
            seq = 0;
            last_chain = chain;
        }
        seq += 1;
        for (name, p) in [(" N", b.n), (" CA", b.ca), (" C", b.c)] {
            writeln!(
                out,
                "ATOM  {serial:>5} {name:<4} ALA {}{seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           {}",
                chain as char,
                p.x,
                p.y,
                p.z,
                &name[1..2]
            )
            .unwrap();
            serial += 1;
        }
    }
    out.push_str("END\n");
    out
}

// ---------------------------------------------------------------------------
// Time series.

pub fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let sd = (1.0 - rho * rho).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut v: f64 = normal(&mut rng);
    for _ in 0..n {
        x.push(v);
        v = rho * v + sd * normal(&mut rng);
    }
    x
}

/// Column matrix from a series plus `extra` white-noise columns.
pub fn series_matrix(x: &[f64], extra: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    DMatrix::from_fn(x.len(), 1 + extra, |i, j| if j == 0 { x[i] } else { normal(&mut rng) })
}

// ---------------------------------------------------------------------------
// Geometry oracles.

/// Optimal RMSD from the largest eigenvalue of Horn's 4x4 quaternion matrix.
pub fn horn_rmsd(a: &[Point], b: &[Point]) -> f64 {
    let n = a.len() as f64;
    let ca: Point = a.iter().sum::<Point>() / n;
    let cb: Point = b.iter().sum::<Point>() / n;
    let mut s = Matrix3::zeros();
    let mut g = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (p, q) = (p - ca, q - cb);
        s += p * q.transpose();
        g += p.norm_squared() + q.norm_squared();
    }
    let k = nalgebra::Matrix4::new(
        s[(0, 0)] + s[(1, 1)] + s[(2, 2)],
        s[(1, 2)] - s[(2, 1)],
        s[(2, 0)] - s[(0, 2)],
        s[(0, 1)] - s[(1, 0)],
        s[(1, 2)] - s[(2, 1)],
        s[(0, 0)] - s[(1, 1)] - s[(2, 2)],
        s[(0, 1)] + s[(1, 0)],
        s[(2, 0)] + s[(0, 2)],
        s[(2, 0)] - s[(0, 2)],
        s[(0, 1)] + s[(1, 0)],
        -s[(0, 0)] + s[(1, 1)] - s[(2, 2)],
        s[(1, 2)] + s[(2, 1)],
        s[(0, 1)] - s[(1, 0)],
        s[(2, 0)] + s[(0, 2)],
        s[(1, 2)] + s[(2, 1)],
        -s[(0, 0)] - s[(1, 1)] + s[(2, 2)],
    );
    let lmax = k.symmetric_eigen().eigenvalues.max();
    ((g - 2.0 * lmax).max(0.0) / n).sqrt()
}

/// Golden-section minimum of a unimodal function on [lo, hi].
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Uniform draw in [lo, hi).
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub const TWO_PI: f64 = 2.0 * PI;
