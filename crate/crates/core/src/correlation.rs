//! Residue-pair correlation maps over a frame subset.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::LcsStack;
use crate::trajio::{BackboneTrajectory, Point};

/// Default reference axis for signed orientation angles.
pub const DCOM_AXIS: [f64; 3] = [1.0, 0.0, 0.0];

/// Averages below this magnitude count as zero in the DCOM angle.
pub const DCOM_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Dccm,
    /// Degrees.
    Dcom,
    DcomDiff,
}

/// n x n residue map; `None` marks undefined entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMap {
    pub n: usize,
    pub kind: CorrelationKind,
    pub cluster_id: Option<i64>,
    pub e_axis: Option<[f64; 3]>,
    pub n_frames: usize,
    #[serde(skip)]
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapMetadata {
    pub kind: CorrelationKind,
    pub cluster: Option<i64>,
    pub e_axis: Option<[f64; 3]>,
    pub n_residues: usize,
    pub n_frames: usize,
    pub n_undefined: usize,
}

impl CorrelationMap {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n + j]
    }

    pub fn with_cluster(mut self, id: i64) -> Self {
        self.cluster_id = Some(id);
        self
    }

    pub fn metadata(&self) -> MapMetadata {
        MapMetadata {
            kind: self.kind,
            cluster: self.cluster_id,
            e_axis: self.e_axis,
            n_residues: self.n,
            n_frames: self.n_frames,
            n_undefined: self.values.iter().filter(|v| v.is_none()).count(),
        }
    }

    /// Grid with one row per residue; undefined entries are `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    out.push(',');
                }
                match self.get(i, j) {
                    Some(v) => write!(out, "{v}").unwrap(),
                    None => out.push_str("nan"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, csv: impl AsRef<Path>, json: impl AsRef<Path>) -> Result<()> {
        let (csv, json) = (csv.as_ref(), json.as_ref());
        fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        let meta = serde_json::to_string_pretty(&self.metadata())?;
        fs::write(json, meta).map_err(|e| Error::io(json, e))
    }
}

fn check_frames(frames: &[usize], total: usize, min: usize) -> Result<()> {
    if frames.len() < min {
        return Err(Error::domain(format!("need at least {min} frames, got {}", frames.len())));
    }
    if let Some(&t) = frames.iter().find(|&&t| t >= total) {
        return Err(Error::domain(format!("frame {t} out of range ({total} frames)")));
    }
    Ok(())
}

fn pair_map<F>(n: usize, f: F) -> Vec<Option<f64>>
where
    F: Fn(usize, usize) -> Option<f64> + Sync,
{
    (0..n * n).into_par_iter().map(|k| f(k / n, k % n)).collect()
}

/// Normalized covariance of Cα displacements about the subset mean.
pub fn dccm(traj: &BackboneTrajectory, frames: &[usize]) -> Result<CorrelationMap> {
    check_frames(frames, traj.n_frames(), 2)?;
    let n = traj.n_residues();
    let m = frames.len() as f64;
    let positions: Vec<Vec<Point>> = frames.iter().map(|&t| traj.ca(t)).collect();
    let mean: Vec<Point> = (0..n)
        .map(|r| positions.iter().fold(Vector3::zeros(), |acc, p| acc + p[r]) / m)
        .collect();
    let disp: Vec<Vec<Point>> = positions
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, mu)| x - mu).collect())
        .collect();
    let cov = |i: usize, j: usize| disp.iter().map(|d| d[i].dot(&d[j])).sum::<f64>() / m;
    let var: Vec<f64> = (0..n).map(|i| cov(i, i)).collect();
    let zero = var.iter().filter(|&&v| !(v > 0.0)).count();
    if zero > 0 {
        log::warn!("{zero} residues have zero displacement variance; their DCCM entries are undefined");
    }
    let values = pair_map(n, |i, j| {
        if !(var[i] > 0.0 && var[j] > 0.0) {
            None
        } else if i == j {
            Some(1.0)
        } else {
            Some((cov(i, j) / (var[i] * var[j]).sqrt()).clamp(-1.0, 1.0))
        }
    });
    Ok(CorrelationMap {
        n,
        kind: CorrelationKind::Dccm,
        cluster_id: None,
        e_axis: None,
        n_frames: frames.len(),
        values,
    })
}

/// Signed angle (degrees) between time-averaged cross and dot products of
/// peptide-plane normals (second LCS column), measured about `e_axis`.
pub fn dcom(lcs: &LcsStack, frames: &[usize], e_axis: [f64; 3]) -> Result<CorrelationMap> {
    check_frames(frames, lcs.n_frames(), 1)?;
    let e = Vector3::from(e_axis);
    if !((e.norm() - 1.0).abs() < 1e-9) {
        return Err(Error::domain("DCOM reference axis must be a unit vector"));
    }
    let n = lcs.n_residues();
    let m = frames.len() as f64;
    let normals: Vec<Vec<Vector3<f64>>> = frames
        .iter()
        .map(|&t| lcs.frame(t).iter().map(|r| r.matrix().column(1).into_owned()).collect())
        .collect();
    let values = pair_map(n, |i, j| {
        let (mut cross, mut dot) = (0.0, 0.0);
        for nt in &normals {
            cross += nt[i].cross(&nt[j]).dot(&e);
            dot += nt[i].dot(&nt[j]);
        }
        let (cross, dot) = (cross / m, dot / m);
        (cross.abs() > DCOM_ZERO || dot.abs() > DCOM_ZERO).then(|| cross.atan2(dot).to_degrees())
    });
    Ok(CorrelationMap {
        n,
        kind: CorrelationKind::Dcom,
        cluster_id: None,
        e_axis: Some(e_axis),
        n_frames: frames.len(),
        values,
    })
}

/// `((b − a + 180) mod 360) − 180`, mapped into (−180, 180].
pub fn wrap_degrees(a: f64, b: f64) -> f64 {
    let d = (b - a + 180.0).rem_euclid(360.0) - 180.0;
    if d <= -180.0 {
        d + 360.0
    } else {
        d
    }
}

/// Elementwise wrapped difference `b − a` of two DCOM maps.
pub fn dcom_diff(a: &CorrelationMap, b: &CorrelationMap) -> Result<CorrelationMap> {
    if a.kind != CorrelationKind::Dcom || b.kind != CorrelationKind::Dcom {
        return Err(Error::domain("dcom_diff needs two DCOM maps"));
    }
    if a.n != b.n {
        return Err(Error::domain(format!("map sizes differ: {} vs {}", a.n, b.n)));
    }
    if a.e_axis != b.e_axis {
        return Err(Error::domain("DCOM maps use different reference axes"));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| Some(wrap_degrees((*x)?, (*y)?)))
        .collect();
    Ok(CorrelationMap {
        n: a.n,
        kind: CorrelationKind::DcomDiff,
        cluster_id: None,
        e_axis: a.e_axis,
        n_frames: a.n_frames.min(b.n_frames),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_lcs;
    use crate::so3::Rotation;
    use crate::trajio::Backbone;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj_from_ca(frames: &[Vec<Point>]) -> BackboneTrajectory {
        BackboneTrajectory::from_frames(
            frames
                .iter()
                .map(|f| f.iter().map(|&p| Backbone::new(p + Vector3::x(), p, p + Vector3::y())).collect())
                .collect(),
        )
        .unwrap()
    }

    fn rand_vec(rng: &mut impl Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn dccm_signs_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<Vec<Point>> = (0..50)
            .map(|_| {
                let d = rand_vec(&mut rng, 1.0);
                vec![Vector3::zeros() + d, Vector3::new(5.0, 0.0, 0.0) + d, Vector3::new(0.0, 5.0, 0.0) - d, rand_vec(&mut rng, 1.0) + Vector3::new(9.0, 9.0, 0.0)]
            })
            .collect();
        let all: Vec<usize> = (0..50).collect();
        let m = dccm(&traj_from_ca(&frames), &all).unwrap();
        assert!((m.get(0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.get(0, 2).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m.get(3, 3), Some(1.0));

        let frames: Vec<Vec<Point>> = (0..100).map(|_| (0..5).map(|_| rand_vec(&mut rng, 3.0)).collect()).collect();
        let traj = traj_from_ca(&frames);
        let subset: Vec<usize> = (0..100).collect();
        let m = dccm(&traj, &subset).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mi: Point = frames.iter().map(|f| f[i]).sum::<Point>() / 100.0;
                let mj: Point = frames.iter().map(|f| f[j]).sum::<Point>() / 100.0;
                let (mut c, mut vi, mut vj) = (0.0, 0.0, 0.0);
                for f in &frames {
                    c += (f[i] - mi).dot(&(f[j] - mj));
                    vi += (f[i] - mi).norm_squared();
                    vj += (f[j] - mj).norm_squared();
                }
                assert!((m.get(i, j).unwrap() - c / (vi * vj).sqrt()).abs() < 1e-10);
                assert!((m.get(i, j).unwrap() - m.get(j, i).unwrap()).abs() < 1e-15);
            }
        }
        let scaled: Vec<Vec<Point>> = frames.iter().map(|f| f.iter().map(|p| p * 3.5).collect()).collect();
        let m2 = dccm(&traj_from_ca(&scaled), &subset).unwrap();
        for (a, b) in m.values.iter().zip(&m2.values) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn dccm_zero_variance_is_undefined() {
        let frames = vec![vec![Vector3::zeros(), Vector3::x() * 4.0]; 3];
        let mut frames = frames;
        frames[1][1].y = 1.0;
        let m = dccm(&traj_from_ca(&frames), &[0, 1, 2]).unwrap();
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(0, 0), None);
        assert_eq!(m.get(1, 1), Some(1.0));
        assert!(m.to_csv().starts_with("nan,nan\nnan,1\n"));
        assert!(dccm(&traj_from_ca(&frames), &[0]).is_err());
        assert!(dccm(&traj_from_ca(&frames), &[0, 7]).is_err());
    }

    /// Residue whose LCS second column (plane normal) equals `normal`.
    fn residue_with_normal(normal: Vector3<f64>, at: Point) -> Backbone {
        let u = normal.cross(&Vector3::new(0.3, 0.5, 0.7)).normalize();
        let v = u.cross(&normal);
        let w = (u * 0.3 - v).normalize();
        Backbone::new(at + u * 1.46, at, at + w * 1.52)
    }

    #[test]
    fn dcom_examples() {
        let x = Vector3::x();
        let y = Vector3::y();
        let z = Vector3::z();
        let frame = vec![
            residue_with_normal(x, Vector3::zeros()),
            residue_with_normal(y, Vector3::x() * 4.0),
            residue_with_normal(z, Vector3::y() * 4.0),
        ];
        let lcs = build_lcs(&BackboneTrajectory::from_frames(vec![frame.clone(), frame]).unwrap()).unwrap();
        for r in 0..3 {
            let got = lcs.get(0, r).matrix().column(1).into_owned();
            assert!((got - [x, y, z][r]).norm() < 1e-12);
        }
        let m = dcom(&lcs, &[0, 1], DCOM_AXIS).unwrap();
        assert_eq!(m.get(0, 0), Some(0.0));
        assert_eq!(m.get(0, 1), None);
        assert!((m.get(1, 2).unwrap() - 90.0).abs() < 1e-12);
        assert!((m.get(2, 1).unwrap() + 90.0).abs() < 1e-12);
        assert!(dcom(&lcs, &[0], [2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dcom_global_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames: Vec<Vec<Backbone>> = (0..20)
            .map(|_| {
                (0..6)
                    .map(|r| residue_with_normal(rand_vec(&mut rng, 1.0).normalize(), Vector3::x() * (4.0 * r as f64)))
                    .collect()
            })
            .collect();
        let traj = BackboneTrajectory::from_frames(frames).unwrap();
        let q = Rotation::about_axis(&Vector3::new(0.2, -1.0, 0.4), 2.1);
        let moved = traj.transformed(q.matrix(), &Vector3::new(1.0, 2.0, 3.0));
        let e = q.apply(&Vector3::x());
        let subset: Vec<usize> = (0..20).collect();
        let a = dcom(&build_lcs(&traj).unwrap(), &subset, DCOM_AXIS).unwrap();
        let b = dcom(&build_lcs(&moved).unwrap(), &subset, [e.x, e.y, e.z]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_degrees(170.0, -170.0), 20.0);
        assert_eq!(wrap_degrees(-170.0, 170.0), -20.0);
        assert_eq!(wrap_degrees(10.0, 10.0), 0.0);
        assert_eq!(wrap_degrees(0.0, 180.0), 180.0);
        assert_eq!(wrap_degrees(180.0, 0.0), 180.0);
    }

    #[test]
    fn diff_maps() {
        let base = CorrelationMap {
            n: 1,
            kind: CorrelationKind::Dcom,
            cluster_id: None,
            e_axis: Some(DCOM_AXIS),
            n_frames: 1,
            values: vec![Some(170.0)],
        };
        let other = CorrelationMap { values: vec![Some(-170.0)], ..base.clone() };
        assert_eq!(dcom_diff(&base, &other).unwrap().values, vec![Some(20.0)]);
        assert_eq!(dcom_diff(&base, &base).unwrap().values, vec![Some(0.0)]);
        let tilted = CorrelationMap { e_axis: Some([0.0, 1.0, 0.0]), ..base.clone() };
        assert!(dcom_diff(&base, &tilted).is_err());
        let json = serde_json::to_string(&base.metadata()).unwrap();
        assert!(json.contains("\"kind\":\"dcom\""));
    }

    proptest! {
        #[test]
        fn wrap_range_and_antisymmetry(a in -180.0f64..=180.0, b in -180.0f64..=180.0) {
            let d = wrap_degrees(a, b);
            prop_assert!(d > -180.0 && d <= 180.0);
            if d.abs() < 180.0 - 1e-9 {
                prop_assert!((d + wrap_degrees(b, a)).abs() < 1e-9);
            }
        }
    }
}
