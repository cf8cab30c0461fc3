//! Pairwise structural and feature-space similarity.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::mpf::{MatrixKind, Mpf1};
use crate::trajio::{kabsch, BackboneTrajectory, Point};

pub const LDDT_R0: f64 = 15.0;
pub const LDDT_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseKind {
    Rmsd,
    Lddt,
    Gram,
    Rank1,
}

impl PairwiseKind {
    fn matrix_kind(self) -> MatrixKind {
        match self {
            PairwiseKind::Rmsd => MatrixKind::Rmsd,
            PairwiseKind::Lddt => MatrixKind::Lddt,
            PairwiseKind::Gram => MatrixKind::Gram,
            PairwiseKind::Rank1 => MatrixKind::Rank1,
        }
    }
}

/// Square n x n matrix over frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    pub n: usize,
    pub kind: PairwiseKind,
    pub values: Vec<f64>,
    /// Built by averaging the two directions of an asymmetric score.
    pub symmetrized: bool,
}

impl PairwiseMatrix {
    pub fn from_dmatrix(kind: PairwiseKind, m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::domain(format!("pairwise matrix must be square, got {:?}", m.shape())));
        }
        Ok(PairwiseMatrix {
            n: m.nrows(),
            kind,
            values: m.transpose().as_slice().to_vec(),
            symmetrized: false,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.values)
    }

    /// Strictly-lower-triangle entries, row by row.
    pub fn lower_triangle(&self) -> Vec<f64> {
        (0..self.n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    pub fn to_mpf(&self) -> Mpf1 {
        Mpf1 {
            rows: self.n,
            cols: self.n,
            kind: self.kind.matrix_kind(),
            data: self.values.clone(),
        }
    }

    pub fn from_mpf(m: Mpf1) -> Result<Self> {
        let kind = match m.kind {
            MatrixKind::Rmsd => PairwiseKind::Rmsd,
            MatrixKind::Lddt => PairwiseKind::Lddt,
            MatrixKind::Gram => PairwiseKind::Gram,
            MatrixKind::Rank1 => PairwiseKind::Rank1,
            other => return Err(Error::domain(format!("{other:?} payload is not a pairwise matrix"))),
        };
        if m.rows != m.cols {
            return Err(Error::domain("pairwise payload is not square"));
        }
        Ok(PairwiseMatrix {
            n: m.rows,
            kind,
            values: m.data,
            symmetrized: false,
        })
    }
}

/// Fill a symmetric matrix from `f(i, j)` evaluated for `i < j`.
fn symmetric_from<F>(n: usize, diagonal: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| f(i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut values = vec![diagonal; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + 1 + k;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(values)
}

/// Cα RMSD after optimal superposition for every pair of point sets.
pub fn pairwise_rmsd_points(frames: &[Vec<Point>]) -> Result<PairwiseMatrix> {
    if frames.len() < 2 {
        return Err(Error::domain("pairwise RMSD needs at least 2 frames"));
    }
    let values = symmetric_from(frames.len(), 0.0, |i, j| {
        kabsch(&frames[j], &frames[i])
            .map(|s| s.rmsd)
            .map_err(|e| e.in_frame(j))
    })?;
    Ok(PairwiseMatrix {
        n: frames.len(),
        kind: PairwiseKind::Rmsd,
        values,
        symmetrized: false,
    })
}

pub fn pairwise_rmsd(traj: &BackboneTrajectory) -> Result<PairwiseMatrix> {
    let frames: Vec<Vec<Point>> = (0..traj.n_frames()).map(|t| traj.ca(t)).collect();
    pairwise_rmsd_points(&frames)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LddtSettings {
    /// Contact cutoff on reference distances (Å).
    pub r0: f64,
    pub thresholds: Vec<f64>,
}

impl Default for LddtSettings {
    fn default() -> Self {
        LddtSettings {
            r0: LDDT_R0,
            thresholds: LDDT_THRESHOLDS.to_vec(),
        }
    }
}

/// Superposition-free lDDT of `target` against `reference` on Cα atoms.
/// `None` when the reference has no contacts within `r0`.
pub fn lddt(reference: &[Point], target: &[Point], settings: &LddtSettings) -> Result<Option<f64>> {
    if reference.len() != target.len() {
        return Err(Error::Structure(format!(
            "lDDT needs equal residue counts, got {} and {}",
            reference.len(),
            target.len()
        )));
    }
    if settings.thresholds.is_empty() {
        return Err(Error::domain("lDDT needs at least one threshold"));
    }
    let n = reference.len();
    let mut pairs = 0usize;
    let mut preserved = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let d_ref = (reference[i] - reference[j]).norm();
            if d_ref >= settings.r0 {
                continue;
            }
            let dev = ((target[i] - target[j]).norm() - d_ref).abs();
            pairs += 1;
            preserved += settings.thresholds.iter().filter(|&&t| dev < t).count();
        }
    }
    Ok((pairs > 0).then(|| preserved as f64 / (pairs * settings.thresholds.len()) as f64))
}

/// T x T lDDT with each entry the mean of both directions.
pub fn lddt_matrix(traj: &BackboneTrajectory, settings: &LddtSettings) -> Result<PairwiseMatrix> {
    let frames: Vec<Vec<Point>> = (0..traj.n_frames()).map(|t| traj.ca(t)).collect();
    let directed = |a: usize, b: usize| -> Result<f64> {
        lddt(&frames[a], &frames[b], settings)?
            .ok_or_else(|| Error::domain(format!("frame {a} has no lDDT contacts within {} Å", settings.r0)))
    };
    let values = symmetric_from(frames.len(), 1.0, |i, j| Ok(0.5 * (directed(i, j)? + directed(j, i)?)))?;
    if frames.len() == 1 {
        directed(0, 0)?;
    }
    Ok(PairwiseMatrix {
        n: frames.len(),
        kind: PairwiseKind::Lddt,
        values,
        symmetrized: true,
    })
}

/// G = F Fᵀ over raw feature rows.
pub fn gram_matrix(f: &DMatrix<f64>) -> PairwiseMatrix {
    let g = f * f.transpose();
    PairwiseMatrix {
        n: g.nrows(),
        kind: PairwiseKind::Gram,
        values: g.transpose().as_slice().to_vec(),
        symmetrized: false,
    }
}

pub fn gram(f: &FeatureMatrix) -> PairwiseMatrix {
    gram_matrix(&f.to_dmatrix())
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Rank1Decomposition {
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// n x k, unit columns.
    pub eigenvectors: DMatrix<f64>,
}

impl Rank1Decomposition {
    /// λ_k q_k q_kᵀ.
    pub fn component(&self, k: usize) -> PairwiseMatrix {
        let q = self.eigenvectors.column(k);
        let m = q * q.transpose() * self.eigenvalues[k];
        PairwiseMatrix::from_dmatrix(PairwiseKind::Rank1, &m).expect("square by construction")
    }

    /// Sum of the first `k` components.
    pub fn reconstruct(&self, k: usize) -> DMatrix<f64> {
        let n = self.eigenvectors.nrows();
        (0..k.min(self.eigenvalues.len())).fold(DMatrix::zeros(n, n), |acc, i| {
            let q = self.eigenvectors.column(i);
            acc + q * q.transpose() * self.eigenvalues[i]
        })
    }
}

pub fn rank1(g: &PairwiseMatrix, k: usize) -> Result<Rank1Decomposition> {
    let m = g.to_dmatrix();
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-9 * m.amax().max(1.0) {
        return Err(Error::domain(format!("rank-1 decomposition needs a symmetric matrix (asymmetry {asym:.3e})")));
    }
    let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..g.n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k.min(g.n));
    Ok(Rank1Decomposition {
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        eigenvectors: DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>()),
    })
}

/// Ranks starting at 1, ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation; `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("Spearman needs equal lengths, got {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Ok(None);
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

pub fn spearman_lower_triangle(a: &PairwiseMatrix, b: &PairwiseMatrix) -> Result<Option<f64>> {
    if a.n != b.n {
        return Err(Error::domain(format!("matrices have sizes {} and {}", a.n, b.n)));
    }
    spearman(&a.lower_triangle(), &b.lower_triangle())
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    pub kind_a: String,
    pub kind_b: String,
    pub rho: Option<f64>,
    pub n_pairs: usize,
}

impl CorrelationReport {
    pub fn new(kind_a: impl Into<String>, a: &PairwiseMatrix, kind_b: impl Into<String>, b: &PairwiseMatrix) -> Result<Self> {
        Ok(CorrelationReport {
            kind_a: kind_a.into(),
            kind_b: kind_b.into(),
            rho: spearman_lower_triangle(a, b)?,
            n_pairs: a.n * a.n.saturating_sub(1) / 2,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajio::Backbone;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Point> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
            .collect()
    }

    fn traj(frames: &[Vec<Point>]) -> BackboneTrajectory {
        BackboneTrajectory::from_frames(
            frames
                .iter()
                .map(|f| f.iter().map(|&p| Backbone::new(p + Vector3::x(), p, p + Vector3::y())).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rmsd_basic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 20, 8.0);
        let q = Rotation3::from_euler_angles(0.3, -1.0, 2.0);
        let b: Vec<Point> = a.iter().map(|p| q * p + Vector3::new(4.0, 0.0, -1.0)).collect();
        let m = pairwise_rmsd(&traj(&[a.clone(), a.clone(), b])).unwrap();
        assert!(m.values.iter().all(|&v| v.abs() < 1e-8));
        let c = cloud(&mut rng, 20, 8.0);
        let m = pairwise_rmsd(&traj(&[a.clone(), c])).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!(m.get(0, 1) > 0.0);
        assert!(pairwise_rmsd(&traj(&[a])).is_err());
    }

    #[test]
    fn lddt_hand_case() {
        let r = vec![Vector3::zeros(), Vector3::new(4.0, 0.0, 0.0), Vector3::new(8.0, 0.0, 0.0)];
        let mut t = r.clone();
        t[2].x = 11.0;
        let s = LddtSettings::default();
        assert_eq!(lddt(&r, &t, &s).unwrap(), Some(0.5));
        assert_eq!(lddt(&r, &r, &s).unwrap(), Some(1.0));
        let far = vec![Vector3::zeros(), Vector3::new(20.0, 0.0, 0.0)];
        assert_eq!(lddt(&far, &far, &s).unwrap(), None);
        assert!(lddt(&r, &t[..2], &s).is_err());
    }

    #[test]
    fn lddt_rigid_invariance_and_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 30, 10.0);
        let b: Vec<Point> = a.iter().map(|p| p + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0)).collect();
        let q = Rotation3::from_euler_angles(1.0, 0.2, -0.7);
        let bq: Vec<Point> = b.iter().map(|p| q * p + Vector3::new(-3.0, 2.0, 9.0)).collect();
        let s = LddtSettings::default();
        let x = lddt(&a, &b, &s).unwrap().unwrap();
        assert!((x - lddt(&a, &bq, &s).unwrap().unwrap()).abs() <= 1e-12);
        let m = lddt_matrix(&traj(&[a.clone(), b.clone()]), &s).unwrap();
        let y = lddt(&b, &a, &s).unwrap().unwrap();
        assert_eq!(m.get(0, 1), 0.5 * (x + y));
        assert_eq!(m.get(1, 1), 1.0);
        assert!(m.symmetrized);
    }

    #[test]
    fn gram_oracle_and_rank1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
        let g = gram_matrix(&f);
        for i in 0..12 {
            for j in 0..12 {
                let mut s = 0.0;
                for k in 0..5 {
                    s += f[(i, k)] * f[(j, k)];
                }
                assert!((g.get(i, j) - s).abs() < 1e-9);
            }
        }
        let d = rank1(&g, 12).unwrap();
        let gm = g.to_dmatrix();
        assert!((d.reconstruct(12) - &gm).norm() < 1e-6 * gm.norm());
        assert!(d.eigenvalues.iter().all(|&l| l >= -1e-6 * d.eigenvalues[0]));
        let residuals: Vec<f64> = (0..=12).map(|k| (d.reconstruct(k) - &gm).norm()).collect();
        assert!(residuals.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let c = d.component(0).to_dmatrix();
        assert_eq!(c.rank(1e-9 * c.norm()), 1);

        let eye = PairwiseMatrix::from_dmatrix(PairwiseKind::Gram, &DMatrix::identity(5, 5)).unwrap();
        let d = rank1(&eye, 1).unwrap();
        assert!((d.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(((d.reconstruct(1) - DMatrix::identity(5, 5)).norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gram_duplicate_rows() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 1.0]);
        let g = gram_matrix(&f);
        assert_eq!(g.get(0, 0), g.get(0, 1));
        assert_eq!(g.get(1, 1), g.get(0, 1));
        let orth = gram_matrix(&DMatrix::identity(3, 3));
        assert_eq!(orth.to_dmatrix(), DMatrix::identity(3, 3));
    }

    #[test]
    fn spearman_cases() {
        let a = PairwiseMatrix::from_dmatrix(PairwiseKind::Rmsd, &DMatrix::from_fn(6, 6, |i, j| (i as f64 - j as f64).abs() + (i * j) as f64 * 0.1)).unwrap();
        let mono = PairwiseMatrix { values: a.values.iter().map(|v| v.powi(3) + 2.0).collect(), ..a.clone() };
        let neg = PairwiseMatrix { values: a.values.iter().map(|v| -v).collect(), ..a.clone() };
        assert_eq!(spearman_lower_triangle(&a, &a).unwrap(), Some(1.0));
        assert!((spearman_lower_triangle(&a, &mono).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_lower_triangle(&a, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let flat = PairwiseMatrix { values: vec![1.0; 36], ..a.clone() };
        assert_eq!(spearman_lower_triangle(&a, &flat).unwrap(), None);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mpf_round_trip() {
        let g = gram_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let back = PairwiseMatrix::from_mpf(Mpf1::decode(&g.to_mpf().encode()).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn spearman_matches_naive_without_ties(v in prop::collection::vec(-100.0f64..100.0, 3..30), w in prop::collection::vec(-100.0f64..100.0, 30)) {
            let w = &w[..v.len()];
            let rho = spearman(&v, w).unwrap();
            // distinct values: 1 − 6Σd²/(n(n²−1))
            let mut vs = v.clone();
            vs.sort_by(f64::total_cmp);
            vs.dedup();
            let mut ws = w.to_vec();
            ws.sort_by(f64::total_cmp);
            ws.dedup();
            prop_assume!(vs.len() == v.len() && ws.len() == w.len());
            let rank = |x: &[f64], s: &[f64]| x.iter().map(|a| s.iter().position(|b| b == a).unwrap() as f64).collect::<Vec<_>>();
            let (rv, rw) = (rank(&v, &vs), rank(w, &ws));
            let n = v.len() as f64;
            let d2: f64 = rv.iter().zip(&rw).map(|(a, b)| (a - b).powi(2)).sum();
            let expected = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
            prop_assert!((rho.unwrap() - expected).abs() < 1e-9);
        }
    }
}
