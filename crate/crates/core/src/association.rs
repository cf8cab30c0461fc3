//! Bound/unbound analysis for two-chain complexes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::kinetics::{pca_fit_n, PcaModel};
use crate::trajio::{kabsch, BackboneTrajectory, Point, ReferenceStructure};

pub const INTERFACE_CUTOFF: f64 = 10.0;
pub const KDE_GRID: usize = 512;
pub const MI_NEIGHBORS: usize = 3;
pub const KDE_MIN_SAMPLES: usize = 100;
pub const MI_MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainPair {
    pub a: u8,
    pub b: u8,
}

impl ChainPair {
    /// The first two distinct chain ids in residue order.
    pub fn first_two(chain_ids: &[u8]) -> Result<Self> {
        let mut seen = Vec::new();
        for &c in chain_ids {
            if !seen.contains(&c) {
                seen.push(c);
            }
        }
        match seen[..] {
            [a, b, ..] => Ok(ChainPair { a, b }),
            _ => Err(Error::domain("association analysis needs two chains")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterfaceDefinition {
    pub chains: ChainPair,
    /// Residue indices (into the full structure) on chain A.
    pub residues_a: Vec<usize>,
    pub residues_b: Vec<usize>,
    pub cutoff: f64,
}

impl InterfaceDefinition {
    pub fn is_empty(&self) -> bool {
        self.residues_a.is_empty() && self.residues_b.is_empty()
    }

    /// Joint residue set, chain A first.
    pub fn residues(&self) -> Vec<usize> {
        self.residues_a.iter().chain(&self.residues_b).copied().collect()
    }
}

pub fn detect_interface(
    crystal: &ReferenceStructure,
    chains: Option<ChainPair>,
    cutoff: f64,
) -> Result<InterfaceDefinition> {
    if !(cutoff > 0.0) {
        return Err(Error::domain(format!("interface cutoff must be positive, got {cutoff}")));
    }
    let chains = match chains {
        Some(c) => c,
        None => ChainPair::first_two(&crystal.chain_ids)?,
    };
    let ia = crystal.chain_residues(chains.a);
    let ib = crystal.chain_residues(chains.b);
    if chains.a == chains.b || ia.is_empty() || ib.is_empty() {
        return Err(Error::domain("association analysis needs two distinct non-empty chains"));
    }
    let ca = crystal.ca();
    let c2 = cutoff * cutoff;
    let mut sa = BTreeSet::new();
    let mut sb = BTreeSet::new();
    for &i in &ia {
        for &j in &ib {
            if (ca[i] - ca[j]).norm_squared() <= c2 {
                sa.insert(i);
                sb.insert(j);
            }
        }
    }
    Ok(InterfaceDefinition {
        chains,
        residues_a: sa.into_iter().collect(),
        residues_b: sb.into_iter().collect(),
        cutoff,
    })
}

/// Cα RMSD of the joint interface set after one superposition onto the crystal.
pub fn irmsd(frame: &[Point], crystal: &[Point], iface: &InterfaceDefinition) -> Result<f64> {
    if iface.residues_a.is_empty() || iface.residues_b.is_empty() {
        return Err(Error::domain("interface is empty"));
    }
    if frame.len() != crystal.len() {
        return Err(Error::Structure(format!(
            "frame has {} residues, crystal has {}",
            frame.len(),
            crystal.len()
        )));
    }
    let idx = iface.residues();
    if let Some(&bad) = idx.iter().find(|&&r| r >= frame.len()) {
        return Err(Error::domain(format!("interface residue {bad} out of range")));
    }
    let moving: Vec<Point> = idx.iter().map(|&r| frame[r]).collect();
    let target: Vec<Point> = idx.iter().map(|&r| crystal[r]).collect();
    Ok(kabsch(&moving, &target)?.rmsd)
}

pub fn irmsd_series(
    traj: &BackboneTrajectory,
    crystal: &ReferenceStructure,
    iface: &InterfaceDefinition,
) -> Result<Vec<f64>> {
    let reference = crystal.ca();
    (0..traj.n_frames())
        .into_par_iter()
        .map(|t| irmsd(&traj.ca(t), &reference, iface).map_err(|e| e.in_frame(t)))
        .collect()
}

fn centroid_of(points: &[Point], idx: &[usize]) -> Point {
    idx.iter().fold(Vector3::zeros(), |acc, &i| acc + points[i]) / idx.len() as f64
}

/// Distance between the unweighted Cα centroids of two chains.
pub fn cog_distance(frame: &[Point], chain_ids: &[u8], chains: ChainPair) -> Result<f64> {
    let ia: Vec<usize> = (0..chain_ids.len()).filter(|&i| chain_ids[i] == chains.a).collect();
    let ib: Vec<usize> = (0..chain_ids.len()).filter(|&i| chain_ids[i] == chains.b).collect();
    if ia.is_empty() || ib.is_empty() || frame.len() != chain_ids.len() {
        return Err(Error::domain("both chains must be present in the frame"));
    }
    Ok((centroid_of(frame, &ia) - centroid_of(frame, &ib)).norm())
}

pub fn cog_series(traj: &BackboneTrajectory, chains: ChainPair) -> Result<Vec<f64>> {
    (0..traj.n_frames())
        .into_par_iter()
        .map(|t| cog_distance(&traj.ca(t), traj.chain_ids(), chains))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeSettings {
    pub grid_points: usize,
    /// Bandwidth factor; `None` selects Scott's rule n^(-1/5).
    pub bw_factor: Option<f64>,
}

impl Default for KdeSettings {
    fn default() -> Self {
        KdeSettings { grid_points: KDE_GRID, bw_factor: None }
    }
}

#[derive(Debug, Clone)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    pub gradient: Vec<f64>,
    pub bandwidth: f64,
}

fn sample_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Gaussian KDE on an even grid over the sample range with its
/// finite-difference gradient (central inside, one-sided at the ends).
/// `None` when the sample has no spread.
pub fn kde_curve(x: &[f64], settings: &KdeSettings) -> Result<Option<KdeCurve>> {
    if x.len() < 2 || settings.grid_points < 3 {
        return Err(Error::domain("KDE needs at least 2 samples and 3 grid points"));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("KDE input has non-finite values".into()));
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let std = sample_std(x);
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if !(std > 1e-12 * scale) || !(hi - lo > 1e-12 * scale) {
        return Ok(None);
    }
    let factor = settings.bw_factor.unwrap_or_else(|| (x.len() as f64).powf(-0.2));
    let h = factor * std;
    let m = settings.grid_points;
    let step = (hi - lo) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| if i == m - 1 { hi } else { lo + step * i as f64 }).collect();
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let pdf: Vec<f64> = grid
        .par_iter()
        .map(|&g| x.iter().map(|&v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    let mut gradient = vec![0.0; m];
    gradient[0] = (pdf[1] - pdf[0]) / (grid[1] - grid[0]);
    gradient[m - 1] = (pdf[m - 1] - pdf[m - 2]) / (grid[m - 1] - grid[m - 2]);
    for i in 1..m - 1 {
        gradient[i] = (pdf[i + 1] - pdf[i - 1]) / (grid[i + 1] - grid[i - 1]);
    }
    Ok(Some(KdeCurve { grid, pdf, gradient, bandwidth: h }))
}

/// Grid point (excluding the two ends) where the KDE gradient is most negative.
pub fn kde_threshold(x: &[f64], settings: &KdeSettings) -> Result<Option<f64>> {
    if !x.is_empty() && x.iter().all(|&v| v == x[0]) {
        log::warn!("association metric is constant; threshold undefined");
        return Ok(None);
    }
    if x.len() < KDE_MIN_SAMPLES {
        return Err(Error::domain(format!(
            "KDE threshold needs at least {KDE_MIN_SAMPLES} samples, got {}",
            x.len()
        )));
    }
    let Some(curve) = kde_curve(x, settings)? else {
        log::warn!("association metric has no spread; threshold undefined");
        return Ok(None);
    };
    let m = curve.grid.len();
    let best = (1..m - 1)
        .min_by(|&a, &b| curve.gradient[a].total_cmp(&curve.gradient[b]))
        .expect("grid has interior points");
    Ok(Some(curve.grid[best]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Irmsd,
    Cog,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationSeries {
    pub kind: MetricKind,
    pub metric: Vec<f64>,
    /// 1 = bound (metric strictly below threshold), 0 = unbound.
    pub labels: Vec<u8>,
    pub threshold: f64,
}

impl AssociationSeries {
    pub fn new(kind: MetricKind, metric: Vec<f64>, threshold: f64) -> Self {
        let labels = metric.iter().map(|&v| u8::from(v < threshold)).collect();
        AssociationSeries { kind, metric, labels, threshold }
    }

    pub fn n_bound(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_unbound(&self) -> usize {
        self.labels.len() - self.n_bound()
    }
}

#[derive(Debug, Clone)]
pub struct TwoStepPca {
    pub stage1_a: PcaModel,
    pub stage1_b: PcaModel,
    pub stage2: PcaModel,
    /// T x 2, whitened.
    pub projections: DMatrix<f64>,
    /// Per residue of A then B, one entry per combined component.
    pub contributions_a: Vec<[f64; 2]>,
    pub contributions_b: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidueContribution {
    pub monomer: char,
    pub residue: usize,
    pub contribution: f64,
}

impl TwoStepPca {
    /// Residues sorted by contribution to component `i`, largest first.
    pub fn ranked(&self, i: usize) -> Vec<ResidueContribution> {
        let mut all: Vec<ResidueContribution> = self
            .contributions_a
            .iter()
            .enumerate()
            .map(|(r, c)| ResidueContribution { monomer: 'A', residue: r, contribution: c[i] })
            .chain(self.contributions_b.iter().enumerate().map(|(r, c)| ResidueContribution {
                monomer: 'B',
                residue: r,
                contribution: c[i],
            }))
            .collect();
        all.sort_by(|x, y| y.contribution.total_cmp(&x.contribution));
        all
    }
}

/// Squared propagated loadings summed per residue, for monomer block `offset`.
fn residue_loadings(f: &FeatureMatrix, stage1: &PcaModel, stage2: &PcaModel, offset: usize) -> Vec<[f64; 2]> {
    (0..f.n_residues())
        .map(|r| {
            let mut out = [0.0; 2];
            for k in f.residue_columns(r) {
                for (i, o) in out.iter_mut().enumerate() {
                    let w: f64 = (0..2)
                        .map(|j| stage1.components[(j, k)] * stage2.components[(i, offset + j)])
                        .sum();
                    *o += w * w;
                }
            }
            out
        })
        .collect()
}

pub fn two_step_pca(fa: &FeatureMatrix, fb: &FeatureMatrix) -> Result<TwoStepPca> {
    if fa.n_frames() != fb.n_frames() {
        return Err(Error::domain(format!(
            "monomer frame counts differ: {} vs {}",
            fa.n_frames(),
            fb.n_frames()
        )));
    }
    let stage1_a = pca_fit_n(&fa.to_dmatrix(), 2, true)?;
    let stage1_b = pca_fit_n(&fb.to_dmatrix(), 2, true)?;
    let ya = stage1_a.transform(&fa.to_dmatrix());
    let yb = stage1_b.transform(&fb.to_dmatrix());
    let t = fa.n_frames();
    let z = DMatrix::from_fn(t, 4, |r, c| if c < 2 { ya[(r, c)] } else { yb[(r, c - 2)] });
    let stage2 = pca_fit_n(&z, 2, true)?;
    let projections = stage2.transform(&z);
    let mut contributions_a = residue_loadings(fa, &stage1_a, &stage2, 0);
    let mut contributions_b = residue_loadings(fb, &stage1_b, &stage2, 2);
    for i in 0..2 {
        let total: f64 = contributions_a.iter().chain(&contributions_b).map(|c| c[i]).sum();
        for c in contributions_a.iter_mut().chain(contributions_b.iter_mut()) {
            c[i] /= total;
        }
    }
    Ok(TwoStepPca { stage1_a, stage1_b, stage2, projections, contributions_a, contributions_b })
}

/// Continuous/discrete nearest-neighbour MI estimate in nats, clamped at 0.
/// `x` is T x d (Euclidean distances); samples whose label is unique are
/// dropped as in the reference estimator.
pub fn knn_mi(x: &DMatrix<f64>, labels: &[u8], k: usize) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::domain("label count does not match samples"));
    }
    if n < MI_MIN_SAMPLES || k == 0 {
        return Err(Error::domain(format!("MI needs at least {MI_MIN_SAMPLES} samples and k >= 1")));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("MI input has non-finite values".into()));
    }
    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::domain("MI needs at least two label classes"));
    }
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let dist = |a: usize, b: usize| -> f64 {
        rows[a].iter().zip(&rows[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
    };
    let kept: Vec<usize> = (0..n).filter(|&i| counts[labels[i] as usize] > 1).collect();
    let per_sample: Vec<(f64, f64, f64)> = kept
        .par_iter()
        .map(|&i| {
            let count = counts[labels[i] as usize];
            let kk = k.min(count - 1);
            let mut same: Vec<f64> = kept
                .iter()
                .filter(|&&j| j != i && labels[j] == labels[i])
                .map(|&j| dist(i, j))
                .collect();
            let (_, kth, _) = same.select_nth_unstable_by(kk - 1, f64::total_cmp);
            let radius = kth.next_down();
            let m = kept.iter().filter(|&&j| dist(i, j) <= radius).count();
            (digamma(kk as f64), digamma(count as f64), digamma(m as f64))
        })
        .collect();
    let len = per_sample.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| per_sample.iter().map(f).sum::<f64>() / len;
    let mi = digamma(len) + mean(|s| s.0) - mean(|s| s.1) - mean(|s| s.2);
    Ok(mi.max(0.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct AssociationReport {
    pub metric_kind: MetricKind,
    pub threshold: Option<f64>,
    pub n_bound: usize,
    pub n_unbound: usize,
    pub mi_pc1: Option<f64>,
    pub mi_pc12: Option<f64>,
    pub mi_neighbors: usize,
    pub top_contributing_residues: Vec<ResidueContribution>,
}

#[derive(Debug, Clone)]
pub struct AssociationAnalysis {
    pub series: Option<AssociationSeries>,
    pub kind: MetricKind,
    pub metric: Vec<f64>,
    /// `None` when a monomer's features have rank below 2.
    pub pca: Option<TwoStepPca>,
    pub report: AssociationReport,
}

impl AssociationAnalysis {
    /// Threshold the metric, reduce the monomer features, and score MI of
    /// PC1 and of (PC1, PC2) against the labels.
    pub fn run(
        kind: MetricKind,
        metric: Vec<f64>,
        fa: &FeatureMatrix,
        fb: &FeatureMatrix,
        kde: &KdeSettings,
        top: usize,
    ) -> Result<Self> {
        if metric.len() != fa.n_frames() {
            return Err(Error::domain("metric length does not match feature frames"));
        }
        let pca = match two_step_pca(fa, fb) {
            Ok(p) => Some(p),
            Err(Error::Numerical(msg)) => {
                log::warn!("two-step PCA skipped: {msg}");
                None
            }
            Err(e) => return Err(e),
        };
        let threshold = kde_threshold(&metric, kde)?;
        let series = threshold.map(|th| AssociationSeries::new(kind, metric.clone(), th));
        let (mut mi_pc1, mut mi_pc12) = (None, None);
        if let (Some(s), Some(p)) = (&series, &pca) {
            if s.n_bound() > 0 && s.n_unbound() > 0 {
                mi_pc1 = Some(knn_mi(&p.projections.columns(0, 1).into_owned(), &s.labels, MI_NEIGHBORS)?);
                mi_pc12 = Some(knn_mi(&p.projections, &s.labels, MI_NEIGHBORS)?);
            } else {
                log::warn!("all frames share one label; MI undefined");
            }
        }
        let report = AssociationReport {
            metric_kind: kind,
            threshold,
            n_bound: series.as_ref().map_or(0, |s| s.n_bound()),
            n_unbound: series.as_ref().map_or(0, |s| s.n_unbound()),
            mi_pc1,
            mi_pc12,
            mi_neighbors: MI_NEIGHBORS,
            top_contributing_residues: pca
                .as_ref()
                .map(|p| p.ranked(0).into_iter().take(top).collect())
                .unwrap_or_default(),
        };
        Ok(AssociationAnalysis { series, kind, metric, pca, report })
    }

    /// `frame,metric,label,pc1,pc2`; undefined fields are left empty.
    pub fn frames_csv(&self) -> String {
        let mut out = String::from("frame,metric,label,pc1,pc2\n");
        for (t, m) in self.metric.iter().enumerate() {
            let label = self.series.as_ref().map(|s| s.labels[t].to_string()).unwrap_or_default();
            let (pc1, pc2) = self
                .pca
                .as_ref()
                .map(|p| (p.projections[(t, 0)].to_string(), p.projections[(t, 1)].to_string()))
                .unwrap_or_default();
            writeln!(out, "{t},{m},{label},{pc1},{pc2}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use crate::so3::Rotation;
    use crate::trajio::Backbone;
    use nalgebra::{Matrix3, Matrix4, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn structure(ca: &[Point], chains: &[u8]) -> ReferenceStructure {
        let res = ca.iter().map(|&p| Backbone::new(p + Vector3::x(), p, p + Vector3::y())).collect();
        ReferenceStructure::from_backbone(res, chains.to_vec()).unwrap()
    }

    #[test]
    fn interface_trivial_cases() {
        let near = structure(
            &[Vector3::zeros(), Vector3::new(5.0, 0.0, 0.0)],
            b"AB",
        );
        let i = detect_interface(&near, None, INTERFACE_CUTOFF).unwrap();
        assert_eq!((i.residues_a.clone(), i.residues_b.clone()), (vec![0], vec![1]));
        let far = structure(&[Vector3::zeros(), Vector3::new(12.0, 0.0, 0.0)], b"AB");
        assert!(detect_interface(&far, None, INTERFACE_CUTOFF).unwrap().is_empty());
        let single = structure(&[Vector3::zeros(), Vector3::x() * 3.0], b"AA");
        assert!(detect_interface(&single, None, INTERFACE_CUTOFF).is_err());
    }

    #[test]
    fn interface_distance_table() {
        // Chain A on x = 0, chain B on x = 9, spaced 4 Å along y; B shifted by 6 Å.
        let mut ca = Vec::new();
        for i in 0..5 {
            ca.push(Vector3::new(0.0, 4.0 * i as f64, 0.0));
        }
        for i in 0..5 {
            ca.push(Vector3::new(9.0, 4.0 * i as f64 + 6.0, 0.0));
        }
        let s = structure(&ca, b"AAAAABBBBB");
        let iface = detect_interface(&s, None, 10.0).unwrap();
        let mut ea = BTreeSet::new();
        let mut eb = BTreeSet::new();
        for i in 0..5 {
            for j in 5..10 {
                let d = (ca[i] - ca[j]).norm();
                if d <= 10.0 {
                    ea.insert(i);
                    eb.insert(j);
                }
            }
        }
        assert_eq!(iface.residues_a, ea.into_iter().collect::<Vec<_>>());
        assert_eq!(iface.residues_b, eb.into_iter().collect::<Vec<_>>());
        assert_eq!(iface.residues_a, vec![1, 2, 3, 4]);
        assert_eq!(iface.residues_b, vec![5, 6, 7, 8]);
    }

    fn complex(rng: &mut ChaCha8Rng) -> (Vec<Point>, Vec<u8>) {
        let mut ca = Vec::new();
        let mut chains = Vec::new();
        for c in 0..2 {
            for i in 0..8 {
                let base = Vector3::new(6.0 * c as f64, 3.8 * i as f64, 0.0);
                ca.push(base + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                chains.push(b'A' + c);
            }
        }
        (ca, chains)
    }

    /// Quaternion-eigenvector superposition RMSD.
    fn horn_rmsd(a: &[Point], b: &[Point]) -> f64 {
        let n = a.len() as f64;
        let ca = a.iter().sum::<Point>() / n;
        let cb = b.iter().sum::<Point>() / n;
        let mut s = Matrix3::zeros();
        let mut g = 0.0;
        for (p, q) in a.iter().zip(b) {
            let (p, q) = (p - ca, q - cb);
            s += p * q.transpose();
            g += p.norm_squared() + q.norm_squared();
        }
        let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
        let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
        let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
        let k = Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let lmax = SymmetricEigen::new(k).eigenvalues.max();
        ((g - 2.0 * lmax).max(0.0) / n).sqrt()
    }

    #[test]
    fn irmsd_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ca, chains) = complex(&mut rng);
        let crystal = structure(&ca, &chains);
        let iface = detect_interface(&crystal, None, INTERFACE_CUTOFF).unwrap();
        assert!(iface.residues_a.len() >= 3);
        assert!(irmsd(&ca, &ca, &iface).unwrap().abs() < 1e-10);

        let q = Rotation::about_axis(&Vector3::new(1.0, 2.0, -0.5), 1.3);
        let moved: Vec<Point> = ca.iter().map(|p| q.apply(p) + Vector3::new(4.0, -2.0, 7.0)).collect();
        assert!(irmsd(&moved, &ca, &iface).unwrap() < 1e-8);

        // Rotate monomer B by 10 degrees about an axis through the interface.
        let pivot = ca[iface.residues_b[0]];
        let r = Rotation::about_axis(&Vector3::new(0.0, 0.0, 1.0), 10f64.to_radians());
        let bent: Vec<Point> = ca
            .iter()
            .zip(&chains)
            .map(|(p, &c)| if c == b'B' { r.apply(&(p - pivot)) + pivot } else { *p })
            .collect();
        let idx = iface.residues();
        let a: Vec<Point> = idx.iter().map(|&i| bent[i]).collect();
        let b: Vec<Point> = idx.iter().map(|&i| ca[i]).collect();
        let got = irmsd(&bent, &ca, &iface).unwrap();
        assert!(got > 0.1);
        assert!((got - horn_rmsd(&a, &b)).abs() < 1e-8);

        let empty = InterfaceDefinition { residues_a: vec![], residues_b: vec![], ..iface };
        assert!(irmsd(&ca, &ca, &empty).is_err());
    }

    #[test]
    fn cog_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Point> = (0..6).map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect();
        let mut frame = a.clone();
        frame.extend(a.iter().map(|p| p + Vector3::new(3.0, 4.0, 0.0)));
        let chains: Vec<u8> = [b'A'; 6].into_iter().chain([b'B'; 6]).collect();
        let pair = ChainPair { a: b'A', b: b'B' };
        assert!((cog_distance(&frame, &chains, pair).unwrap() - 5.0).abs() < 1e-12);
        let mut same = a.clone();
        same.extend(a.iter().rev());
        assert!(cog_distance(&same, &chains, pair).unwrap() < 1e-12);

        let pts: Vec<Point> = (0..12).map(|_| Vector3::from_fn(|_, _| rng.random_range(-9.0..9.0))).collect();
        let (mut sa, mut sb) = ([0.0; 3], [0.0; 3]);
        for (i, p) in pts.iter().enumerate() {
            let s = if i < 6 { &mut sa } else { &mut sb };
            for d in 0..3 {
                s[d] += p[d] / 6.0;
            }
        }
        let naive = ((sa[0] - sb[0]).powi(2) + (sa[1] - sb[1]).powi(2) + (sa[2] - sb[2]).powi(2)).sqrt();
        assert!((cog_distance(&pts, &chains, pair).unwrap() - naive).abs() < 1e-12);
    }

    fn normal_pdf_slope_min(mu: f64, sigma: f64) -> f64 {
        mu + sigma
    }

    #[test]
    fn kde_unimodal_flank() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| 2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let th = kde_threshold(&x, &KdeSettings::default()).unwrap().unwrap();
        let h = (n as f64).powf(-0.2) * sample_std(&x);
        let expect = normal_pdf_slope_min(2.0, (0.25 + h * h).sqrt());
        assert!((th - expect).abs() < 0.05, "{th} vs {expect}");
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(th > lo && th < hi);
    }

    #[test]
    fn kde_constant_and_small() {
        assert_eq!(kde_threshold(&[3.0; 200], &KdeSettings::default()).unwrap(), None);
        assert!(kde_threshold(&[1.0, 2.0], &KdeSettings::default()).is_err());
    }

    #[test]
    fn series_boundary_is_unbound() {
        let s = AssociationSeries::new(MetricKind::Irmsd, vec![1.0, 2.0, 3.0], 2.0);
        assert_eq!(s.labels, vec![1, 0, 0]);
        assert_eq!((s.n_bound(), s.n_unbound()), (1, 2));
    }

    fn features(data: Vec<f64>, rows: usize, residues: usize) -> FeatureMatrix {
        FeatureMatrix::new(FeatureKind::Ca, rows, residues, data).unwrap()
    }

    fn noise_features(rng: &mut ChaCha8Rng, t: usize, r: usize, s: f64) -> Vec<f64> {
        let d = Normal::new(0.0, s).unwrap();
        (0..t * r * 3).map(|_| d.sample(rng)).collect()
    }

    #[test]
    fn two_step_symmetric_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (t, r) = (400, 5);
        let mut data = noise_features(&mut rng, t, r, 1.0);
        for (i, v) in data.iter_mut().enumerate() {
            *v *= 1.0 + (i % (r * 3)) as f64 * 0.3;
        }
        let fa = features(data.clone(), t, r);
        let fb = features(data, t, r);
        let m = two_step_pca(&fa, &fb).unwrap();
        for i in 0..2 {
            let a: f64 = m.contributions_a.iter().map(|c| c[i]).sum();
            let b: f64 = m.contributions_b.iter().map(|c| c[i]).sum();
            assert!((a - 0.5).abs() < 1e-6 && (b - 0.5).abs() < 1e-6, "{a} {b}");
            assert!((a + b - 1.0).abs() < 1e-9);
        }
        let p = &m.projections;
        let var = p.column(0).iter().map(|v| v * v).sum::<f64>() / (t - 1) as f64;
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_step_planted_residue() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (t, r) = (500, 6);
        let s: Vec<f64> = (0..t).map(|i| (i as f64 * 0.05).sin() * 5.0).collect();
        let mut a = noise_features(&mut rng, t, r, 0.3);
        let mut b = noise_features(&mut rng, t, r, 0.3);
        for i in 0..t {
            a[i * r * 3 + 3 * 2] += s[i];
            for c in 0..r * 3 {
                b[i * r * 3 + c] += 0.5 * s[i];
            }
        }
        let m = two_step_pca(&features(a, t, r), &features(b, t, r)).unwrap();
        let top = m.ranked(0);
        assert_eq!((top[0].monomer, top[0].residue), ('A', 2));
        assert!(top.iter().all(|c| c.contribution >= 0.0));
        let total: f64 = top.iter().map(|c| c.contribution).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_step_rejects_rank_one() {
        let t = 50;
        let data: Vec<f64> = (0..t).flat_map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let f = features(data, t, 1);
        assert!(two_step_pca(&f, &f).is_err());
    }

    fn column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn mi_separated_and_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let sep: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 * 10.0 + rng.random_range(0.0..1.0))
            .collect();
        let mi = knn_mi(&column(&sep), &labels, 3).unwrap();
        assert!((mi - 2f64.ln()).abs() < 0.1 * 2f64.ln(), "{mi}");

        let null: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        assert!(knn_mi(&column(&null), &labels, 3).unwrap() < 0.02);

        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let both = DMatrix::from_fn(n, 2, |i, j| if j == 0 { sep[i] } else { noise[i] });
        let joint = knn_mi(&both, &labels, 3).unwrap();
        assert!((joint - mi).abs() < 0.05, "{joint} vs {mi}");

        assert!(knn_mi(&column(&sep), &vec![1; n], 3).is_err());
    }

    #[test]
    fn mi_monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a = knn_mi(&column(&x), &labels, 3).unwrap();
        let y: Vec<f64> = x.iter().map(|v| (0.7 * v).exp()).collect();
        let b = knn_mi(&column(&y), &labels, 3).unwrap();
        assert!((a - b).abs() < 0.02, "{a} {b}");
        assert!(a > 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mi_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assert!(knn_mi(&column(&x), &labels, 3).unwrap() >= 0.0);
        }

        #[test]
        fn kde_inside_range(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..150).map(|_| rng.random_range(0.0..20.0)).collect();
            let th = kde_threshold(&x, &KdeSettings::default()).unwrap().unwrap();
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(th > lo && th < hi);
        }
    }
}
