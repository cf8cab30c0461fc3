//! Per-frame feature matrices built from backbone trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpf::{MatrixKind, Mpf1};
use crate::so3::{self, MeanResult, MeanSettings, Rotation, DEFAULT_LOG_EPS};
use crate::trajio::{Backbone, BackboneTrajectory, Point, ReferenceStructure};

pub mod pointcloud;

pub use pointcloud::{pointcloud_features, PointcloudReference, PointcloudSettings};

/// Collinearity threshold on ‖u × w‖ for the residue frame.
pub const LCS_DEGENERATE_SIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Orientation,
    OrientationMean,
    OrientationAxis,
    OrientationAngle,
    Ca,
    Torsion,
    Pointcloud,
    PointcloudMean,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 8] = [
        FeatureKind::Orientation,
        FeatureKind::OrientationMean,
        FeatureKind::OrientationAxis,
        FeatureKind::OrientationAngle,
        FeatureKind::Ca,
        FeatureKind::Torsion,
        FeatureKind::Pointcloud,
        FeatureKind::PointcloudMean,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    /// Columns contributed by one residue.
    pub fn width(self) -> usize {
        match self {
            FeatureKind::OrientationAngle => 1,
            FeatureKind::Torsion => 4,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Orientation => "orientation",
            FeatureKind::OrientationMean => "orientation_mean",
            FeatureKind::OrientationAxis => "orientation_axis",
            FeatureKind::OrientationAngle => "orientation_angle",
            FeatureKind::Ca => "ca",
            FeatureKind::Torsion => "torsion",
            FeatureKind::Pointcloud => "pointcloud",
            FeatureKind::PointcloudMean => "pointcloud_mean",
        }
    }

    fn components(self) -> &'static [&'static str] {
        match self {
            FeatureKind::OrientationAngle => &["theta"],
            FeatureKind::OrientationAxis => &["ux", "uy", "uz"],
            FeatureKind::Torsion => &["sin_phi", "cos_phi", "sin_psi", "cos_psi"],
            FeatureKind::Ca | FeatureKind::Pointcloud | FeatureKind::PointcloudMean => &["x", "y", "z"],
            _ => &["wx", "wy", "wz"],
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature kind '{s}'")))
    }
}

/// Row-major T x d matrix; residue `r` owns columns `r*w .. (r+1)*w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    residues: usize,
    kind: FeatureKind,
    data: Vec<f64>,
    /// Columns holding placeholder values (terminal torsions).
    flagged: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(kind: FeatureKind, rows: usize, residues: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * residues * kind.width() {
            return Err(Error::domain(format!(
                "{} values for {rows} frames x {residues} residues of kind {}",
                data.len(),
                kind.name()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite feature value at index {i}")));
        }
        Ok(FeatureMatrix {
            rows,
            residues,
            kind,
            data,
            flagged: Vec::new(),
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn n_frames(&self) -> usize {
        self.rows
    }

    pub fn n_residues(&self) -> usize {
        self.residues
    }

    pub fn n_cols(&self) -> usize {
        self.residues * self.kind.width()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[t * d..(t + 1) * d]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.n_cols() + c]
    }

    pub fn residue_columns(&self, r: usize) -> std::ops::Range<usize> {
        let w = self.kind.width();
        r * w..(r + 1) * w
    }

    pub fn residue_block(&self, t: usize, r: usize) -> &[f64] {
        &self.row(t)[self.residue_columns(r)]
    }

    pub fn flagged_columns(&self) -> &[usize] {
        &self.flagged
    }

    pub fn column_labels(&self) -> Vec<String> {
        (0..self.residues)
            .flat_map(|r| self.kind.components().iter().map(move |c| format!("r{r}_{c}")))
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.n_cols(), &self.data)
    }

    /// Keep only the residues in `residues`, in the given order.
    pub fn select_residues(&self, residues: &[usize]) -> Result<Self> {
        if let Some(&r) = residues.iter().find(|&&r| r >= self.residues) {
            return Err(Error::domain(format!("residue {r} out of range")));
        }
        let w = self.kind.width();
        let mut data = Vec::with_capacity(self.rows * residues.len() * w);
        for t in 0..self.rows {
            for &r in residues {
                data.extend_from_slice(self.residue_block(t, r));
            }
        }
        let flagged = residues
            .iter()
            .enumerate()
            .flat_map(|(k, &r)| {
                self.residue_columns(r)
                    .filter(|c| self.flagged.contains(c))
                    .map(move |c| k * w + c % w)
            })
            .collect();
        Ok(FeatureMatrix {
            rows: self.rows,
            residues: residues.len(),
            kind: self.kind,
            data,
            flagged,
        })
    }

    pub fn to_mpf(&self) -> Mpf1 {
        Mpf1 {
            rows: self.rows,
            cols: self.n_cols(),
            kind: MatrixKind::Feature(self.kind),
            data: self.data.clone(),
        }
    }

    pub fn from_mpf(m: Mpf1) -> Result<Self> {
        let MatrixKind::Feature(kind) = m.kind else {
            return Err(Error::domain("MPF1 payload is not a feature matrix"));
        };
        if m.cols % kind.width() != 0 {
            return Err(Error::domain(format!(
                "{} columns is not a multiple of {} for kind {}",
                m.cols,
                kind.width(),
                kind.name()
            )));
        }
        Self::new(kind, m.rows, m.cols / kind.width(), m.data)
    }

    pub fn write_mpf(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_mpf().write(path)
    }

    pub fn read_mpf(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_mpf(Mpf1::read(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.column_labels().join(",");
        out.push('\n');
        for t in 0..self.rows {
            for (i, x) in self.row(t).iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Local coordinate system of every residue in every frame.
#[derive(Debug, Clone)]
pub struct LcsStack {
    frames: usize,
    residues: usize,
    lcs: Vec<Rotation>,
}

impl LcsStack {
    /// Frame-major stack of `frames * residues` rotations.
    pub fn new(frames: usize, residues: usize, lcs: Vec<Rotation>) -> Result<Self> {
        if lcs.len() != frames * residues {
            return Err(Error::Structure(format!(
                "expected {} rotations for {frames}x{residues}, got {}",
                frames * residues,
                lcs.len()
            )));
        }
        Ok(LcsStack { frames, residues, lcs })
    }

    pub fn rotations(&self) -> &[Rotation] {
        &self.lcs
    }

    pub fn n_frames(&self) -> usize {
        self.frames
    }

    pub fn n_residues(&self) -> usize {
        self.residues
    }

    pub fn get(&self, t: usize, r: usize) -> &Rotation {
        &self.lcs[t * self.residues + r]
    }

    pub fn frame(&self, t: usize) -> &[Rotation] {
        &self.lcs[t * self.residues..(t + 1) * self.residues]
    }

    /// Time series of one residue's frames.
    pub fn residue(&self, r: usize) -> Vec<Rotation> {
        (0..self.frames).map(|t| *self.get(t, r)).collect()
    }
}

/// Frame with columns (u, n, v) for one residue, or `None` if N, Cα and C
/// are collinear.
pub fn residue_lcs(b: &Backbone) -> Option<Rotation> {
    let u = (b.n - b.ca).try_normalize(0.0)?;
    let w = (b.c - b.ca).try_normalize(0.0)?;
    let cross = u.cross(&w);
    if !(cross.norm() >= LCS_DEGENERATE_SIN) {
        return None;
    }
    let n = cross.normalize();
    let v = u.cross(&n);
    Some(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[u, n, v])))
}

pub fn build_lcs(traj: &BackboneTrajectory) -> Result<LcsStack> {
    let residues = traj.n_residues();
    let lcs = traj
        .coords()
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            residue_lcs(b).ok_or(Error::DegenerateResidue {
                frame: i / residues.max(1),
                residue: i % residues.max(1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LcsStack {
        frames: traj.n_frames(),
        residues,
        lcs,
    })
}

/// Reference frames for orientation features.
#[derive(Debug, Clone)]
pub enum OrientationReference {
    /// One rotation per residue.
    Fixed(Vec<Rotation>),
    /// Per-residue intrinsic mean over the trajectory.
    IntrinsicMean(MeanSettings),
}

impl OrientationReference {
    pub fn from_structure(reference: &ReferenceStructure) -> Result<Self> {
        reference
            .residues
            .iter()
            .enumerate()
            .map(|(r, b)| residue_lcs(b).ok_or(Error::DegenerateResidue { frame: 0, residue: r }))
            .collect::<Result<Vec<_>>>()
            .map(OrientationReference::Fixed)
    }

    pub fn from_frame(lcs: &LcsStack, t: usize) -> Result<Self> {
        if t >= lcs.n_frames() {
            return Err(Error::domain(format!("reference frame {t} out of range")));
        }
        Ok(OrientationReference::Fixed(lcs.frame(t).to_vec()))
    }
}

/// Intrinsic mean of every residue's LCS series, parallel over residues.
pub fn residue_means(lcs: &LcsStack, settings: &MeanSettings) -> Result<Vec<MeanResult>> {
    settings.validate()?;
    (0..lcs.n_residues())
        .into_par_iter()
        .map(|r| so3::intrinsic_mean(&lcs.residue(r), settings))
        .collect()
}

/// Tangent vectors `log(R_ref⁻¹ · LCS)` per residue and frame.
pub fn orientation_features(lcs: &LcsStack, reference: &OrientationReference) -> Result<FeatureMatrix> {
    let (refs, kind) = match reference {
        OrientationReference::Fixed(refs) => (refs.clone(), FeatureKind::Orientation),
        OrientationReference::IntrinsicMean(settings) => {
            let means = residue_means(lcs, settings)?;
            let unconverged = means.iter().filter(|m| !m.converged).count();
            if unconverged > 0 {
                log::warn!("{unconverged} residue means did not converge");
            }
            (means.into_iter().map(|m| m.mean).collect(), FeatureKind::OrientationMean)
        }
    };
    if refs.len() != lcs.n_residues() {
        return Err(Error::Structure(format!(
            "reference has {} residues, trajectory has {}",
            refs.len(),
            lcs.n_residues()
        )));
    }
    let inv: Vec<Rotation> = refs.iter().map(Rotation::inverse).collect();
    let residues = lcs.n_residues();
    let mut data = vec![0.0; lcs.n_frames() * residues * 3];
    if residues > 0 {
        data.par_chunks_mut(residues * 3).enumerate().for_each(|(t, row)| {
            for (r, (dst, q)) in row.chunks_exact_mut(3).zip(&inv).enumerate() {
                let w = so3::log_map(&(q * lcs.get(t, r)), DEFAULT_LOG_EPS);
                dst.copy_from_slice(w.0.as_slice());
            }
        });
    }
    FeatureMatrix::new(kind, lcs.n_frames(), residues, data)
}

/// Split tangent blocks into unit axes and angles.
pub fn axis_angle_split(f: &FeatureMatrix) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !matches!(f.kind, FeatureKind::OrientationMean | FeatureKind::Orientation) {
        return Err(Error::domain(format!(
            "axis/angle split needs orientation features, got {}",
            f.kind.name()
        )));
    }
    let mut axes = Vec::with_capacity(f.data.len());
    let mut angles = Vec::with_capacity(f.data.len() / 3);
    for block in f.data.chunks_exact(3) {
        let theta = (block[0] * block[0] + block[1] * block[1] + block[2] * block[2]).sqrt();
        if theta > 0.0 {
            axes.extend(block.iter().map(|x| x / theta));
        } else {
            axes.extend([0.0; 3]);
        }
        angles.push(theta);
    }
    Ok((
        FeatureMatrix::new(FeatureKind::OrientationAxis, f.rows, f.residues, axes)?,
        FeatureMatrix::new(FeatureKind::OrientationAngle, f.rows, f.residues, angles)?,
    ))
}

fn demean_columns(data: &mut [f64], cols: usize) {
    if cols == 0 || data.is_empty() {
        return;
    }
    let rows = data.len() / cols;
    let mut means = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= rows as f64;
    }
    for row in data.chunks_exact_mut(cols) {
        for (x, m) in row.iter_mut().zip(&means) {
            *x -= m;
        }
    }
}

/// Concatenated Cα positions with per-column means over frames removed.
pub fn ca_features(traj: &BackboneTrajectory) -> Result<FeatureMatrix> {
    let mut data: Vec<f64> = traj
        .coords()
        .iter()
        .flat_map(|b| [b.ca.x, b.ca.y, b.ca.z])
        .collect();
    demean_columns(&mut data, traj.n_residues() * 3);
    FeatureMatrix::new(FeatureKind::Ca, traj.n_frames(), traj.n_residues(), data)
}

/// Signed dihedral angle in (−π, π] defined by four points.
pub fn dihedral(p0: &Point, p1: &Point, p2: &Point, p3: &Point) -> f64 {
    let b1 = p1 - p0;
    let b2 = p2 - p1;
    let b3 = p3 - p2;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    (b2.norm() * b1.dot(&n2)).atan2(n1.dot(&n2))
}

/// Backbone φ of residue `r`, if the previous residue is on the same chain.
fn phi(frame: &[Backbone], chains: &[u8], r: usize) -> Option<f64> {
    (r > 0 && chains[r - 1] == chains[r])
        .then(|| dihedral(&frame[r - 1].c, &frame[r].n, &frame[r].ca, &frame[r].c))
}

/// Backbone ψ of residue `r`, if the next residue is on the same chain.
fn psi(frame: &[Backbone], chains: &[u8], r: usize) -> Option<f64> {
    (r + 1 < frame.len() && chains[r + 1] == chains[r])
        .then(|| dihedral(&frame[r].n, &frame[r].ca, &frame[r].c, &frame[r + 1].n))
}

/// Undemeaned (sin φ, cos φ, sin ψ, cos ψ) blocks and the placeholder columns.
pub fn torsion_embedding(traj: &BackboneTrajectory) -> Result<(Vec<f64>, Vec<usize>)> {
    let residues = traj.n_residues();
    if residues < 2 {
        return Err(Error::domain(format!("torsions need at least 2 residues, got {residues}")));
    }
    let chains = traj.chain_ids();
    let mut flagged = Vec::new();
    for r in 0..residues {
        let probe = traj.frame(0);
        if phi(probe, chains, r).is_none() {
            flagged.extend([4 * r, 4 * r + 1]);
        }
        if psi(probe, chains, r).is_none() {
            flagged.extend([4 * r + 2, 4 * r + 3]);
        }
    }
    let mut data = vec![0.0; traj.n_frames() * residues * 4];
    data.par_chunks_mut(residues * 4).enumerate().for_each(|(t, row)| {
        let frame = traj.frame(t);
        for (r, dst) in row.chunks_exact_mut(4).enumerate() {
            let (sp, cp) = phi(frame, chains, r).unwrap_or(0.0).sin_cos();
            let (ss, cs) = psi(frame, chains, r).unwrap_or(0.0).sin_cos();
            dst.copy_from_slice(&[sp, cp, ss, cs]);
        }
    });
    Ok((data, flagged))
}

/// Sine-cosine torsion features, demeaned per column. Undefined terminal
/// angles are encoded as angle 0 and reported by
/// [`FeatureMatrix::flagged_columns`]. Chain boundaries count as termini.
pub fn torsion_features(traj: &BackboneTrajectory) -> Result<FeatureMatrix> {
    let (mut data, flagged) = torsion_embedding(traj)?;
    demean_columns(&mut data, traj.n_residues() * 4);
    let mut f = FeatureMatrix::new(FeatureKind::Torsion, traj.n_frames(), traj.n_residues(), data)?;
    f.flagged = flagged;
    Ok(f)
}

/// Settings shared by every representation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeaturizeOptions {
    pub mean: MeanSettings,
    pub pointcloud: PointcloudSettings,
}

/// Compute one representation. Fixed references come from `reference` when
/// given, otherwise from frame 0; axis and angle parts split the
/// per-residue-mean orientation features.
pub fn featurize(
    traj: &BackboneTrajectory,
    reference: Option<&ReferenceStructure>,
    kind: FeatureKind,
    opts: &FeaturizeOptions,
) -> Result<FeatureMatrix> {
    if let Some(r) = reference {
        if r.n_residues() != traj.n_residues() {
            return Err(Error::Structure(format!(
                "reference has {} residues, trajectory has {}",
                r.n_residues(),
                traj.n_residues()
            )));
        }
    }
    match kind {
        FeatureKind::Orientation => {
            let lcs = build_lcs(traj)?;
            let fixed = match reference {
                Some(r) => OrientationReference::from_structure(r)?,
                None => OrientationReference::from_frame(&lcs, 0)?,
            };
            orientation_features(&lcs, &fixed)
        }
        FeatureKind::OrientationMean => {
            orientation_features(&build_lcs(traj)?, &OrientationReference::IntrinsicMean(opts.mean))
        }
        FeatureKind::OrientationAxis | FeatureKind::OrientationAngle => {
            let (axis, angle) = axis_angle_split(&featurize(traj, reference, FeatureKind::OrientationMean, opts)?)?;
            Ok(if kind == FeatureKind::OrientationAxis { axis } else { angle })
        }
        FeatureKind::Ca => ca_features(traj),
        FeatureKind::Torsion => torsion_features(traj),
        FeatureKind::Pointcloud => {
            let base = match reference {
                Some(r) => r.ca(),
                None => traj.ca(0),
            };
            pointcloud_features(traj, &PointcloudReference::Fixed(base), &opts.pointcloud)
        }
        FeatureKind::PointcloudMean => {
            pointcloud_features(traj, &PointcloudReference::IntrinsicMean, &opts.pointcloud)
        }
    }
}
