//! Safe array-in/array-out layer under the C functions. Arrays are flat,
//! row-major `f64` buffers; shapes travel alongside.

use std::fmt;

use nalgebra::DMatrix;
use orientfeat::features::{featurize, FeatureKind, FeaturizeOptions};
use orientfeat::kinetics::{amuse, AmuseSettings, TicaMode};
use orientfeat::trajio::{Backbone, BackboneTrajectory, ReferenceStructure};

/// Values per residue per frame: N, CA, C times x, y, z.
pub const VALUES_PER_RESIDUE: usize = 9;

#[derive(Debug)]
pub enum BridgeError {
    /// Buffer length or dimension does not match the declared shape.
    Shape(String),
    Core(orientfeat::Error),
}

impl fmt::Display for BridgeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BridgeError::Shape(m) => write!(f, "shape error: {m}"),
            BridgeError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for BridgeError {}

impl From<orientfeat::Error> for BridgeError {
    fn from(e: orientfeat::Error) -> Self {
        BridgeError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, BridgeError>;

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array2 {
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Array2 { rows: m.nrows(), cols: m.ncols(), data }
    }
}

fn expect_len(what: &str, got: usize, dims: &[usize]) -> Result<()> {
    let want = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| BridgeError::Shape(format!("{what}: shape {dims:?} overflows")))?;
    if got != want {
        let shape: Vec<String> = dims.iter().map(usize::to_string).collect();
        return Err(BridgeError::Shape(format!(
            "{what} has {got} values; expected {} = {want}",
            shape.join("x")
        )));
    }
    Ok(())
}

fn residues_from(values: &[f64]) -> Vec<Backbone> {
    values
        .chunks_exact(VALUES_PER_RESIDUE)
        .map(|c| {
            let p = |k: usize| nalgebra::Vector3::new(c[3 * k], c[3 * k + 1], c[3 * k + 2]);
            Backbone::new(p(0), p(1), p(2))
        })
        .collect()
}

/// `coords` is T x R x 3 x 3 (frame, residue, atom N/CA/C, xyz).
pub fn trajectory_from_array(coords: &[f64], frames: usize, residues: usize) -> Result<BackboneTrajectory> {
    expect_len("coords", coords.len(), &[frames, residues, 3, 3])?;
    if frames == 0 || residues == 0 {
        return Err(BridgeError::Shape(format!("coords shape {frames}x{residues}x3x3 is empty")));
    }
    Ok(BackboneTrajectory::new(frames, residues, residues_from(coords), vec![b'A'; residues])?)
}

/// `reference` is R x 3 x 3.
pub fn reference_from_array(reference: &[f64], residues: usize) -> Result<ReferenceStructure> {
    expect_len("reference", reference.len(), &[residues, 3, 3])?;
    Ok(ReferenceStructure::from_backbone(residues_from(reference), vec![b'A'; residues])?)
}

/// T x d features of one representation.
pub fn featurize_array(
    coords: &[f64],
    frames: usize,
    residues: usize,
    kind: FeatureKind,
    reference: Option<&[f64]>,
    opts: &FeaturizeOptions,
) -> Result<Array2> {
    let traj = trajectory_from_array(coords, frames, residues)?;
    let reference = reference.map(|r| reference_from_array(r, residues)).transpose()?;
    let f = featurize(&traj, reference.as_ref(), kind, opts)?;
    let (rows, cols) = (f.n_frames(), f.n_cols());
    Ok(Array2 { rows, cols, data: f.into_data() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmuseArrays {
    /// TICA eigenvalues, one per retained PCA component.
    pub eigenvalues: Vec<f64>,
    /// Implied timescales in frames; `inf` for λ ≥ 1, NaN for λ ≤ 0.
    pub timescales: Vec<f64>,
    /// T x min(n_projections, k).
    pub projections: Array2,
    /// Input or whitened input had no variance.
    pub degenerate: bool,
}

/// Whitened PCA at `evr`, then reversible TICA at `lag`.
pub fn amuse_array(
    features: &[f64],
    rows: usize,
    cols: usize,
    evr: f64,
    lag: usize,
    n_projections: usize,
) -> Result<AmuseArrays> {
    expect_len("features", features.len(), &[rows, cols])?;
    if rows == 0 || cols == 0 {
        return Err(BridgeError::Shape(format!("features shape {rows}x{cols} is empty")));
    }
    let x = DMatrix::from_row_slice(rows, cols, features);
    let settings = AmuseSettings {
        evr_threshold: evr,
        lag,
        mode: TicaMode::Reversible,
        n_projections,
    };
    let r = amuse(&x, &settings)?;
    Ok(AmuseArrays {
        eigenvalues: r.tica.eigenvalues.clone(),
        timescales: r.tica.timescales.iter().map(|t| t.to_f64()).collect(),
        projections: Array2::from_dmatrix(&r.projections),
        degenerate: r.pca.degenerate || r.tica.degenerate,
    })
}
