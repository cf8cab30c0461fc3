//! Linear kinetic decomposition: whitened PCA followed by TICA (AMUSE),
//! implied timescales, lag scans and VAMP-2 scores.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative diagonal loading of C(0) before the generalized solve.
pub const C0_REGULARIZATION: f64 = 1e-10;

/// Relative change below which consecutive timescales count as flat.
pub const PLATEAU_REL_CHANGE: f64 = 0.1;

/// Consecutive flat increments required for a plateau.
pub const PLATEAU_RUN: usize = 3;

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// k x d, orthonormal rows.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub whiten: bool,
    /// Input had no variance; the model holds a single placeholder component.
    pub degenerate: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = center(x, &self.mean) * self.components.transpose();
        if self.whiten {
            for (mut col, &var) in y.column_iter_mut().zip(&self.explained_variance) {
                if var > 0.0 {
                    col /= var.sqrt();
                }
            }
        }
        y
    }

    pub fn inverse_transform(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = y.clone();
        if self.whiten {
            for (mut col, &var) in y.column_iter_mut().zip(&self.explained_variance) {
                col *= var.sqrt();
            }
        }
        let mut x = y * &self.components;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    if x.nrows() == 0 {
        return DVector::zeros(x.ncols());
    }
    x.row_mean().transpose()
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Eigenpairs of a symmetric matrix sorted by eigenvalue, descending.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

/// Flip `v` so that its largest-magnitude entry is positive.
fn fix_sign(mut v: DVector<f64>) -> DVector<f64> {
    if let Some((i, _)) = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
        if v[i] < 0.0 {
            v.neg_mut();
        }
    }
    v
}

/// PCA on the rows of `x` (T x d), keeping the fewest components whose
/// cumulative explained variance ratio reaches `evr_threshold`.
pub fn pca_fit(x: &DMatrix<f64>, evr_threshold: f64, whiten: bool) -> Result<PcaModel> {
    if !(evr_threshold > 0.0 && evr_threshold <= 1.0) {
        return Err(Error::domain(format!("EVR threshold must lie in (0, 1], got {evr_threshold}")));
    }
    let (mean, values, vectors) = pca_spectrum(x)?;
    let d = values.len();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || values[0] <= 1e-14 * total.max(f64::MIN_POSITIVE) {
        log::warn!("zero-variance input; returning a degenerate single-component PCA model");
        let mut components = DMatrix::zeros(1, d);
        components[(0, 0)] = 1.0;
        return Ok(PcaModel {
            mean,
            components,
            explained_variance: vec![0.0],
            explained_variance_ratio: vec![0.0],
            whiten,
            degenerate: true,
        });
    }
    let mut cum = 0.0;
    let mut k = d;
    for (i, v) in values.iter().enumerate() {
        cum += v / total;
        if cum >= evr_threshold - 1e-12 {
            k = i + 1;
            break;
        }
    }
    Ok(truncate_pca(mean, &values, &vectors, k, whiten))
}

/// PCA keeping exactly `k` components. Fails when the input rank is below `k`.
pub fn pca_fit_n(x: &DMatrix<f64>, k: usize, whiten: bool) -> Result<PcaModel> {
    let (mean, values, vectors) = pca_spectrum(x)?;
    if k == 0 || k > values.len() {
        return Err(Error::domain(format!("cannot keep {k} of {} components", values.len())));
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || values[k - 1] <= 1e-12 * total {
        return Err(Error::Numerical(format!("input rank is below {k}; PCA model would be degenerate")));
    }
    Ok(truncate_pca(mean, &values, &vectors, k, whiten))
}

/// Mean, sorted clipped covariance eigenvalues and eigenvectors (ddof 1).
fn pca_spectrum(x: &DMatrix<f64>) -> Result<(DVector<f64>, Vec<f64>, DMatrix<f64>)> {
    let (t, d) = x.shape();
    if t < 2 || d == 0 {
        return Err(Error::domain(format!("PCA needs at least 2 frames and 1 column, got {t}x{d}")));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("PCA input has non-finite values".into()));
    }
    let mean = column_mean(x);
    let xc = center(x, &mean);
    let cov = xc.tr_mul(&xc) / (t - 1) as f64;
    let (values, vectors) = sorted_eigen(cov);
    let values = values.into_iter().map(|v| v.max(0.0)).collect();
    Ok((mean, values, vectors))
}

fn truncate_pca(mean: DVector<f64>, values: &[f64], vectors: &DMatrix<f64>, k: usize, whiten: bool) -> PcaModel {
    let total: f64 = values.iter().sum();
    let rows: Vec<_> = (0..k)
        .map(|i| fix_sign(vectors.column(i).into_owned()).transpose())
        .collect();
    PcaModel {
        mean,
        components: DMatrix::from_rows(&rows),
        explained_variance: values[..k].to_vec(),
        explained_variance_ratio: values[..k].iter().map(|v| v / total).collect(),
        whiten,
        degenerate: false,
    }
}

/// Implied timescale in frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timescale {
    Finite(f64),
    /// λ ≥ 1.
    Infinite,
    /// λ ≤ 0.
    Undefined,
}

impl Timescale {
    pub fn value(self) -> Option<f64> {
        match self {
            Timescale::Finite(t) => Some(t),
            _ => None,
        }
    }

    /// Numeric encoding with `+inf` and `NaN` markers.
    pub fn to_f64(self) -> f64 {
        match self {
            Timescale::Finite(t) => t,
            Timescale::Infinite => f64::INFINITY,
            Timescale::Undefined => f64::NAN,
        }
    }
}

impl Serialize for Timescale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Timescale::Finite(t) => s.serialize_f64(*t),
            Timescale::Infinite => s.serialize_str("inf"),
            Timescale::Undefined => s.serialize_none(),
        }
    }
}

pub fn implied_timescale(lambda: f64, lag: usize) -> Timescale {
    if !(lambda > 0.0) {
        Timescale::Undefined
    } else if lambda >= 1.0 {
        Timescale::Infinite
    } else {
        Timescale::Finite(-(lag as f64) / lambda.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicaMode {
    /// Symmetrized C(τ) and C(0) estimated over both windows.
    #[default]
    Reversible,
    /// Literal C(τ) v = λ C(0) v without symmetrization.
    NonReversible,
}

#[derive(Debug, Clone)]
pub struct TicaModel {
    pub lag: usize,
    pub mode: TicaMode,
    pub mean: DVector<f64>,
    /// Sorted by magnitude, descending. Real parts in non-reversible mode.
    pub eigenvalues: Vec<f64>,
    /// Imaginary parts; all zero in reversible mode.
    pub eigenvalues_imag: Vec<f64>,
    /// d x d, columns are eigenvectors normalized to vᵀ C(0) v = 1.
    pub eigenvectors: DMatrix<f64>,
    pub timescales: Vec<Timescale>,
    /// VAMP-2 over all input dimensions.
    pub vamp2: f64,
    /// Input had no variance; eigenvalues are zero placeholders.
    pub degenerate: bool,
}

impl TicaModel {
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        center(x, &self.mean) * &self.eigenvectors
    }

    pub fn summary(&self) -> TicaSummary {
        TicaSummary {
            lag: self.lag,
            mode: self.mode,
            eigenvalues: self.eigenvalues.clone(),
            eigenvalues_imag: self.eigenvalues_imag.clone(),
            timescales: self.timescales.clone(),
            vamp2: self.vamp2,
            degenerate: self.degenerate,
        }
    }
}

/// JSON-facing view of a [`TicaModel`].
#[derive(Debug, Clone, Serialize)]
pub struct TicaSummary {
    pub lag: usize,
    pub mode: TicaMode,
    pub eigenvalues: Vec<f64>,
    pub eigenvalues_imag: Vec<f64>,
    pub timescales: Vec<Timescale>,
    pub vamp2: f64,
    pub degenerate: bool,
}

fn check_series(x: &DMatrix<f64>, lag: usize) -> Result<()> {
    if lag == 0 {
        return Err(Error::domain("lag must be at least 1"));
    }
    if lag >= x.nrows() {
        return Err(Error::domain(format!("lag {lag} must be smaller than the series length {}", x.nrows())));
    }
    if x.ncols() == 0 {
        return Err(Error::domain("series has no columns"));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("series has non-finite values".into()));
    }
    Ok(())
}

struct Windows {
    x0: DMatrix<f64>,
    xt: DMatrix<f64>,
}

fn windows(x: &DMatrix<f64>, lag: usize) -> Windows {
    let n = x.nrows() - lag;
    Windows {
        x0: x.rows(0, n).into_owned(),
        xt: x.rows(lag, n).into_owned(),
    }
}

fn degenerate_tica(lag: usize, mode: TicaMode, mean: DVector<f64>) -> TicaModel {
    log::warn!("zero-variance series; returning a degenerate TICA model");
    let d = mean.len();
    TicaModel {
        lag,
        mode,
        mean,
        eigenvalues: vec![0.0; d],
        eigenvalues_imag: vec![0.0; d],
        eigenvectors: DMatrix::identity(d, d),
        timescales: vec![Timescale::Undefined; d],
        vamp2: 0.0,
        degenerate: true,
    }
}

/// Solve C(τ) v = λ C(0) v on a (whitened) series `x` (T x d).
pub fn tica_fit(x: &DMatrix<f64>, lag: usize, mode: TicaMode) -> Result<TicaModel> {
    check_series(x, lag)?;
    let d = x.ncols();
    let Windows { x0, xt } = windows(x, lag);
    let n = x0.nrows() as f64;
    let mean = match mode {
        TicaMode::Reversible => (column_mean(&x0) + column_mean(&xt)) * 0.5,
        TicaMode::NonReversible => column_mean(&x0),
    };
    let (x0, xt) = (center(&x0, &mean), center(&xt, &mean));
    let (mut c0, ct) = match mode {
        TicaMode::Reversible => {
            let c0 = (x0.tr_mul(&x0) + xt.tr_mul(&xt)) / (2.0 * n);
            let c = x0.tr_mul(&xt);
            (c0, (&c + c.transpose()) / (2.0 * n))
        }
        TicaMode::NonReversible => (x0.tr_mul(&x0) / n, x0.tr_mul(&xt) / n),
    };
    let trace = c0.trace();
    if !(trace > 0.0) {
        return Ok(degenerate_tica(lag, mode, mean));
    }
    for i in 0..d {
        c0[(i, i)] += C0_REGULARIZATION * trace / d as f64;
    }
    let chol = Cholesky::new(c0).ok_or_else(|| Error::Numerical("C(0) is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor of C(0)".into()))?;
    let a = &l_inv * &ct * l_inv.transpose();

    let (values, imag, y) = match mode {
        TicaMode::Reversible => {
            let a = (&a + a.transpose()) * 0.5;
            let eig = SymmetricEigen::new(a);
            let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            (values, vec![0.0; d], eig.eigenvectors)
        }
        TicaMode::NonReversible => nonsymmetric_eigen(&a),
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        let mi = values[i].hypot(imag[i]);
        let mj = values[j].hypot(imag[j]);
        mj.total_cmp(&mi)
    });
    let l_inv_t = l_inv.transpose();
    let vectors: Vec<DVector<f64>> = order
        .iter()
        .map(|&i| fix_sign(&l_inv_t * y.column(i)))
        .collect();
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let eigenvalues_imag: Vec<f64> = order.iter().map(|&i| imag[i]).collect();
    let timescales = eigenvalues.iter().map(|&l| implied_timescale(l, lag)).collect();
    Ok(TicaModel {
        lag,
        mode,
        mean,
        eigenvalues,
        eigenvalues_imag,
        eigenvectors: DMatrix::from_columns(&vectors),
        timescales,
        vamp2: vamp2_score(x, lag, None)?,
        degenerate: false,
    })
}

/// Eigenvalues (real, imaginary) of a general square matrix with unit
/// right singular vectors of `A − Re(λ) I` as eigenvector estimates.
fn nonsymmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let ev = a.complex_eigenvalues();
    let re: Vec<f64> = ev.iter().map(|c| c.re).collect();
    let im: Vec<f64> = ev.iter().map(|c| c.im).collect();
    let cols: Vec<DVector<f64>> = re
        .iter()
        .map(|&l| {
            let shifted = a - DMatrix::identity(d, d) * l;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.expect("right singular vectors requested");
            let k = (0..d)
                .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
                .unwrap_or(0);
            v_t.row(k).transpose()
        })
        .collect();
    (re, im, DMatrix::from_columns(&cols))
}

/// Symmetric inverse square root, dropping near-null directions.
fn inv_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(c.nrows(), c.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 1e-10 * lmax && l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / l.sqrt();
        }
    }
    out
}

/// Sum of the `k` largest squared singular values of
/// `C00^{-1/2} C0τ Cττ^{-1/2}`. `k` defaults to the number of columns.
pub fn vamp2_score(x: &DMatrix<f64>, lag: usize, k: Option<usize>) -> Result<f64> {
    check_series(x, lag)?;
    let k = k.unwrap_or(x.ncols());
    if k == 0 {
        return Err(Error::domain("VAMP-2 needs k >= 1"));
    }
    let Windows { x0, xt } = windows(x, lag);
    let x0 = center(&x0, &column_mean(&x0));
    let xt = center(&xt, &column_mean(&xt));
    let n = x0.nrows() as f64;
    let c00 = x0.tr_mul(&x0) / n;
    let ctt = xt.tr_mul(&xt) / n;
    let c0t = x0.tr_mul(&xt) / n;
    let koopman = inv_sqrt(&c00) * c0t * inv_sqrt(&ctt);
    let mut s: Vec<f64> = koopman.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s.iter().take(k).map(|v| v * v).sum())
}

/// Lag fractions 0.01, 0.02, …, 0.10 of the series length.
pub fn default_lag_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

/// Lags (frames) for the given fractions of `n_frames`, rounded, clamped to
/// at least 1, deduplicated and sorted.
pub fn lag_grid(n_frames: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() {
        return Err(Error::domain("empty lag fraction grid"));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::domain(format!("lag fraction {f} outside (0, 1)")));
    }
    let smallest = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest * (n_frames as f64) < 1.0 {
        return Err(Error::domain(format!(
            "{n_frames} frames are too few: the smallest lag fraction {smallest} is under one frame"
        )));
    }
    let mut lags: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n_frames as f64).round() as usize).max(1))
        .collect();
    lags.sort_unstable();
    lags.dedup();
    Ok(lags)
}

#[derive(Debug, Clone, Serialize)]
pub struct LagSearchResult {
    pub lags: Vec<usize>,
    /// Per lag, the timescales of the slowest components (up to two).
    pub timescale_curves: Vec<Vec<Timescale>>,
    pub vamp2: Vec<f64>,
    pub plateau_lag: Option<usize>,
}

/// First lag from which the slowest timescale changes by less than 10 %
/// over three consecutive increments.
pub fn find_plateau(lags: &[usize], slowest: &[Timescale]) -> Option<usize> {
    let flat: Vec<bool> = slowest
        .windows(2)
        .map(|w| match (w[0].value(), w[1].value()) {
            (Some(a), Some(b)) if a > 0.0 => ((b - a) / a).abs() < PLATEAU_REL_CHANGE,
            _ => false,
        })
        .collect();
    (0..flat.len())
        .find(|&i| i + PLATEAU_RUN <= flat.len() && flat[i..i + PLATEAU_RUN].iter().all(|&f| f))
        .map(|i| lags[i])
}

/// Fit TICA at every lag and locate the timescale plateau.
pub fn lag_search_lags(x: &DMatrix<f64>, lags: &[usize], mode: TicaMode) -> Result<LagSearchResult> {
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    let mut curves = Vec::with_capacity(lags.len());
    let mut vamp2 = Vec::with_capacity(lags.len());
    for &lag in &lags {
        let model = tica_fit(x, lag, mode)?;
        curves.push(model.timescales.iter().take(2).copied().collect::<Vec<_>>());
        vamp2.push(model.vamp2);
    }
    let slowest: Vec<Timescale> = curves.iter().map(|c| c[0]).collect();
    let plateau_lag = find_plateau(&lags, &slowest);
    Ok(LagSearchResult {
        lags,
        timescale_curves: curves,
        vamp2,
        plateau_lag,
    })
}

/// [`lag_search_lags`] on the grid built from `fractions` of the series length.
pub fn lag_search(x: &DMatrix<f64>, fractions: &[f64], mode: TicaMode) -> Result<LagSearchResult> {
    lag_search_lags(x, &lag_grid(x.nrows(), fractions)?, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmuseSettings {
    pub evr_threshold: f64,
    pub lag: usize,
    #[serde(default)]
    pub mode: TicaMode,
    /// Number of leading TICs returned as projections.
    pub n_projections: usize,
}

impl Default for AmuseSettings {
    fn default() -> Self {
        AmuseSettings {
            evr_threshold: 0.95,
            lag: 1,
            mode: TicaMode::Reversible,
            n_projections: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AmuseResult {
    pub pca: PcaModel,
    pub tica: TicaModel,
    /// T x min(n_projections, k) leading TIC projections.
    pub projections: DMatrix<f64>,
}

impl AmuseResult {
    pub fn summary(&self) -> AmuseSummary {
        AmuseSummary {
            pca_components: self.pca.n_components(),
            explained_variance_ratio: self.pca.explained_variance_ratio.clone(),
            pca_degenerate: self.pca.degenerate,
            tica: self.tica.summary(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmuseSummary {
    pub pca_components: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub pca_degenerate: bool,
    pub tica: TicaSummary,
}

/// Whitened PCA followed by TICA on the retained components.
pub fn amuse(x: &DMatrix<f64>, settings: &AmuseSettings) -> Result<AmuseResult> {
    let pca = pca_fit(x, settings.evr_threshold, true)?;
    let y = pca.transform(x);
    let tica = tica_fit(&y, settings.lag, settings.mode)?;
    let k = settings.n_projections.min(tica.eigenvectors.ncols());
    let projections = tica.transform(&y).columns(0, k).into_owned();
    Ok(AmuseResult { pca, tica, projections })
}
