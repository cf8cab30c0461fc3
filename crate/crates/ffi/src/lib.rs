//! C ABI over the orientfeat core.
//!
//! Every fallible call returns an [`OfStatus`]; on failure
//! [`of_last_error`] describes the problem for the calling thread. Results
//! come back as opaque handles that the caller releases with the matching
//! `*_free` function. Input buffers are row-major `double` arrays and are
//! only read during the call.

pub mod array;

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use orientfeat::features::{FeatureKind, FeaturizeOptions};
use orientfeat::features::pointcloud::PointcloudSettings;
use orientfeat::so3::{MeanInit, MeanSettings};

use array::{AmuseArrays, Array2, BridgeError};

pub const OF_KIND_ORIENTATION: u32 = 0;
pub const OF_KIND_ORIENTATION_MEAN: u32 = 1;
pub const OF_KIND_ORIENTATION_AXIS: u32 = 2;
pub const OF_KIND_ORIENTATION_ANGLE: u32 = 3;
pub const OF_KIND_CA: u32 = 4;
pub const OF_KIND_TORSION: u32 = 5;
pub const OF_KIND_POINTCLOUD: u32 = 6;
pub const OF_KIND_POINTCLOUD_MEAN: u32 = 7;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfStatus {
    Ok = 0,
    NullPointer = 1,
    /// Buffer length or dimensions inconsistent with the declared shape.
    Shape = 2,
    Format = 3,
    Parse = 4,
    Structure = 5,
    DegenerateGeometry = 6,
    DegenerateResidue = 7,
    Domain = 8,
    Numerical = 9,
    Config = 10,
    Io = 11,
    Json = 12,
    /// Unknown representation tag or invalid scalar argument.
    InvalidArgument = 13,
    Panic = 14,
}

impl OfStatus {
    fn of_error(e: &BridgeError) -> Self {
        use orientfeat::Error as E;
        match e {
            BridgeError::Shape(_) => OfStatus::Shape,
            BridgeError::Core(e) => match e {
                E::Format { .. } => OfStatus::Format,
                E::Parse { .. } => OfStatus::Parse,
                E::Structure(_) => OfStatus::Structure,
                E::DegenerateGeometry(_) => OfStatus::DegenerateGeometry,
                E::DegenerateResidue { .. } => OfStatus::DegenerateResidue,
                E::Domain(_) => OfStatus::Domain,
                E::Numerical(_) => OfStatus::Numerical,
                E::Config(_) => OfStatus::Config,
                E::Io { .. } => OfStatus::Io,
                E::Json(_) => OfStatus::Json,
            },
        }
    }
}

/// Settings for the mean-referenced representations; start from
/// [`of_featurize_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfFeaturizeOptions {
    pub mean_max_iters: usize,
    pub mean_learning_rate: f64,
    pub mean_tol: f64,
    /// Relative eigenvalue cutoff of the pointcloud metric pseudo-inverse.
    pub pointcloud_delta: f64,
    pub pointcloud_mean_max_iters: usize,
    pub pointcloud_mean_learning_rate: f64,
    pub pointcloud_mean_tol: f64,
}

impl From<&FeaturizeOptions> for OfFeaturizeOptions {
    fn from(o: &FeaturizeOptions) -> Self {
        OfFeaturizeOptions {
            mean_max_iters: o.mean.max_iters,
            mean_learning_rate: o.mean.learning_rate,
            mean_tol: o.mean.tol,
            pointcloud_delta: o.pointcloud.delta,
            pointcloud_mean_max_iters: o.pointcloud.mean_settings.max_iters,
            pointcloud_mean_learning_rate: o.pointcloud.mean_settings.learning_rate,
            pointcloud_mean_tol: o.pointcloud.mean_settings.tol,
        }
    }
}

impl From<&OfFeaturizeOptions> for FeaturizeOptions {
    fn from(o: &OfFeaturizeOptions) -> Self {
        FeaturizeOptions {
            mean: MeanSettings {
                max_iters: o.mean_max_iters,
                learning_rate: o.mean_learning_rate,
                tol: o.mean_tol,
                init: MeanInit::FirstSample,
            },
            pointcloud: PointcloudSettings {
                delta: o.pointcloud_delta,
                mean_settings: MeanSettings {
                    max_iters: o.pointcloud_mean_max_iters,
                    learning_rate: o.pointcloud_mean_learning_rate,
                    tol: o.pointcloud_mean_tol,
                    init: MeanInit::FirstSample,
                },
            },
        }
    }
}

/// Owned row-major matrix.
pub struct OfMatrix(Array2);

/// AMUSE result.
pub struct OfAmuse {
    arrays: AmuseArrays,
    projections: OfMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Run `f`, translating errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), (OfStatus, String)>) -> OfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            OfStatus::Panic
        }
    }
}

fn bridge(e: BridgeError) -> (OfStatus, String) {
    (OfStatus::of_error(&e), e.to_string())
}

fn null(what: &str) -> (OfStatus, String) {
    (OfStatus::NullPointer, format!("{what} is NULL"))
}

/// # Safety
/// `ptr` must be NULL or valid for `len` reads.
unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (OfStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn checked_len(dims: &[usize], what: &str) -> Result<usize, (OfStatus, String)> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| (OfStatus::Shape, format!("{what}: shape {dims:?} overflows")))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn of_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn of_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn of_featurize_options_default() -> OfFeaturizeOptions {
    OfFeaturizeOptions::from(&FeaturizeOptions::default())
}

/// Compute one representation (`OF_KIND_*`) of a trajectory.
///
/// `coords` holds `n_frames * n_residues * 9` values ordered frame, residue,
/// atom (N, CA, C), coordinate. `reference` is NULL (frame 0 serves as the
/// fixed reference) or `n_residues * 9` values. `options` may be NULL for the
/// defaults. On success `*out` receives an `n_frames x d` matrix.
///
/// # Safety
/// Pointers must be NULL or valid for the stated number of reads; `out`
/// must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn of_featurize(
    coords: *const f64,
    n_frames: usize,
    n_residues: usize,
    kind: u32,
    reference: *const f64,
    options: *const OfFeaturizeOptions,
    out: *mut *mut OfMatrix,
) -> OfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let kind = u8::try_from(kind)
            .ok()
            .and_then(FeatureKind::from_tag)
            .ok_or_else(|| (OfStatus::InvalidArgument, format!("unknown representation tag {kind}")))?;
        let coords = slice(coords, checked_len(&[n_frames, n_residues, 9], "coords")?, "coords")?;
        let reference = if reference.is_null() {
            None
        } else {
            Some(slice(reference, checked_len(&[n_residues, 9], "reference")?, "reference")?)
        };
        let opts = if options.is_null() { FeaturizeOptions::default() } else { FeaturizeOptions::from(&*options) };
        let m = array::featurize_array(coords, n_frames, n_residues, kind, reference, &opts).map_err(bridge)?;
        *out = Box::into_raw(Box::new(OfMatrix(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn of_matrix_rows(m: *const OfMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows)
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn of_matrix_cols(m: *const OfMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols)
}

/// Row-major `rows * cols` values owned by the handle.
///
/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn of_matrix_data(m: *const OfMatrix) -> *const f64 {
    m.as_ref().map_or(ptr::null(), |m| m.0.data.as_ptr())
}

/// # Safety
/// `m` must be NULL or a handle returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn of_matrix_free(m: *mut OfMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Whitened PCA keeping the smallest component count whose cumulative
/// explained variance reaches `evr`, then reversible TICA at `lag`.
/// `features` is `rows x cols`, row-major.
///
/// # Safety
/// `features` must be valid for `rows * cols` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn of_amuse(
    features: *const f64,
    rows: usize,
    cols: usize,
    evr: f64,
    lag: usize,
    n_projections: usize,
    out: *mut *mut OfAmuse,
) -> OfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let x = slice(features, checked_len(&[rows, cols], "features")?, "features")?;
        let arrays = array::amuse_array(x, rows, cols, evr, lag, n_projections).map_err(bridge)?;
        let projections = OfMatrix(arrays.projections.clone());
        *out = Box::into_raw(Box::new(OfAmuse { arrays, projections }));
        Ok(())
    })
}

/// Number of TICA components (length of the eigenvalue and timescale arrays).
///
/// # Safety
/// `a` must be a live AMUSE handle.
#[no_mangle]
pub unsafe extern "C" fn of_amuse_n_components(a: *const OfAmuse) -> usize {
    a.as_ref().map_or(0, |a| a.arrays.eigenvalues.len())
}

/// # Safety
/// `a` must be a live AMUSE handle.
#[no_mangle]
pub unsafe extern "C" fn of_amuse_eigenvalues(a: *const OfAmuse) -> *const f64 {
    a.as_ref().map_or(ptr::null(), |a| a.arrays.eigenvalues.as_ptr())
}

/// Implied timescales in frames; `INFINITY` for λ ≥ 1 and NaN for λ ≤ 0.
///
/// # Safety
/// `a` must be a live AMUSE handle.
#[no_mangle]
pub unsafe extern "C" fn of_amuse_timescales(a: *const OfAmuse) -> *const f64 {
    a.as_ref().map_or(ptr::null(), |a| a.arrays.timescales.as_ptr())
}

/// Projections onto the leading TICs, borrowed from the AMUSE handle.
///
/// # Safety
/// `a` must be a live AMUSE handle.
#[no_mangle]
pub unsafe extern "C" fn of_amuse_projections(a: *const OfAmuse) -> *const OfMatrix {
    a.as_ref().map_or(ptr::null(), |a| &a.projections as *const OfMatrix)
}

/// True when the input had no variance and the model is a placeholder.
///
/// # Safety
/// `a` must be a live AMUSE handle.
#[no_mangle]
pub unsafe extern "C" fn of_amuse_degenerate(a: *const OfAmuse) -> bool {
    a.as_ref().is_some_and(|a| a.arrays.degenerate)
}

/// # Safety
/// `a` must be NULL or a handle returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn of_amuse_free(a: *mut OfAmuse) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}
