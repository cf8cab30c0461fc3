//! Tangent features of Cα point clouds.
//!
//! The metric at a base configuration `P` is the Gram matrix of the
//! gradients of all squared pair distances, `M = Σ_{i<j} a_ij a_ijᵀ` with
//! `a_ij = ∂‖p_i − p_j‖²/∂P`. A cloud `X` is mapped to the tangent vector
//! `ξ = M⁺ Σ a_ij (‖x_i − x_j‖² − ‖p_i − p_j‖²)`, where `M⁺` keeps only
//! eigenvalues at or above `δ·λ_max`. [`metric_tensor`] is the single place
//! that defines the metric.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::so3::MeanSettings;
use crate::trajio::{BackboneTrajectory, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointcloudSettings {
    /// Relative eigenvalue cutoff of the metric pseudo-inverse.
    pub delta: f64,
    pub mean_settings: MeanSettings,
}

impl Default for PointcloudSettings {
    /// δ = 0.1; mean with 256 iterations, learning rate 1, threshold 1.
    fn default() -> Self {
        PointcloudSettings {
            delta: 0.1,
            mean_settings: MeanSettings {
                max_iters: 256,
                learning_rate: 1.0,
                tol: 1.0,
                ..MeanSettings::default()
            },
        }
    }
}

impl PointcloudSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::domain(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        self.mean_settings.validate()
    }
}

#[derive(Debug, Clone)]
pub enum PointcloudReference {
    /// Base configuration, one point per residue.
    Fixed(Vec<Point>),
    IntrinsicMean,
}

/// Metric tensor (3R x 3R) at the base configuration.
pub fn metric_tensor(base: &[Point]) -> DMatrix<f64> {
    let n = base.len();
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in i + 1..n {
            let d = base[i] - base[j];
            let block = d * d.transpose() * 4.0;
            for (a, b, sign) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                let mut view = m.fixed_view_mut::<3, 3>(3 * a, 3 * b);
                view += block * sign;
            }
        }
    }
    m
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct MetricInverse {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
}

/// Pseudo-inverse by eigendecomposition, dropping eigenvalues below
/// `rel_cutoff · λ_max`.
pub fn metric_pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> Result<MetricInverse> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical("metric tensor has non-finite entries".into()));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::Numerical("metric eigendecomposition did not converge".into()))?;
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    if lmax > 0.0 {
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam >= rel_cutoff * lmax {
                let v = eig.eigenvectors.column(k);
                pinv += v * v.transpose() / lam;
                rank += 1;
            }
        }
    }
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(MetricInverse { pinv, rank, eigenvalues })
}

/// Log map at a fixed base configuration.
#[derive(Debug, Clone)]
pub struct PointcloudChart {
    base: Vec<Point>,
    inverse: MetricInverse,
}

impl PointcloudChart {
    pub fn new(base: Vec<Point>, delta: f64) -> Result<Self> {
        if let Some(i) = base.iter().position(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::domain(format!("base point {i} is not finite")));
        }
        let inverse = metric_pseudo_inverse(&metric_tensor(&base), delta)?;
        Ok(PointcloudChart { base, inverse })
    }

    pub fn base(&self) -> &[Point] {
        &self.base
    }

    pub fn inverse(&self) -> &MetricInverse {
        &self.inverse
    }

    /// Tangent vector (length 3R) pointing from the base towards `cloud`.
    pub fn log(&self, cloud: &[Point]) -> Result<DVector<f64>> {
        let n = self.base.len();
        if cloud.len() != n {
            return Err(Error::Structure(format!("cloud has {} points, base has {n}", cloud.len())));
        }
        let mut b = DVector::zeros(3 * n);
        for i in 0..n {
            for j in i + 1..n {
                let d = self.base[i] - self.base[j];
                let delta = (cloud[i] - cloud[j]).norm_squared() - d.norm_squared();
                let g = d * (2.0 * delta);
                let mut bi = b.fixed_rows_mut::<3>(3 * i);
                bi += g;
                let mut bj = b.fixed_rows_mut::<3>(3 * j);
                bj -= g;
            }
        }
        Ok(&self.inverse.pinv * b)
    }
}

#[derive(Debug, Clone)]
pub struct PointcloudMean {
    pub mean: Vec<Point>,
    pub converged: bool,
    pub iters: usize,
    pub gradient_norm: f64,
}

fn mean_log(chart: &PointcloudChart, clouds: &[Vec<Point>]) -> Result<DVector<f64>> {
    let sum = clouds
        .par_iter()
        .map(|c| chart.log(c))
        .try_reduce(|| DVector::zeros(3 * chart.base.len()), |a, b| Ok(a + b))?;
    Ok(sum / clouds.len() as f64)
}

/// Intrinsic mean on the point-cloud manifold, seeded with the first cloud.
pub fn pointcloud_mean(clouds: &[Vec<Point>], settings: &PointcloudSettings) -> Result<PointcloudMean> {
    settings.validate()?;
    let Some(first) = clouds.first() else {
        return Err(Error::domain("point-cloud mean of an empty sequence"));
    };
    let s = &settings.mean_settings;
    let mut chart = PointcloudChart::new(first.clone(), settings.delta).map_err(|e| e.in_frame(0))?;
    let mut grad = mean_log(&chart, clouds)?;
    let mut iters = 0;
    while iters < s.max_iters && grad.norm() >= s.tol {
        let next = chart
            .base
            .iter()
            .enumerate()
            .map(|(i, p)| p + grad.fixed_rows::<3>(3 * i) * s.learning_rate)
            .collect();
        iters += 1;
        chart = PointcloudChart::new(next, settings.delta)
            .map_err(|e| Error::Numerical(format!("mean iteration {iters}: {e}")))?;
        grad = mean_log(&chart, clouds)?;
    }
    let gradient_norm = grad.norm();
    Ok(PointcloudMean {
        mean: chart.base,
        converged: gradient_norm < s.tol,
        iters,
        gradient_norm,
    })
}

/// Per-frame tangent vectors of the Cα cloud.
pub fn pointcloud_features(
    traj: &BackboneTrajectory,
    reference: &PointcloudReference,
    settings: &PointcloudSettings,
) -> Result<FeatureMatrix> {
    settings.validate()?;
    let clouds: Vec<Vec<Point>> = (0..traj.n_frames()).map(|t| traj.ca(t)).collect();
    let (chart, kind) = match reference {
        PointcloudReference::Fixed(base) => {
            if base.len() != traj.n_residues() {
                return Err(Error::Structure(format!(
                    "reference has {} residues, trajectory has {}",
                    base.len(),
                    traj.n_residues()
                )));
            }
            (PointcloudChart::new(base.clone(), settings.delta)?, FeatureKind::Pointcloud)
        }
        PointcloudReference::IntrinsicMean => {
            let mean = pointcloud_mean(&clouds, settings)?;
            if !mean.converged {
                log::warn!(
                    "point-cloud mean did not converge after {} iterations (gradient norm {:.3e})",
                    mean.iters,
                    mean.gradient_norm
                );
            }
            (PointcloudChart::new(mean.mean, settings.delta)?, FeatureKind::PointcloudMean)
        }
    };
    let rows = clouds
        .par_iter()
        .enumerate()
        .map(|(t, c)| chart.log(c).map_err(|e| e.in_frame(t)))
        .collect::<Result<Vec<_>>>()?;
    let data = rows.iter().flat_map(|v| v.iter().copied()).collect();
    FeatureMatrix::new(kind, traj.n_frames(), traj.n_residues(), data)
}
