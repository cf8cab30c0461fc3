//! Seeded synthetic inputs and a wall-clock profiler for the hot kernels.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, UnitSphere, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::pointcloud::{metric_pseudo_inverse, metric_tensor, PointcloudChart};
use crate::features::LcsStack;
use crate::so3::{log_map_batch, Rotation, DEFAULT_LOG_EPS};
use crate::trajio::Point;

/// Relative eigenvalue cutoff used when profiling the metric inverse.
pub const BENCH_DELTA: f64 = 0.1;

/// Rotations about uniform axes with angles uniform on [0, π).
pub fn gen_random_rotations(t: usize, r: usize, seed: u64) -> Result<LcsStack> {
    if t == 0 || r == 0 {
        return Err(Error::domain("need at least one frame and one residue"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rots = (0..t * r)
        .map(|_| {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let angle = rng.random_range(0.0..PI);
            Rotation::about_axis(&Vector3::from(axis), angle)
        })
        .collect();
    LcsStack::new(t, r, rots)
}

/// `t` clouds of `r` standard-normal points.
pub fn gen_random_pointclouds(t: usize, r: usize, seed: u64) -> Result<Vec<Vec<Point>>> {
    if t == 0 || r == 0 {
        return Err(Error::domain("need at least one frame and one residue"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..t)
        .map(|_| {
            (0..r)
                .map(|_| Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    So3Log,
    PointcloudLog,
    MetricTensor,
    MetricInverse,
}

impl Operation {
    pub const ALL: [Operation; 4] = [
        Operation::So3Log,
        Operation::PointcloudLog,
        Operation::MetricTensor,
        Operation::MetricInverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::So3Log => "so3_log",
            Operation::PointcloudLog => "pointcloud_log",
            Operation::MetricTensor => "metric_tensor",
            Operation::MetricInverse => "metric_inverse",
        }
    }

    /// Metric operations act on a single base cloud and ignore T.
    pub fn uses_frames(self) -> bool {
        matches!(self, Operation::So3Log | Operation::PointcloudLog)
    }

    /// Smallest residue count the operation is defined for.
    pub fn min_residues(self) -> usize {
        if self == Operation::So3Log { 1 } else { 2 }
    }
}

impl std::str::FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Operation::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operation '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGrid {
    pub sample_counts: Vec<usize>,
    pub residue_counts: Vec<usize>,
    pub replicas: usize,
    /// Each timed sample repeats the call until this much time has passed
    /// and reports the per-call mean.
    pub min_sample_seconds: f64,
    pub seed: u64,
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|e| 1usize << e).collect()
}

impl ProfileGrid {
    /// T in 2^0..2^16, R in 2^2..2^8.
    pub fn desk() -> Self {
        ProfileGrid {
            sample_counts: powers_of_two(0, 16),
            residue_counts: powers_of_two(2, 8),
            replicas: 3,
            min_sample_seconds: 0.0,
            seed: 0,
        }
    }

    /// T in 2^0..2^19, R in 2^2..2^9.
    pub fn full() -> Self {
        ProfileGrid {
            sample_counts: powers_of_two(0, 19),
            residue_counts: powers_of_two(2, 9),
            ..ProfileGrid::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        if self.sample_counts.is_empty() || self.residue_counts.is_empty() {
            return Err(Error::Config("profile grid is empty".into()));
        }
        if self.sample_counts.contains(&0) || self.residue_counts.contains(&0) {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        if !(self.min_sample_seconds >= 0.0) {
            return Err(Error::Config("min_sample_seconds must be non-negative".into()));
        }
        Ok(())
    }
}

enum Prepared {
    Rotations(LcsStack),
    Clouds(PointcloudChart, Vec<Vec<Point>>),
    Base(Vec<Point>),
    Metric(nalgebra::DMatrix<f64>),
}

fn prepare(op: Operation, t: usize, r: usize, seed: u64) -> Result<Prepared> {
    Ok(match op {
        Operation::So3Log => Prepared::Rotations(gen_random_rotations(t, r, seed)?),
        Operation::PointcloudLog => {
            let mut clouds = gen_random_pointclouds(t + 1, r, seed)?;
            let base = clouds.remove(0);
            Prepared::Clouds(PointcloudChart::new(base, BENCH_DELTA)?, clouds)
        }
        Operation::MetricTensor => Prepared::Base(gen_random_pointclouds(1, r, seed)?.remove(0)),
        Operation::MetricInverse => {
            Prepared::Metric(metric_tensor(&gen_random_pointclouds(1, r, seed)?[0]))
        }
    })
}

fn run(p: &Prepared) -> Result<()> {
    match p {
        Prepared::Rotations(stack) => {
            black_box(log_map_batch(stack.rotations(), stack.n_residues(), DEFAULT_LOG_EPS));
        }
        Prepared::Clouds(chart, clouds) => {
            let out: Result<Vec<_>> = clouds.par_iter().map(|c| chart.log(c)).collect();
            black_box(out?);
        }
        Prepared::Base(base) => {
            black_box(metric_tensor(base));
        }
        Prepared::Metric(m) => {
            black_box(metric_pseudo_inverse(m, BENCH_DELTA)?);
        }
    }
    Ok(())
}

/// Mean seconds per call for each replica, after one discarded warm-up call.
/// Input generation is outside the timed region.
pub fn time_operation(
    op: Operation,
    t: usize,
    r: usize,
    replicas: usize,
    min_sample_seconds: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if r < op.min_residues() {
        return Err(Error::domain(format!("{} needs at least {} residues", op.name(), op.min_residues())));
    }
    let t = if op.uses_frames() { t } else { 1 };
    let budget = Duration::from_secs_f64(min_sample_seconds);
    (0..replicas)
        .map(|k| {
            let input = prepare(op, t, r, seed.wrapping_add(k as u64))?;
            run(&input)?;
            let start = Instant::now();
            let mut calls = 0u32;
            loop {
                run(&input)?;
                calls += 1;
                if start.elapsed() >= budget {
                    break;
                }
            }
            Ok(start.elapsed().as_secs_f64() / calls as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRecord {
    pub op: Operation,
    pub t: usize,
    pub r: usize,
    pub replica: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ProfileReport {
    pub records: Vec<ProfileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub op: Operation,
    /// Least-squares slope of ln(time) on ln(R) at the largest T.
    pub slope_residues: Option<f64>,
    /// Least-squares slope of ln(time) on ln(T) at the largest R.
    pub slope_frames: Option<f64>,
    /// ln(mean time / mean time of the smallest cell), keyed "T,R".
    pub log_ratios: BTreeMap<String, f64>,
}

fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl ProfileReport {
    /// Mean seconds per (T, R) cell.
    pub fn cell_means(&self, op: Operation) -> BTreeMap<(usize, usize), f64> {
        let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
        for rec in self.records.iter().filter(|rec| rec.op == op) {
            let e = acc.entry((rec.t, rec.r)).or_default();
            e.0 += rec.seconds;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    pub fn summary(&self, op: Operation) -> ScalingSummary {
        let means = self.cell_means(op);
        let t_max = means.keys().map(|k| k.0).max();
        let r_max = means.keys().map(|k| k.1).max();
        let fit = |pick: &dyn Fn(&(usize, usize)) -> Option<usize>| {
            let pts: Vec<(f64, f64)> = means
                .iter()
                .filter_map(|(k, &v)| pick(k).map(|x| ((x as f64).ln(), v.ln())))
                .collect();
            ls_slope(&pts)
        };
        let slope_residues = fit(&|k| (Some(k.0) == t_max).then_some(k.1));
        let slope_frames = if op.uses_frames() { fit(&|k| (Some(k.1) == r_max).then_some(k.0)) } else { None };
        let base = means.values().next().copied();
        let log_ratios = means
            .iter()
            .filter_map(|(k, v)| base.map(|b| (format!("{},{}", k.0, k.1), (v / b).ln())))
            .collect();
        ScalingSummary { op, slope_residues, slope_frames, log_ratios }
    }

    pub fn summaries(&self) -> Vec<ScalingSummary> {
        let mut ops: Vec<Operation> = self.records.iter().map(|r| r.op).collect();
        ops.sort();
        ops.dedup();
        ops.into_iter().map(|op| self.summary(op)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("op,T,R,replica,seconds\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{},{:e}", r.op.name(), r.t, r.r, r.replica, r.seconds).unwrap();
        }
        out
    }
}

/// Time every operation on every grid cell; cells run serially.
pub fn profile(ops: &[Operation], grid: &ProfileGrid) -> Result<ProfileReport> {
    grid.validate()?;
    let mut report = ProfileReport::default();
    for &op in ops {
        let frames: &[usize] = if op.uses_frames() { &grid.sample_counts } else { &[1] };
        for &r in grid.residue_counts.iter().filter(|&&r| r >= op.min_residues()) {
            for &t in frames {
                log::debug!("profiling {} at T={t}, R={r}", op.name());
                let times = time_operation(op, t, r, grid.replicas, grid.min_sample_seconds, grid.seed)?;
                report.records.extend(times.into_iter().enumerate().map(|(replica, seconds)| {
                    ProfileRecord { op, t, r, replica, seconds }
                }));
            }
        }
    }
    Ok(report)
}
