//! Cluster labels, GMM expansion, Ward clustering and concordance scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::similarity::PairwiseMatrix;

pub const OUTLIER: i64 = -1;
pub const GMM_EXPANSION_EPS: f64 = 0.01;
pub const GMM_REF_PERCENTILE: f64 = 95.0;

/// Flat cluster assignment; `-1` marks outliers and cluster 0 is the largest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<i64>,
}

impl ClusterLabels {
    /// Relabel so that ids are `0..K` ordered by population (descending),
    /// ties broken by the smaller original id.
    pub fn new(raw: Vec<i64>) -> Result<Self> {
        if let Some(&l) = raw.iter().find(|&&l| l < OUTLIER) {
            return Err(Error::domain(format!("invalid cluster label {l}")));
        }
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for &l in raw.iter().filter(|&&l| l != OUTLIER) {
            *counts.entry(l).or_default() += 1;
        }
        let mut ids: Vec<(i64, usize)> = counts.into_iter().collect();
        ids.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let map: BTreeMap<i64, i64> = ids.iter().enumerate().map(|(k, &(id, _))| (id, k as i64)).collect();
        Ok(ClusterLabels {
            labels: raw.iter().map(|l| map.get(l).copied().unwrap_or(OUTLIER)).collect(),
        })
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Population of each cluster id.
    pub fn populations(&self) -> Vec<usize> {
        let mut pop = vec![0; self.n_clusters()];
        for &l in self.labels.iter().filter(|&&l| l >= 0) {
            pop[l as usize] += 1;
        }
        pop
    }

    pub fn members(&self, k: i64) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == k).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(out, "{i},{l}").unwrap();
        }
        out
    }

    /// Parse `frame,label` rows; frames must be 0..T in order.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (no == 0 && line.starts_with("frame")) {
                continue;
            }
            let parse_err = |m: &str| Error::Parse { line: no + 1, message: m.to_string() };
            let (frame, label) = line.split_once(',').ok_or_else(|| parse_err("expected frame,label"))?;
            let frame: usize = frame.trim().parse().map_err(|_| parse_err("bad frame index"))?;
            let label: i64 = label.trim().parse().map_err(|_| parse_err("bad label"))?;
            if frame != labels.len() {
                return Err(parse_err(&format!("expected frame {}, got {frame}", labels.len())));
            }
            labels.push(label);
        }
        Self::new(labels)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Gaussian fitted to one cluster.
#[derive(Debug, Clone)]
pub struct GaussianCluster {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// 95th percentile of the member densities.
    pub ref_density: f64,
    chol: Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
}

impl GaussianCluster {
    pub fn fit(points: &[DVector<f64>]) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::domain(format!("a cluster needs at least 3 members, got {n}")));
        }
        let d = points[0].len();
        let mean = points.iter().fold(DVector::zeros(d), |acc, p| acc + p) / n as f64;
        let mut covariance = points.iter().fold(DMatrix::zeros(d, d), |acc, p| {
            let c = p - &mean;
            acc + &c * c.transpose()
        }) / (n - 1) as f64;
        let chol = match Cholesky::new(covariance.clone()).filter(|c| c.l().diagonal().iter().all(|&x| x > 1e-150)) {
            Some(c) => c,
            None => {
                let ridge = 1e-9 * covariance.trace().max(f64::MIN_POSITIVE);
                log::warn!("singular cluster covariance; adding ridge {ridge:.3e}");
                for i in 0..d {
                    covariance[(i, i)] += ridge;
                }
                Cholesky::new(covariance.clone())
                    .ok_or_else(|| Error::Numerical("cluster covariance not positive definite after ridge".into()))?
            }
        };
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let mut g = GaussianCluster {
            mean,
            covariance,
            ref_density: 0.0,
            chol,
            log_norm,
        };
        let densities: Vec<f64> = points.iter().map(|p| g.pdf(p)).collect();
        g.ref_density = percentile(&densities, GMM_REF_PERCENTILE);
        if !(g.ref_density > 0.0) {
            return Err(Error::Numerical("cluster reference density is not positive".into()));
        }
        Ok(g)
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let c = x - &self.mean;
        let z = self.chol.l().solve_lower_triangular(&c).expect("Cholesky factor is invertible");
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_pdf(x).exp()
    }

    /// p(x) / p_ref.
    pub fn relative_density(&self, x: &DVector<f64>) -> f64 {
        (self.log_pdf(x) - self.ref_density.ln()).exp()
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn rows(x: &DMatrix<f64>) -> Vec<DVector<f64>> {
    x.row_iter().map(|r| r.transpose()).collect()
}

/// Assign outliers to the cluster with the highest relative density, if
/// that density reaches `eps`. Labeled frames are never changed.
pub fn gmm_expand(embedding: &DMatrix<f64>, labels: &ClusterLabels, eps: f64) -> Result<ClusterLabels> {
    if embedding.nrows() != labels.len() {
        return Err(Error::domain(format!(
            "{} embedding rows for {} labels",
            embedding.nrows(),
            labels.len()
        )));
    }
    if !embedding.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("embedding has non-finite values".into()));
    }
    let points = rows(embedding);
    let clusters = (0..labels.n_clusters() as i64)
        .map(|k| {
            let members: Vec<DVector<f64>> = labels.members(k).into_iter().map(|i| points[i].clone()).collect();
            GaussianCluster::fit(&members).map_err(|e| match e {
                Error::Domain(m) => Error::Domain(format!("cluster {k}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = labels.as_slice().to_vec();
    for (i, l) in out.iter_mut().enumerate() {
        if *l != OUTLIER {
            continue;
        }
        let best = clusters
            .iter()
            .enumerate()
            .map(|(k, g)| (k, g.relative_density(&points[i])))
            .fold(None, |acc: Option<(usize, f64)>, (k, r)| match acc {
                Some((_, br)) if br >= r => acc,
                _ => Some((k, r)),
            });
        if let Some((k, r)) = best {
            if r >= eps {
                *l = k as i64;
            }
        }
    }
    // ids keep their meaning; populations may reorder
    Ok(ClusterLabels { labels: out })
}

/// One agglomeration step; ids follow the usual linkage convention
/// (`< n` are observations, `n + s` is the cluster formed at step `s`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

fn ward_distance(ca: &DVector<f64>, na: usize, cb: &DVector<f64>, nb: usize) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    (2.0 * na * nb / (na + nb)).sqrt() * (ca - cb).norm()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Ward linkage of the rows of `x` by the nearest-neighbour chain.
/// Cluster distances are evaluated from centroids and sizes, which equals
/// the Lance–Williams Ward update on Euclidean input. Ties prefer the
/// chain predecessor, then the smaller index.
pub fn ward_linkage(x: &DMatrix<f64>) -> Result<Vec<Merge>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::domain("Ward clustering needs at least 2 points"));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("embedding has non-finite values".into()));
    }
    let mut centroid = rows(x);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::new();
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster remains"));
        }
        let a = *chain.last().unwrap();
        let prev = chain.len().checked_sub(2).map(|k| chain[k]);
        let mut best = (f64::INFINITY, usize::MAX);
        for j in (0..n).filter(|&j| active[j] && j != a) {
            let d = ward_distance(&centroid[a], size[a], &centroid[j], size[j]);
            if d < best.0 {
                best = (d, j);
            }
        }
        if let Some(p) = prev {
            let dp = ward_distance(&centroid[a], size[a], &centroid[p], size[p]);
            if dp <= best.0 {
                best = (dp, p);
            }
        }
        let (d, b) = best;
        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let (keep, gone) = (a.min(b), a.max(b));
            let total = size[a] + size[b];
            centroid[keep] = (&centroid[a] * size[a] as f64 + &centroid[b] * size[b] as f64) / total as f64;
            size[keep] = total;
            active[gone] = false;
            raw.push((keep, gone, d));
            remaining -= 1;
        } else {
            chain.push(b);
        }
    }
    // order by height (stable) and translate to linkage ids
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&i, &j| raw[i].2.total_cmp(&raw[j].2));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut node_of = (0..n).collect::<Vec<usize>>();
    let mut members = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    for (step, &k) in order.iter().enumerate() {
        let (p, q, h) = raw[k];
        let (rp, rq) = (find(&mut parent, p), find(&mut parent, q));
        let (ia, ib) = (node_of[rp], node_of[rq]);
        let total = members[rp] + members[rq];
        parent[rq] = rp;
        members[rp] = total;
        node_of[rp] = n + step;
        merges.push(Merge {
            a: ia.min(ib),
            b: ia.max(ib),
            height: h,
            size: total,
        });
    }
    Ok(merges)
}

/// Flat clusters from applying every merge lower than `cut`.
pub fn cut_linkage(n: usize, merges: &[Merge], cut: f64) -> ClusterLabels {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    for (step, m) in merges.iter().enumerate() {
        if m.height < cut {
            parent[m.a] = n + step;
            parent[m.b] = n + step;
        }
    }
    let raw: Vec<i64> = (0..n).map(|i| find(&mut parent, i) as i64).collect();
    ClusterLabels::new(raw).expect("non-negative ids")
}

pub fn ward_cluster(embedding: &DMatrix<f64>, cut: f64) -> Result<ClusterLabels> {
    let merges = ward_linkage(embedding)?;
    Ok(cut_linkage(embedding.nrows(), &merges, cut))
}

/// Mean silhouette over labeled frames; `None` with fewer than two clusters.
pub fn silhouette_precomputed(dist: &PairwiseMatrix, labels: &ClusterLabels) -> Result<Option<f64>> {
    if dist.n != labels.len() {
        return Err(Error::domain(format!("{} labels for a {}x{} distance matrix", labels.len(), dist.n, dist.n)));
    }
    let pops = labels.populations();
    if pops.iter().filter(|&&p| p > 0).count() < 2 {
        return Ok(None);
    }
    let l = labels.as_slice();
    let idx: Vec<usize> = (0..l.len()).filter(|&i| l[i] >= 0).collect();
    let mut total = 0.0;
    for &i in &idx {
        let own = l[i] as usize;
        if pops[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; pops.len()];
        for &j in &idx {
            if j != i {
                sums[l[j] as usize] += dist.get(i, j);
            }
        }
        let a = sums[own] / (pops[own] - 1) as f64;
        let b = (0..pops.len())
            .filter(|&k| k != own && pops[k] > 0)
            .map(|k| sums[k] / pops[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(Some(total / idx.len() as f64))
}

/// Frames labeled in both clusterings.
fn coassigned(a: &ClusterLabels, b: &ClusterLabels) -> Result<Vec<(i64, i64)>> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(x, y)| **x >= 0 && **y >= 0)
        .map(|(&x, &y)| (x, y))
        .collect())
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

/// Rows and columns are indexed by first appearance, so relabeling the ids
/// leaves the table unchanged.
fn contingency(pairs: &[(i64, i64)]) -> Contingency {
    let index = |vals: &mut dyn Iterator<Item = i64>| -> BTreeMap<i64, usize> {
        let mut map = BTreeMap::new();
        for v in vals {
            let k = map.len();
            map.entry(v).or_insert(k);
        }
        map
    };
    let ra = index(&mut pairs.iter().map(|p| p.0));
    let rb = index(&mut pairs.iter().map(|p| p.1));
    let mut table = vec![vec![0usize; rb.len()]; ra.len()];
    for (x, y) in pairs {
        table[ra[x]][rb[y]] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..rb.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Contingency {
        n: pairs.len(),
        table,
        rows,
        cols,
    }
}

/// Order-independent sum, so transposed tables give identical results.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    sorted_sum(
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .collect(),
    )
}

fn mutual_info(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut terms = Vec::new();
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                terms.push(nij / n * (n * nij / (c.rows[i] as f64 * c.cols[j] as f64)).ln());
            }
        }
    }
    sorted_sum(terms).max(0.0)
}

/// Expected mutual information under the hypergeometric model.
fn expected_mutual_info(c: &Contingency) -> f64 {
    let n = c.n;
    let nf = n as f64;
    let lg = |x: usize| ln_gamma(x as f64 + 1.0);
    let mut terms = Vec::new();
    for &a in &c.rows {
        for &b in &c.cols {
            let (lo, hi) = (a.min(b), a.max(b));
            let start = (a + b).saturating_sub(n).max(1);
            for nij in start..=lo {
                let term1 = nij as f64 / nf * (nf * nij as f64 / (a as f64 * b as f64)).ln();
                let log_p = lg(lo) + lg(hi) + lg(n - lo) + lg(n - hi)
                    - lg(n)
                    - lg(nij)
                    - lg(lo - nij)
                    - lg(hi - nij)
                    - lg(n + nij - a - b);
                terms.push(term1 * log_p.exp());
            }
        }
    }
    sorted_sum(terms)
}

/// Adjusted mutual information (arithmetic normalization) on frames
/// labeled in both clusterings; `None` if there are none.
pub fn ami(a: &ClusterLabels, b: &ClusterLabels) -> Result<Option<f64>> {
    let pairs = coassigned(a, b)?;
    if pairs.is_empty() {
        return Ok(None);
    }
    let c = contingency(&pairs);
    if (c.rows.len() == 1 && c.cols.len() == 1) || (c.rows.len() == c.n && c.cols.len() == c.n) {
        return Ok(Some(1.0));
    }
    let mi = mutual_info(&c);
    let emi = expected_mutual_info(&c);
    let norm = 0.5 * (entropy(&c.rows, c.n) + entropy(&c.cols, c.n));
    let mut denom = norm - emi;
    denom = if denom < 0.0 { denom.min(-f64::EPSILON) } else { denom.max(f64::EPSILON) };
    Ok(Some((mi - emi) / denom))
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index on frames labeled in both clusterings.
pub fn ari(a: &ClusterLabels, b: &ClusterLabels) -> Result<Option<f64>> {
    let pairs = coassigned(a, b)?;
    if pairs.is_empty() {
        return Ok(None);
    }
    let c = contingency(&pairs);
    let sum_ij: f64 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let sum_a: f64 = c.rows.iter().map(|&x| comb2(x)).sum();
    let sum_b: f64 = c.cols.iter().map(|&x| comb2(x)).sum();
    let total = comb2(c.n);
    if total == 0.0 {
        return Ok(Some(1.0));
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(Some(1.0));
    }
    Ok(Some((sum_ij - expected) / (max - expected)))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcordanceReport {
    pub ami: Option<f64>,
    pub ari: Option<f64>,
    pub n_coassigned: usize,
}

pub fn concordance(a: &ClusterLabels, b: &ClusterLabels) -> Result<ConcordanceReport> {
    Ok(ConcordanceReport {
        ami: ami(a, b)?,
        ari: ari(a, b)?,
        n_coassigned: coassigned(a, b)?.len(),
    })
}

/// Mark the clusters in `drop` as outliers and re-sort the rest by size.
pub fn curate(labels: &ClusterLabels, drop: &[i64]) -> Result<ClusterLabels> {
    let k = labels.n_clusters() as i64;
    if let Some(&bad) = drop.iter().find(|&&d| d < 0 || d >= k) {
        return Err(Error::domain(format!("unknown cluster id {bad}")));
    }
    ClusterLabels::new(
        labels
            .as_slice()
            .iter()
            .map(|l| if drop.contains(l) { OUTLIER } else { *l })
            .collect(),
    )
}
