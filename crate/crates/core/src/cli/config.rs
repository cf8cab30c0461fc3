//! TOML run configuration. Every section has defaults; command-line flags
//! override individual fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::association::{MetricKind, INTERFACE_CUTOFF, KDE_GRID};
use crate::bench::ProfileGrid;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeaturizeOptions, PointcloudSettings};
use crate::so3::MeanSettings;
use crate::kinetics::{default_lag_fractions, TicaMode};
use crate::trajio::AtomSelection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    None,
    #[default]
    Global,
    PerChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub trajectory: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub stride: usize,
    /// Half-open raw frame window `[start, end)` applied before the stride.
    pub frame_range: Option<[usize; 2]>,
    pub align: AlignMode,
    pub atoms: AtomSelection,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            trajectory: None,
            reference: None,
            stride: 1,
            frame_range: None,
            align: AlignMode::Global,
            atoms: AtomSelection::Ca,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeConfig {
    pub kinds: Vec<FeatureKind>,
    /// Also write a CSV copy of every matrix.
    pub csv: bool,
    pub mean: MeanSettings,
    pub pointcloud: PointcloudSettings,
}

impl FeaturizeConfig {
    pub fn options(&self) -> FeaturizeOptions {
        FeaturizeOptions { mean: self.mean, pointcloud: self.pointcloud }
    }
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            kinds: vec![
                FeatureKind::Orientation,
                FeatureKind::OrientationMean,
                FeatureKind::Ca,
                FeatureKind::Torsion,
                FeatureKind::Pointcloud,
            ],
            csv: false,
            mean: MeanSettings::default(),
            pointcloud: PointcloudSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticsConfig {
    /// Feature matrices (MPF1).
    pub features: Vec<PathBuf>,
    pub lag_fractions: Vec<f64>,
    /// Explicit lags; replaces the fraction grid when set.
    pub lags: Option<Vec<usize>>,
    /// AMUSE lag; defaults to the plateau lag, else the first grid lag.
    pub lag: Option<usize>,
    pub evr_threshold: f64,
    pub mode: TicaMode,
    pub n_projections: usize,
}

impl Default for KineticsConfig {
    fn default() -> Self {
        KineticsConfig {
            features: Vec::new(),
            lag_fractions: default_lag_fractions(),
            lags: None,
            lag: None,
            evr_threshold: 0.95,
            mode: TicaMode::Reversible,
            n_projections: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub features: Vec<PathBuf>,
    pub rmsd: bool,
    pub lddt: bool,
    /// Rank-1 components written per Gram matrix.
    pub rank1: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { features: Vec::new(), rmsd: true, lddt: true, rank1: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Projection matrix (MPF1) to cluster.
    pub embedding: Option<PathBuf>,
    /// Ward cut height; Ward runs when set and `labels` is not given.
    pub ward_cut: Option<f64>,
    /// Existing labels (frame,label CSV) to expand or compare.
    pub labels: Option<PathBuf>,
    /// GMM expansion density ratio; requires `embedding`.
    pub gmm_eps: Option<f64>,
    /// Cluster ids demoted to outliers before anything else.
    pub drop: Vec<i64>,
    /// Other label files compared against the result.
    pub compare: Vec<PathBuf>,
    /// Pairwise RMSD matrix (MPF1) for the silhouette score.
    pub rmsd: Option<PathBuf>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            embedding: None,
            ward_cut: None,
            labels: None,
            gmm_eps: None,
            drop: Vec::new(),
            compare: Vec::new(),
            rmsd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociateConfig {
    pub metric: MetricKind,
    pub kind: FeatureKind,
    /// Two chain ids; defaults to the first two chains.
    pub chains: Option<[char; 2]>,
    pub cutoff: f64,
    pub grid_points: usize,
    pub bw_factor: Option<f64>,
    pub top: usize,
}

impl Default for AssociateConfig {
    fn default() -> Self {
        AssociateConfig {
            metric: MetricKind::Irmsd,
            kind: FeatureKind::OrientationAxis,
            chains: None,
            cutoff: INTERFACE_CUTOFF,
            grid_points: KDE_GRID,
            bw_factor: None,
            top: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub ops: Vec<String>,
    /// Use T up to 2^19 and R up to 2^9.
    pub full: bool,
    pub sample_counts: Option<Vec<usize>>,
    pub residue_counts: Option<Vec<usize>>,
    pub replicas: usize,
    pub min_sample_seconds: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            ops: vec!["so3_log".into(), "pointcloud_log".into(), "metric_tensor".into(), "metric_inverse".into()],
            full: false,
            sample_counts: None,
            residue_counts: None,
            replicas: 3,
            min_sample_seconds: 0.0,
        }
    }
}

impl ProfileConfig {
    pub fn grid(&self, seed: u64) -> ProfileGrid {
        let base = if self.full { ProfileGrid::full() } else { ProfileGrid::desk() };
        ProfileGrid {
            sample_counts: self.sample_counts.clone().unwrap_or(base.sample_counts),
            residue_counts: self.residue_counts.clone().unwrap_or(base.residue_counts),
            replicas: self.replicas,
            min_sample_seconds: self.min_sample_seconds,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub input: InputConfig,
    pub featurize: FeaturizeConfig,
    pub kinetics: KineticsConfig,
    pub similarity: SimilarityConfig,
    pub cluster: ClusterConfig,
    pub associate: AssociateConfig,
    pub profile: ProfileConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            seed: 0,
            input: InputConfig::default(),
            featurize: FeaturizeConfig::default(),
            kinetics: KineticsConfig::default(),
            similarity: SimilarityConfig::default(),
            cluster: ClusterConfig::default(),
            associate: AssociateConfig::default(),
            profile: ProfileConfig::default(),
        }
    }
}

fn must_exist(label: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{label} '{}' does not exist", path.display())))
    }
}

fn range(label: &str, ok: bool, shown: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{label} out of range: {shown}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fields every command relies on.
    pub fn validate_common(&self) -> Result<()> {
        let i = &self.input;
        range("stride", i.stride >= 1, i.stride)?;
        if let Some([a, b]) = i.frame_range {
            range("frame_range", a < b, format!("[{a}, {b})"))?;
        }
        if let Some(p) = &i.trajectory {
            must_exist("trajectory", p)?;
        }
        if let Some(p) = &i.reference {
            must_exist("reference", p)?;
        }
        Ok(())
    }

    pub fn validate_featurize(&self) -> Result<()> {
        self.validate_common()?;
        if self.input.trajectory.is_none() {
            return Err(Error::Config("featurize needs input.trajectory".into()));
        }
        if self.featurize.kinds.is_empty() {
            return Err(Error::Config("no feature kinds requested".into()));
        }
        self.featurize.mean.validate()?;
        self.featurize.pointcloud.validate()
    }

    pub fn validate_kinetics(&self) -> Result<()> {
        let k = &self.kinetics;
        if k.features.is_empty() {
            return Err(Error::Config("kinetics needs at least one feature file".into()));
        }
        for p in &k.features {
            must_exist("feature file", p)?;
        }
        range("evr_threshold", k.evr_threshold > 0.0 && k.evr_threshold <= 1.0, k.evr_threshold)?;
        range("n_projections", k.n_projections >= 1, k.n_projections)?;
        if let Some(lag) = k.lag {
            range("lag", lag >= 1, lag)?;
        }
        if let Some(lags) = &k.lags {
            range("lags", !lags.is_empty() && lags.iter().all(|&l| l >= 1), format!("{lags:?}"))?;
        }
        range(
            "lag_fractions",
            !k.lag_fractions.is_empty() && k.lag_fractions.iter().all(|&f| f > 0.0 && f < 1.0),
            format!("{:?}", k.lag_fractions),
        )
    }

    pub fn validate_similarity(&self) -> Result<()> {
        self.validate_common()?;
        let s = &self.similarity;
        for p in &s.features {
            must_exist("feature file", p)?;
        }
        if (s.rmsd || s.lddt) && self.input.trajectory.is_none() {
            return Err(Error::Config("RMSD/lDDT need input.trajectory".into()));
        }
        if s.features.is_empty() && !s.rmsd && !s.lddt {
            return Err(Error::Config("similarity has nothing to compute".into()));
        }
        Ok(())
    }

    pub fn validate_cluster(&self) -> Result<()> {
        let c = &self.cluster;
        for p in c.embedding.iter().chain(&c.labels).chain(&c.compare).chain(&c.rmsd) {
            must_exist("cluster input", p)?;
        }
        if c.labels.is_none() && (c.embedding.is_none() || c.ward_cut.is_none()) {
            return Err(Error::Config("cluster needs labels, or an embedding with ward_cut".into()));
        }
        if let Some(cut) = c.ward_cut {
            range("ward_cut", cut > 0.0, cut)?;
        }
        if let Some(eps) = c.gmm_eps {
            range("gmm_eps", eps > 0.0 && eps < 1.0, eps)?;
            if c.embedding.is_none() {
                return Err(Error::Config("gmm_eps needs an embedding".into()));
            }
        }
        Ok(())
    }

    pub fn validate_associate(&self) -> Result<()> {
        self.validate_common()?;
        if self.input.trajectory.is_none() {
            return Err(Error::Config("associate needs input.trajectory".into()));
        }
        let a = &self.associate;
        if a.metric == MetricKind::Irmsd && self.input.reference.is_none() {
            return Err(Error::Config("IRMSD needs input.reference (the crystal structure)".into()));
        }
        range("cutoff", a.cutoff > 0.0, a.cutoff)?;
        range("grid_points", a.grid_points >= 3, a.grid_points)?;
        if let Some(bw) = a.bw_factor {
            range("bw_factor", bw > 0.0, bw)?;
        }
        if let Some(ch) = a.chains {
            range("chains", ch.iter().all(char::is_ascii) && ch[0] != ch[1], format!("{ch:?}"))?;
        }
        self.featurize.mean.validate()?;
        self.featurize.pointcloud.validate()
    }

    pub fn validate_profile(&self) -> Result<()> {
        for op in &self.profile.ops {
            op.parse::<crate::bench::Operation>()?;
        }
        self.profile.grid(self.seed).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
        let partial = RunConfig::from_toml("seed = 7\n[kinetics]\nevr_threshold = 0.9\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.kinetics.evr_threshold, 0.9);
        assert_eq!(partial.kinetics.n_projections, 2);
        assert_eq!(partial.featurize.pointcloud.delta, 0.1);
    }

    #[test]
    fn rejects_unknown_and_out_of_range() {
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[featurize]\nkinds = [\"spin\"]\n").is_err());
        let mut cfg = RunConfig::default();
        cfg.input.stride = 0;
        assert!(cfg.validate_common().is_err());
        let mut cfg = RunConfig::default();
        cfg.input.trajectory = Some("/no/such/file.mpb".into());
        assert!(matches!(cfg.validate_featurize(), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.kinetics.features = vec![PathBuf::from("Cargo.toml")];
        cfg.kinetics.evr_threshold = 1.5;
        assert!(cfg.validate_kinetics().is_err());
    }
}
