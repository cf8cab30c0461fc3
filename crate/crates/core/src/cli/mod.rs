//! Command-line front end. `main.rs` only parses arguments and reports errors.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::association::MetricKind;
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::kinetics::TicaMode;
use crate::trajio::AtomSelection;
pub use config::{AlignMode, RunConfig};

/// Environment variable read for the worker thread count.
pub const THREADS_ENV: &str = "ORIENTFEAT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "orientfeat", version, about = "Rotation-aware backbone features and trajectory analysis")]
pub struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one MPF1 feature matrix per representation.
    Featurize(FeaturizeArgs),
    /// Lag scan, TICA timescales, VAMP-2 and AMUSE projections.
    Kinetics(KineticsArgs),
    /// Pairwise RMSD, lDDT and Gram matrices with rank correlations.
    Similarity(SimilarityArgs),
    /// Ward clustering, curation, GMM expansion and label concordance.
    Cluster(ClusterArgs),
    /// Bound/unbound threshold, two-step PCA and mutual information.
    Associate(AssociateArgs),
    /// Time the core kernels over a size grid.
    Profile(ProfileArgs),
}

fn parse_range(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a = a.parse().map_err(|_| format!("bad start '{a}'"))?;
    let b = b.parse().map_err(|_| format!("bad end '{b}'"))?;
    Ok([a, b])
}

fn parse_atoms(s: &str) -> std::result::Result<AtomSelection, String> {
    match s {
        "ca" => Ok(AtomSelection::Ca),
        "backbone" => Ok(AtomSelection::Backbone),
        _ => Err(format!("unknown atom selection '{s}' (ca, backbone)")),
    }
}

fn parse_metric(s: &str) -> std::result::Result<MetricKind, String> {
    match s {
        "irmsd" => Ok(MetricKind::Irmsd),
        "cog" => Ok(MetricKind::Cog),
        _ => Err(format!("unknown metric '{s}' (irmsd, cog)")),
    }
}

fn parse_chains(s: &str) -> std::result::Result<[char; 2], String> {
    let c: Vec<char> = s.chars().collect();
    match c[..] {
        [a, b] => Ok([a, b]),
        _ => Err("expected two chain ids, e.g. AB".into()),
    }
}

#[derive(Debug, Clone, Args, Default)]
pub struct InputArgs {
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Reference PDB (crystal structure for association).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Raw frame window START:END, applied before the stride.
    #[arg(long, value_parser = parse_range)]
    pub frame_range: Option<[usize; 2]>,
    #[arg(long, value_enum)]
    pub align: Option<AlignMode>,
    /// ca or backbone
    #[arg(long, value_parser = parse_atoms)]
    pub atoms: Option<AtomSelection>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated representation names.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<FeatureKind>>,
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct KineticsArgs {
    /// Feature matrices (MPF1).
    #[arg(long, num_args = 1..)]
    pub features: Option<Vec<PathBuf>>,
    /// Explicit lag grid.
    #[arg(long, value_delimiter = ',')]
    pub lags: Option<Vec<usize>>,
    /// AMUSE lag (default: plateau lag).
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub evr: Option<f64>,
    #[arg(long)]
    pub non_reversible: bool,
    #[arg(long)]
    pub n_projections: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, num_args = 1..)]
    pub features: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub no_rmsd: bool,
    #[arg(long)]
    pub no_lddt: bool,
    #[arg(long)]
    pub rank1: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    #[arg(long)]
    pub ward_cut: Option<f64>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub gmm_eps: Option<f64>,
    /// Cluster ids to demote to outliers.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub drop: Option<Vec<i64>>,
    #[arg(long, num_args = 1..)]
    pub compare: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub rmsd: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssociateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// irmsd or cog
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub kind: Option<FeatureKind>,
    /// Two chain ids, e.g. AB.
    #[arg(long, value_parser = parse_chains)]
    pub chains: Option<[char; 2]>,
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_delimiter = ',')]
    pub ops: Option<Vec<String>>,
    /// Full grid: T up to 2^19, R up to 2^9.
    #[arg(long)]
    pub full: bool,
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub residues: Option<Vec<usize>>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long)]
    pub min_sample_seconds: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_input(cfg: &mut RunConfig, a: InputArgs) {
    let i = &mut cfg.input;
    if a.trajectory.is_some() {
        i.trajectory = a.trajectory;
    }
    if a.reference.is_some() {
        i.reference = a.reference;
    }
    if a.frame_range.is_some() {
        i.frame_range = a.frame_range;
    }
    set(&mut i.stride, a.stride);
    set(&mut i.align, a.align);
    set(&mut i.atoms, a.atoms);
}

impl Cli {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn resolve(self) -> Result<(RunConfig, Command)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.output_dir, self.out);
        let command = self.command;
        match &command {
            Command::Featurize(a) => {
                apply_input(&mut cfg, a.input.clone());
                set(&mut cfg.featurize.kinds, a.kinds.clone());
                cfg.featurize.csv |= a.csv;
                set(&mut cfg.featurize.pointcloud.delta, a.delta);
            }
            Command::Kinetics(a) => {
                let k = &mut cfg.kinetics;
                set(&mut k.features, a.features.clone());
                if a.lags.is_some() {
                    k.lags = a.lags.clone();
                }
                if a.lag.is_some() {
                    k.lag = a.lag;
                }
                set(&mut k.evr_threshold, a.evr);
                if a.non_reversible {
                    k.mode = TicaMode::NonReversible;
                }
                set(&mut k.n_projections, a.n_projections);
            }
            Command::Similarity(a) => {
                apply_input(&mut cfg, a.input.clone());
                let s = &mut cfg.similarity;
                set(&mut s.features, a.features.clone());
                s.rmsd &= !a.no_rmsd;
                s.lddt &= !a.no_lddt;
                set(&mut s.rank1, a.rank1);
            }
            Command::Cluster(a) => {
                let c = &mut cfg.cluster;
                if a.embedding.is_some() {
                    c.embedding = a.embedding.clone();
                }
                if a.ward_cut.is_some() {
                    c.ward_cut = a.ward_cut;
                }
                if a.labels.is_some() {
                    c.labels = a.labels.clone();
                }
                if a.gmm_eps.is_some() {
                    c.gmm_eps = a.gmm_eps;
                }
                set(&mut c.drop, a.drop.clone());
                set(&mut c.compare, a.compare.clone());
                if a.rmsd.is_some() {
                    c.rmsd = a.rmsd.clone();
                }
            }
            Command::Associate(a) => {
                apply_input(&mut cfg, a.input.clone());
                let s = &mut cfg.associate;
                set(&mut s.metric, a.metric);
                set(&mut s.kind, a.kind);
                if a.chains.is_some() {
                    s.chains = a.chains;
                }
                set(&mut s.top, a.top);
            }
            Command::Profile(a) => {
                let p = &mut cfg.profile;
                set(&mut p.ops, a.ops.clone());
                p.full |= a.full;
                if a.samples.is_some() {
                    p.sample_counts = a.samples.clone();
                }
                if a.residues.is_some() {
                    p.residue_counts = a.residues.clone();
                }
                set(&mut p.replicas, a.replicas);
                set(&mut p.min_sample_seconds, a.min_sample_seconds);
            }
        }
        Ok((cfg, command))
    }
}

/// Size the global worker pool. A second call is a no-op.
pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
    Ok(())
}

pub fn execute(cfg: &RunConfig, command: &Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Featurize(_) => commands::featurize_cmd(cfg),
        Command::Kinetics(_) => commands::kinetics_cmd(cfg),
        Command::Similarity(_) => commands::similarity_cmd(cfg),
        Command::Cluster(_) => commands::cluster_cmd(cfg),
        Command::Associate(_) => commands::associate_cmd(cfg),
        Command::Profile(_) => commands::profile_cmd(cfg),
    }
}

/// Parse-free entry point used by `main` and by tests.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    init_threads(cli.threads)?;
    let (cfg, command) = cli.resolve()?;
    execute(&cfg, &command)
}
