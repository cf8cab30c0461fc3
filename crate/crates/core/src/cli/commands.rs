//! Subcommand bodies. Each returns the files it wrote; on error the
//! [`Outputs`] guard removes them.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use super::config::{AlignMode, RunConfig};
use super::output::Outputs;
use crate::association::{
    cog_series, detect_interface, irmsd_series, AssociationAnalysis, ChainPair, KdeSettings, MetricKind,
};
use crate::bench::{profile, Operation};
use crate::clustering::{concordance, curate, gmm_expand, silhouette_precomputed, ward_cluster, ClusterLabels};
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureMatrix};
use crate::kinetics::{amuse, lag_grid, lag_search_lags, pca_fit, AmuseSettings};
use crate::mpf::{MatrixKind, Mpf1};
use crate::similarity::{gram_matrix, lddt_matrix, pairwise_rmsd, rank1, CorrelationReport, LddtSettings, PairwiseMatrix};
use crate::trajio::{
    align_trajectory, align_trajectory_per_chain, load_trajectory_with, parse_reference, BackboneTrajectory,
    LoadOptions, ReferenceStructure,
};

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn load_raw(cfg: &RunConfig) -> Result<(BackboneTrajectory, Option<ReferenceStructure>)> {
    let input = &cfg.input;
    let path = input
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::Config("input.trajectory is not set".into()))?;
    let opts = LoadOptions { stride: input.stride, frame_range: input.frame_range.map(|[a, b]| a..b) };
    let mut traj = load_trajectory_with(path, &opts)?;
    let reference = input.reference.as_ref().map(parse_reference).transpose()?;
    // Reference chain ids win over whatever the trajectory file carried.
    if let Some(r) = &reference {
        if r.n_residues() != traj.n_residues() {
            return Err(Error::Structure(format!(
                "reference has {} residues, trajectory has {}",
                r.n_residues(),
                traj.n_residues()
            )));
        }
        if traj.chain_ids() != r.chain_ids.as_slice() {
            log::warn!("trajectory chain ids differ from the reference; using the reference's");
            traj = traj.with_chain_ids(r.chain_ids.clone())?;
        }
    }
    log::info!("loaded {} frames x {} residues from {}", traj.n_frames(), traj.n_residues(), path.display());
    Ok((traj, reference))
}

/// Superpose per the configured mode; without a reference structure frame 0
/// serves as the target.
fn align(cfg: &RunConfig, traj: &BackboneTrajectory, reference: Option<&ReferenceStructure>) -> Result<BackboneTrajectory> {
    if cfg.input.align == AlignMode::None {
        return Ok(traj.clone());
    }
    let fallback;
    let target = match reference {
        Some(r) => r,
        None => {
            fallback = ReferenceStructure::from_frame(traj, 0)?;
            &fallback
        }
    };
    log::info!("aligning ({:?}, {:?} atoms)", cfg.input.align, cfg.input.atoms);
    match cfg.input.align {
        AlignMode::Global => align_trajectory(traj, target, cfg.input.atoms),
        AlignMode::PerChain => align_trajectory_per_chain(traj, target, cfg.input.atoms),
        AlignMode::None => unreachable!(),
    }
}

fn record_config(out: &mut Outputs, cfg: &RunConfig) -> Result<()> {
    out.write("run_config.toml", cfg.to_toml()?)?;
    Ok(())
}

#[derive(Serialize)]
struct MatrixEntry {
    kind: String,
    file: String,
    rows: usize,
    cols: usize,
    residues: usize,
    flagged_columns: Vec<usize>,
}

pub fn featurize_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate_featurize()?;
    let (raw, reference) = load_raw(cfg)?;
    let traj = align(cfg, &raw, reference.as_ref())?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let opts = cfg.featurize.options();
    let mut manifest = Vec::new();
    for &kind in &cfg.featurize.kinds {
        log::info!("featurizing {}", kind.name());
        let f = featurize(&traj, reference.as_ref(), kind, &opts)?;
        let file = format!("{}.mpf", kind.name());
        f.write_mpf(out.path(&file))?;
        if cfg.featurize.csv {
            f.write_csv(out.path(&format!("{}.csv", kind.name())))?;
        }
        manifest.push(MatrixEntry {
            kind: kind.name().into(),
            file,
            rows: f.n_frames(),
            cols: f.n_cols(),
            residues: f.n_residues(),
            flagged_columns: f.flagged_columns().to_vec(),
        });
    }
    out.write_json("featurize.json", &manifest)?;
    record_config(&mut out, cfg)?;
    Ok(out.commit())
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(Mpf1::read(path)?.to_dmatrix())
}

pub fn kinetics_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate_kinetics()?;
    let k = &cfg.kinetics;
    let mut out = Outputs::new(&cfg.output_dir)?;
    for path in &k.features {
        let x = read_matrix(path)?;
        let name = stem(path);
        log::info!("kinetics on {name} ({}x{})", x.nrows(), x.ncols());
        let lags = match &k.lags {
            Some(l) => l.clone(),
            None => lag_grid(x.nrows(), &k.lag_fractions)?,
        };
        let settings = AmuseSettings {
            evr_threshold: k.evr_threshold,
            lag: 1,
            mode: k.mode,
            n_projections: k.n_projections,
        };
        // The scan runs in the whitened PCA basis AMUSE uses.
        let y = pca_fit(&x, k.evr_threshold, true)?.transform(&x);
        let search = lag_search_lags(&y, &lags, k.mode)?;
        let lag = k.lag.or(search.plateau_lag).unwrap_or(search.lags[0]);
        let result = amuse(&x, &AmuseSettings { lag, ..settings })?;
        let report = json!({
            "input": path,
            "n_frames": x.nrows(),
            "n_features": x.ncols(),
            "lag_search": search,
            "amuse_lag": lag,
            "amuse": result.summary(),
        });
        out.write_json(&format!("{name}.kinetics.json"), &report)?;
        Mpf1::from_dmatrix(MatrixKind::Projection, &result.projections).write(out.path(&format!("{name}.tica.mpf")))?;
    }
    record_config(&mut out, cfg)?;
    Ok(out.commit())
}

pub fn similarity_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate_similarity()?;
    let s = &cfg.similarity;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let mut matrices: Vec<(String, PairwiseMatrix)> = Vec::new();
    if s.rmsd || s.lddt {
        let (raw, _) = load_raw(cfg)?;
        if s.rmsd {
            log::info!("pairwise RMSD");
            let m = pairwise_rmsd(&raw)?;
            m.to_mpf().write(out.path("rmsd.mpf"))?;
            matrices.push(("rmsd".into(), m));
        }
        if s.lddt {
            log::info!("pairwise lDDT");
            let m = lddt_matrix(&raw, &LddtSettings::default())?;
            m.to_mpf().write(out.path("lddt.mpf"))?;
            matrices.push(("lddt".into(), m));
        }
    }
    for path in &s.features {
        let name = stem(path);
        let g = gram_matrix(&read_matrix(path)?);
        g.to_mpf().write(out.path(&format!("gram_{name}.mpf")))?;
        if s.rank1 > 0 {
            let dec = rank1(&g, s.rank1)?;
            for c in 0..dec.eigenvalues.len() {
                dec.component(c).to_mpf().write(out.path(&format!("rank1_{name}_{c}.mpf")))?;
            }
        }
        matrices.push((format!("gram_{name}"), g));
    }
    let mut correlations = Vec::new();
    for i in 0..matrices.len() {
        for j in i + 1..matrices.len() {
            let (a, ma) = &matrices[i];
            let (b, mb) = &matrices[j];
            correlations.push(CorrelationReport::new(a.clone(), ma, b.clone(), mb)?);
        }
    }
    out.write_json("similarity.json", &json!({ "correlations": correlations }))?;
    record_config(&mut out, cfg)?;
    Ok(out.commit())
}

pub fn cluster_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate_cluster()?;
    let c = &cfg.cluster;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let embedding = c.embedding.as_deref().map(read_matrix).transpose()?;
    let mut labels = match (&c.labels, &embedding, c.ward_cut) {
        (Some(path), _, _) => ClusterLabels::read_csv(path)?,
        (None, Some(x), Some(cut)) => ward_cluster(x, cut)?,
        _ => unreachable!("validated"),
    };
    if !c.drop.is_empty() {
        labels = curate(&labels, &c.drop)?;
    }
    if let (Some(eps), Some(x)) = (c.gmm_eps, &embedding) {
        labels = gmm_expand(x, &labels, eps)?;
    }
    labels.write_csv(out.path("labels.csv"))?;
    let silhouette = match &c.rmsd {
        Some(p) => silhouette_precomputed(&PairwiseMatrix::from_mpf(Mpf1::read(p)?)?, &labels)?,
        None => None,
    };
    let mut comparisons = Vec::new();
    for p in &c.compare {
        let other = ClusterLabels::read_csv(p)?;
        comparisons.push(json!({ "file": p, "report": concordance(&labels, &other)? }));
    }
    let report = json!({
        "n_frames": labels.len(),
        "n_clusters": labels.n_clusters(),
        "populations": labels.populations(),
        "silhouette_rmsd": silhouette,
        "concordance": comparisons,
    });
    out.write_json("cluster.json", &report)?;
    record_config(&mut out, cfg)?;
    Ok(out.commit())
}

fn sub_reference(r: &ReferenceStructure, idx: &[usize]) -> Result<ReferenceStructure> {
    ReferenceStructure::from_backbone(
        idx.iter().map(|&i| r.residues[i]).collect(),
        idx.iter().map(|&i| r.chain_ids[i]).collect(),
    )
}

pub fn associate_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate_associate()?;
    let a = &cfg.associate;
    let (raw, reference) = load_raw(cfg)?;
    let chains = match a.chains {
        Some([x, y]) => ChainPair { a: x as u8, b: y as u8 },
        None => ChainPair::first_two(raw.chain_ids())?,
    };
    let mut out = Outputs::new(&cfg.output_dir)?;
    let metric = match a.metric {
        MetricKind::Irmsd => {
            let crystal = reference.as_ref().expect("validated");
            let iface = detect_interface(crystal, Some(chains), a.cutoff)?;
            log::info!("interface: {} + {} residues", iface.residues_a.len(), iface.residues_b.len());
            out.write_json("interface.json", &iface)?;
            irmsd_series(&raw, crystal, &iface)?
        }
        MetricKind::Cog => cog_series(&raw, chains)?,
    };
    let traj = align(cfg, &raw, reference.as_ref())?;
    let opts = cfg.featurize.options();
    let monomer = |chain: u8| -> Result<FeatureMatrix> {
        let idx = traj.chain_residues(chain);
        let sub = traj.select_residues(&idx)?;
        let sub_ref = reference.as_ref().map(|r| sub_reference(r, &idx)).transpose()?;
        featurize(&sub, sub_ref.as_ref(), a.kind, &opts)
    };
    let fa = monomer(chains.a)?;
    let fb = monomer(chains.b)?;
    let kde = KdeSettings { grid_points: a.grid_points, bw_factor: a.bw_factor };
    let analysis = AssociationAnalysis::run(a.metric, metric, &fa, &fb, &kde, a.top)?;
    out.write_json("association.json", &analysis.report)?;
    out.write("association_frames.csv", analysis.frames_csv())?;
    record_config(&mut out, cfg)?;
    Ok(out.commit())
}

pub fn profile_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate_profile()?;
    let ops: Vec<Operation> = cfg.profile.ops.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let grid = cfg.profile.grid(cfg.seed);
    let mut out = Outputs::new(&cfg.output_dir)?;
    let report = profile(&ops, &grid)?;
    out.write("profile.csv", report.to_csv())?;
    out.write_json("profile.json", &json!({ "grid": grid, "scaling": report.summaries() }))?;
    record_config(&mut out, cfg)?;
    Ok(out.commit())
}
