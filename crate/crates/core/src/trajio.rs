//! Backbone trajectory ingestion and rigid alignment.
//!
//! Two on-disk trajectory encodings are supported:
//!
//! * `MPB1` binary: little-endian header (magic `MPB1`, `u32` version = 1,
//!   `u32` frames, `u32` residues, `u8` atom count = 3, 7 reserved bytes),
//!   then `f32` xyz triples in frame, residue, atom (N, CA, C) order, then an
//!   optional block of one ASCII chain id per residue.
//! * CSV with header `frame,residue,atom,x,y,z` and `atom` one of `N`, `CA`, `C`.
//!
//! Reference structures are read from the ATOM records of a PDB file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::so3::Rotation;

pub type Point = Vector3<f64>;

pub const MPB1_MAGIC: [u8; 4] = *b"MPB1";
pub const MPB1_VERSION: u32 = 1;
pub const MPB1_HEADER_LEN: usize = 24;

/// Backbone atoms of one residue in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backbone {
    pub n: Point,
    pub ca: Point,
    pub c: Point,
}

impl Backbone {
    pub fn new(n: Point, ca: Point, c: Point) -> Self {
        Backbone { n, ca, c }
    }

    pub fn atoms(&self) -> [Point; 3] {
        [self.n, self.ca, self.c]
    }

    pub fn transformed(&self, rot: &Matrix3<f64>, shift: &Vector3<f64>) -> Self {
        Backbone {
            n: rot * self.n + shift,
            ca: rot * self.ca + shift,
            c: rot * self.c + shift,
        }
    }

    fn check(&self) -> std::result::Result<(), &'static str> {
        if !self.atoms().iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err("non-finite coordinate");
        }
        if self.n == self.ca || self.c == self.ca {
            return Err("backbone atom coincides with CA");
        }
        Ok(())
    }
}

/// Which atoms drive a superposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomSelection {
    #[default]
    Ca,
    Backbone,
}

impl AtomSelection {
    fn collect(&self, residues: &[Backbone], out: &mut Vec<Point>) {
        out.clear();
        match self {
            AtomSelection::Ca => out.extend(residues.iter().map(|b| b.ca)),
            AtomSelection::Backbone => out.extend(residues.iter().flat_map(|b| b.atoms())),
        }
    }
}

/// T frames of R residues, each with N, CA and C positions in Å.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneTrajectory {
    n_frames: usize,
    n_residues: usize,
    coords: Vec<Backbone>,
    chain_ids: Vec<u8>,
    pub dt_hint: Option<f64>,
}

impl BackboneTrajectory {
    /// Build from frame-major residue data, validating every invariant.
    pub fn new(n_frames: usize, n_residues: usize, coords: Vec<Backbone>, chain_ids: Vec<u8>) -> Result<Self> {
        if coords.len() != n_frames * n_residues {
            return Err(Error::Structure(format!(
                "expected {} residue records, got {}",
                n_frames * n_residues,
                coords.len()
            )));
        }
        if chain_ids.len() != n_residues {
            return Err(Error::Structure(format!(
                "{} chain ids for {} residues",
                chain_ids.len(),
                n_residues
            )));
        }
        for (i, b) in coords.iter().enumerate() {
            if let Err(why) = b.check() {
                return Err(Error::Structure(format!(
                    "frame {} residue {}: {why}",
                    i / n_residues.max(1),
                    i % n_residues.max(1)
                )));
            }
        }
        Ok(BackboneTrajectory {
            n_frames,
            n_residues,
            coords,
            chain_ids,
            dt_hint: None,
        })
    }

    /// Trajectory from a list of frames, all on chain `A`.
    pub fn from_frames(frames: Vec<Vec<Backbone>>) -> Result<Self> {
        let r = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != r) {
            return Err(Error::Structure("frames have differing residue counts".into()));
        }
        let t = frames.len();
        Self::new(t, r, frames.into_iter().flatten().collect(), vec![b'A'; r])
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_residues(&self) -> usize {
        self.n_residues
    }

    pub fn chain_ids(&self) -> &[u8] {
        &self.chain_ids
    }

    pub fn with_chain_ids(mut self, chain_ids: Vec<u8>) -> Result<Self> {
        if chain_ids.len() != self.n_residues {
            return Err(Error::Structure("chain id count does not match residues".into()));
        }
        self.chain_ids = chain_ids;
        Ok(self)
    }

    pub fn frame(&self, t: usize) -> &[Backbone] {
        &self.coords[t * self.n_residues..(t + 1) * self.n_residues]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[Backbone]> + '_ {
        self.coords.chunks_exact(self.n_residues.max(1)).take(self.n_frames)
    }

    pub fn ca(&self, t: usize) -> Vec<Point> {
        self.frame(t).iter().map(|b| b.ca).collect()
    }

    pub fn coords(&self) -> &[Backbone] {
        &self.coords
    }

    /// Keep only the listed frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(frames.len() * self.n_residues);
        for &t in frames {
            if t >= self.n_frames {
                return Err(Error::domain(format!("frame {t} out of range")));
            }
            coords.extend_from_slice(self.frame(t));
        }
        Ok(BackboneTrajectory {
            n_frames: frames.len(),
            n_residues: self.n_residues,
            coords,
            chain_ids: self.chain_ids.clone(),
            dt_hint: self.dt_hint,
        })
    }

    /// Keep only the listed residues (column subset), in the given order.
    pub fn select_residues(&self, residues: &[usize]) -> Result<Self> {
        if let Some(&bad) = residues.iter().find(|&&r| r >= self.n_residues) {
            return Err(Error::domain(format!("residue {bad} out of range")));
        }
        let coords = self
            .frames()
            .flat_map(|f| residues.iter().map(move |&r| f[r]))
            .collect();
        Ok(BackboneTrajectory {
            n_frames: self.n_frames,
            n_residues: residues.len(),
            coords,
            chain_ids: residues.iter().map(|&r| self.chain_ids[r]).collect(),
            dt_hint: self.dt_hint,
        })
    }

    /// Residue indices belonging to `chain`.
    pub fn chain_residues(&self, chain: u8) -> Vec<usize> {
        chain_members(&self.chain_ids, chain)
    }

    /// Apply one rigid motion to every frame.
    pub fn transformed(&self, rot: &Matrix3<f64>, shift: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.coords.iter_mut().for_each(|b| *b = b.transformed(rot, shift));
        out
    }
}

fn chain_members(chain_ids: &[u8], chain: u8) -> Vec<usize> {
    chain_ids
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == chain)
        .map(|(i, _)| i)
        .collect()
}

/// Distinct chain ids in order of first appearance.
pub fn distinct_chains(chain_ids: &[u8]) -> Vec<u8> {
    let mut seen = Vec::new();
    for &c in chain_ids {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResidueId {
    pub chain: u8,
    pub seq: i32,
    pub icode: u8,
    pub name: String,
}

impl std::fmt::Display for ResidueId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}{}", self.name, self.chain as char, self.seq)?;
        if self.icode != b' ' {
            write!(f, "{}", self.icode as char)?;
        }
        Ok(())
    }
}

/// Single static structure used as alignment and feature reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStructure {
    pub residues: Vec<Backbone>,
    pub chain_ids: Vec<u8>,
    pub residue_ids: Vec<ResidueId>,
    pub source: PathBuf,
}

impl ReferenceStructure {
    pub fn from_backbone(residues: Vec<Backbone>, chain_ids: Vec<u8>) -> Result<Self> {
        if residues.len() != chain_ids.len() {
            return Err(Error::Structure("chain id count does not match residues".into()));
        }
        for (i, b) in residues.iter().enumerate() {
            b.check()
                .map_err(|why| Error::Structure(format!("residue {i}: {why}")))?;
        }
        let residue_ids = chain_ids
            .iter()
            .enumerate()
            .map(|(i, &c)| ResidueId {
                chain: c,
                seq: i as i32 + 1,
                icode: b' ',
                name: "UNK".into(),
            })
            .collect();
        Ok(ReferenceStructure {
            residues,
            chain_ids,
            residue_ids,
            source: PathBuf::new(),
        })
    }

    /// Frame `t` of a trajectory as a reference.
    pub fn from_frame(traj: &BackboneTrajectory, t: usize) -> Result<Self> {
        if t >= traj.n_frames() {
            return Err(Error::domain(format!("frame {t} out of range")));
        }
        Self::from_backbone(traj.frame(t).to_vec(), traj.chain_ids().to_vec())
    }

    pub fn n_residues(&self) -> usize {
        self.residues.len()
    }

    pub fn ca(&self) -> Vec<Point> {
        self.residues.iter().map(|b| b.ca).collect()
    }

    pub fn chain_residues(&self, chain: u8) -> Vec<usize> {
        chain_members(&self.chain_ids, chain)
    }

    /// One-frame trajectory holding this structure.
    pub fn to_trajectory(&self) -> BackboneTrajectory {
        BackboneTrajectory {
            n_frames: 1,
            n_residues: self.residues.len(),
            coords: self.residues.clone(),
            chain_ids: self.chain_ids.clone(),
            dt_hint: None,
        }
    }

    fn check_topology(&self, traj: &BackboneTrajectory) -> Result<()> {
        if traj.n_residues() != self.n_residues() {
            return Err(Error::Structure(format!(
                "reference has {} residues, trajectory has {}",
                self.n_residues(),
                traj.n_residues()
            )));
        }
        if traj.chain_ids() != self.chain_ids.as_slice() {
            return Err(Error::Structure("chain ids differ between reference and trajectory".into()));
        }
        Ok(())
    }
}

/// Options for [`load_trajectory_with`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub stride: usize,
    /// Raw frame window applied before striding.
    pub frame_range: Option<Range<usize>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            stride: 1,
            frame_range: None,
        }
    }
}

/// Load every `stride`-th frame of an MPB1 or CSV trajectory.
pub fn load_trajectory(path: impl AsRef<Path>, stride: usize) -> Result<BackboneTrajectory> {
    load_trajectory_with(
        path,
        &LoadOptions {
            stride,
            frame_range: None,
        },
    )
}

pub fn load_trajectory_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<BackboneTrajectory> {
    let path = path.as_ref();
    if opts.stride < 1 {
        return Err(Error::domain("stride must be at least 1"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&MPB1_MAGIC) {
        decode_mpb1(&bytes, opts)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Format {
            offset: e.utf8_error().valid_up_to() as u64,
            message: "neither MPB1 magic nor UTF-8 CSV".into(),
        })?;
        parse_csv_trajectory(&text, opts)
    }
}

fn selected_frames(total: usize, opts: &LoadOptions) -> Result<Vec<usize>> {
    let range = opts.frame_range.clone().unwrap_or(0..total);
    if range.start > range.end || range.end > total {
        return Err(Error::domain(format!(
            "frame range {}..{} outside 0..{total}",
            range.start, range.end
        )));
    }
    Ok(range.step_by(opts.stride).collect())
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Decode an in-memory MPB1 image.
pub fn decode_mpb1(bytes: &[u8], opts: &LoadOptions) -> Result<BackboneTrajectory> {
    if bytes.len() < MPB1_HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header ({} of {MPB1_HEADER_LEN} bytes)", bytes.len()),
        });
    }
    if bytes[..4] != MPB1_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = read_u32(bytes, 4);
    if version != MPB1_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let total = read_u32(bytes, 8) as usize;
    let n_res = read_u32(bytes, 12) as usize;
    if bytes[16] != 3 {
        return Err(Error::Format {
            offset: 16,
            message: format!("atom count must be 3, found {}", bytes[16]),
        });
    }
    let frame_bytes = n_res * 3 * 3 * 4;
    let payload_end = MPB1_HEADER_LEN + total * frame_bytes;
    if bytes.len() < payload_end {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated payload: expected {payload_end} bytes"),
        });
    }
    let chain_ids = match bytes.len() - payload_end {
        0 => vec![b'A'; n_res],
        extra if extra == n_res => {
            let ids = bytes[payload_end..].to_vec();
            if let Some(pos) = ids.iter().position(|c| !c.is_ascii_graphic()) {
                return Err(Error::Format {
                    offset: (payload_end + pos) as u64,
                    message: "chain id is not printable ASCII".into(),
                });
            }
            ids
        }
        extra => {
            return Err(Error::Format {
                offset: payload_end as u64,
                message: format!("{extra} trailing bytes; expected 0 or {n_res}"),
            })
        }
    };

    let frames = selected_frames(total, opts)?;
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64;
    let mut coords = Vec::with_capacity(frames.len() * n_res);
    for &t in &frames {
        let base = MPB1_HEADER_LEN + t * frame_bytes;
        for r in 0..n_res {
            let at = |a: usize| {
                let o = base + (r * 3 + a) * 12;
                Vector3::new(f32_at(o), f32_at(o + 4), f32_at(o + 8))
            };
            coords.push(Backbone::new(at(0), at(1), at(2)));
        }
    }
    BackboneTrajectory::new(frames.len(), n_res, coords, chain_ids)
}

/// Encode as MPB1 (coordinates narrowed to f32).
pub fn encode_mpb1(traj: &BackboneTrajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(MPB1_HEADER_LEN + traj.coords.len() * 36 + traj.n_residues);
    out.extend_from_slice(&MPB1_MAGIC);
    out.extend_from_slice(&MPB1_VERSION.to_le_bytes());
    out.extend_from_slice(&(traj.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(traj.n_residues as u32).to_le_bytes());
    out.push(3);
    out.extend_from_slice(&[0u8; 7]);
    for b in &traj.coords {
        for p in b.atoms() {
            for x in p.iter() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&traj.chain_ids);
    out
}

pub fn write_mpb1(path: impl AsRef<Path>, traj: &BackboneTrajectory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mpb1(traj)).map_err(|e| Error::io(path, e))
}

pub fn write_csv_trajectory(path: impl AsRef<Path>, traj: &BackboneTrajectory) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("frame,residue,atom,x,y,z\n");
    for (t, frame) in traj.frames().enumerate() {
        for (r, b) in frame.iter().enumerate() {
            for (name, p) in ["N", "CA", "C"].iter().zip(b.atoms()) {
                out.push_str(&format!("{t},{r},{name},{},{},{}\n", p.x, p.y, p.z));
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Parse the CSV fallback encoding.
pub fn parse_csv_trajectory(text: &str, opts: &LoadOptions) -> Result<BackboneTrajectory> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Format {
        offset: 0,
        message: "empty CSV".into(),
    })?;
    let cols: Vec<_> = header.split(',').map(str::trim).collect();
    if cols != ["frame", "residue", "atom", "x", "y", "z"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    // frame -> residue -> [N, CA, C]
    let mut frames: BTreeMap<usize, BTreeMap<usize, [Option<Point>; 3]>> = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let bad = |message: String| Error::Parse { line: line_no, message };
        let f: Vec<_> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let frame: usize = f[0].parse().map_err(|_| bad(format!("bad frame {:?}", f[0])))?;
        let residue: usize = f[1].parse().map_err(|_| bad(format!("bad residue {:?}", f[1])))?;
        let atom = match f[2] {
            "N" => 0,
            "CA" => 1,
            "C" => 2,
            other => return Err(bad(format!("unknown atom {other:?}"))),
        };
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            *v = f[3 + k]
                .parse()
                .map_err(|_| bad(format!("bad coordinate {:?}", f[3 + k])))?;
        }
        let slot = &mut frames.entry(frame).or_default().entry(residue).or_insert([None; 3])[atom];
        if slot.is_some() {
            return Err(bad(format!("duplicate atom for frame {frame} residue {residue}")));
        }
        *slot = Some(Vector3::new(xyz[0], xyz[1], xyz[2]));
    }

    let total = frames.len();
    if let Some((&last, _)) = frames.iter().next_back() {
        if last + 1 != total {
            return Err(Error::Structure(format!(
                "frame indices are not contiguous from 0 (found {total} frames, max index {last})"
            )));
        }
    }
    let topology: Vec<usize> = frames.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
    for (t, residues) in &frames {
        if !residues.keys().copied().eq(topology.iter().copied()) {
            return Err(Error::Structure(format!("frame {t} has a different residue set than frame 0")));
        }
        for (r, atoms) in residues {
            if atoms.iter().any(Option::is_none) {
                return Err(Error::Structure(format!("frame {t} residue {r} lacks a backbone atom")));
            }
        }
    }
    let keep = selected_frames(total, opts)?;
    let frame_list: Vec<_> = frames.into_values().collect();
    let n_res = topology.len();
    let mut coords = Vec::with_capacity(keep.len() * n_res);
    for &t in &keep {
        for atoms in frame_list[t].values() {
            coords.push(Backbone::new(atoms[0].unwrap(), atoms[1].unwrap(), atoms[2].unwrap()));
        }
    }
    BackboneTrajectory::new(keep.len(), n_res, coords, vec![b'A'; n_res])
}

/// Read N/CA/C atoms from the ATOM records of a PDB file.
pub fn parse_reference(path: impl AsRef<Path>) -> Result<ReferenceStructure> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reference = parse_pdb_str(&text)?;
    reference.source = path.to_path_buf();
    Ok(reference)
}

fn pdb_field(line: &str, range: Range<usize>) -> &str {
    let end = range.end.min(line.len());
    if range.start >= end {
        ""
    } else {
        line.get(range.start..end).unwrap_or("")
    }
}

pub fn parse_pdb_str(text: &str) -> Result<ReferenceStructure> {
    let mut order: Vec<ResidueId> = Vec::new();
    let mut atoms: BTreeMap<ResidueId, [Option<Point>; 3]> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        let line_no = idx + 1;
        let bad = |message: String| Error::Parse { line: line_no, message };
        let name = pdb_field(line, 12..16).trim();
        let slot = match name {
            "N" => 0,
            "CA" => 1,
            "C" => 2,
            _ => continue,
        };
        let altloc = pdb_field(line, 16..17).chars().next().unwrap_or(' ');
        if altloc != ' ' && altloc != 'A' {
            log::warn!("line {line_no}: skipping alternate location {altloc:?}");
            continue;
        }
        let chain = pdb_field(line, 21..22).bytes().next().unwrap_or(b' ');
        let seq: i32 = pdb_field(line, 22..26)
            .trim()
            .parse()
            .map_err(|_| bad("bad residue sequence number".into()))?;
        let icode = pdb_field(line, 26..27).bytes().next().unwrap_or(b' ');
        let coord = |r: Range<usize>| -> Result<f64> {
            pdb_field(line, r.clone())
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad coordinate in columns {}-{}", r.start + 1, r.end)))
        };
        let p = Vector3::new(coord(30..38)?, coord(38..46)?, coord(46..54)?);
        let id = ResidueId {
            chain,
            seq,
            icode,
            name: pdb_field(line, 17..20).trim().to_string(),
        };
        let entry = atoms.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            [None; 3]
        });
        if entry[slot].is_none() {
            entry[slot] = Some(p);
        }
    }
    if order.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no backbone ATOM records".into(),
        });
    }
    let mut residues = Vec::with_capacity(order.len());
    for id in &order {
        let a = atoms[id];
        match a {
            [Some(n), Some(ca), Some(c)] => residues.push(Backbone::new(n, ca, c)),
            _ => {
                let missing: Vec<_> = ["N", "CA", "C"]
                    .iter()
                    .zip(a.iter())
                    .filter(|(_, p)| p.is_none())
                    .map(|(n, _)| *n)
                    .collect();
                return Err(Error::Structure(format!(
                    "residue {id} is missing backbone atom(s) {}",
                    missing.join(", ")
                )));
            }
        }
    }
    let chain_ids = order.iter().map(|id| id.chain).collect();
    let mut reference = ReferenceStructure::from_backbone(residues, chain_ids)?;
    reference.residue_ids = order;
    Ok(reference)
}

/// Least-squares rigid transform `x -> rotation * x + translation` taking
/// `moving` onto `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superposition {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub rmsd: f64,
}

impl Superposition {
    pub fn apply(&self, p: &Point) -> Point {
        self.rotation.matrix() * p + self.translation
    }
}

fn centroid(points: &[Point]) -> Point {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Optimal superposition (Kabsch) of `moving` onto `target`.
pub fn kabsch(moving: &[Point], target: &[Point]) -> Result<Superposition> {
    if moving.len() != target.len() {
        return Err(Error::domain(format!(
            "point counts differ: {} vs {}",
            moving.len(),
            target.len()
        )));
    }
    if moving.len() < 3 {
        return Err(Error::domain("superposition needs at least 3 points"));
    }
    if !moving.iter().chain(target).all(|p| p.iter().all(|x| x.is_finite())) {
        return Err(Error::domain("non-finite coordinates"));
    }
    let cm = centroid(moving);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for (m, t) in moving.iter().zip(target) {
        h += (m - cm) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 1e-300 || sv[1] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateGeometry(
            "cross-covariance is rank deficient (collinear or coincident points)".into(),
        ));
    }
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
        let mut d = Matrix3::identity();
        d[(idx, idx)] = -1.0;
        r = v * d * u.transpose();
    }
    let translation = ct - r * cm;
    let msd = moving
        .iter()
        .zip(target)
        .map(|(m, t)| (r * m + translation - t).norm_squared())
        .sum::<f64>()
        / moving.len() as f64;
    Ok(Superposition {
        rotation: Rotation::from_matrix_unchecked(r),
        translation,
        rmsd: msd.sqrt(),
    })
}

/// Superpose every frame onto `reference` using the selected atoms; all
/// backbone atoms move rigidly.
pub fn align_trajectory(
    traj: &BackboneTrajectory,
    reference: &ReferenceStructure,
    selection: AtomSelection,
) -> Result<BackboneTrajectory> {
    reference.check_topology(traj)?;
    let all: Vec<usize> = (0..traj.n_residues()).collect();
    align_subsets(traj, reference, selection, &[all])
}

/// Align each chain independently to its counterpart in `reference`.
pub fn align_trajectory_per_chain(
    traj: &BackboneTrajectory,
    reference: &ReferenceStructure,
    selection: AtomSelection,
) -> Result<BackboneTrajectory> {
    reference.check_topology(traj)?;
    let groups: Vec<Vec<usize>> = distinct_chains(traj.chain_ids())
        .into_iter()
        .map(|c| traj.chain_residues(c))
        .collect();
    align_subsets(traj, reference, selection, &groups)
}

fn align_subsets(
    traj: &BackboneTrajectory,
    reference: &ReferenceStructure,
    selection: AtomSelection,
    groups: &[Vec<usize>],
) -> Result<BackboneTrajectory> {
    let n_res = traj.n_residues();
    let targets: Vec<Vec<Point>> = groups
        .iter()
        .map(|g| {
            let picked: Vec<Backbone> = g.iter().map(|&r| reference.residues[r]).collect();
            let mut pts = Vec::new();
            selection.collect(&picked, &mut pts);
            pts
        })
        .collect();
    let mut coords = traj.coords.clone();
    coords
        .par_chunks_mut(n_res.max(1))
        .enumerate()
        .try_for_each(|(t, frame)| -> Result<()> {
            let mut moving = Vec::new();
            let mut picked = Vec::new();
            for (g, target) in groups.iter().zip(&targets) {
                picked.clear();
                picked.extend(g.iter().map(|&r| frame[r]));
                selection.collect(&picked, &mut moving);
                let sup = kabsch(&moving, target).map_err(|e| e.in_frame(t))?;
                let rot = *sup.rotation.matrix();
                for &r in g {
                    frame[r] = frame[r].transformed(&rot, &sup.translation);
                }
            }
            Ok(())
        })?;
    Ok(BackboneTrajectory {
        coords,
        ..traj.clone()
    })
}
