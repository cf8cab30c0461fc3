//! `MPF1` dense matrix container.
//!
//! Layout (little-endian): magic `MPF1`, `u32` rows, `u32` cols, `u8` kind
//! tag, then `rows * cols` f64 values in row-major order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::FeatureKind;

pub const MPF1_MAGIC: [u8; 4] = *b"MPF1";
pub const MPF1_HEADER_LEN: usize = 13;

/// What an MPF1 payload holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Feature(FeatureKind),
    Rmsd,
    Lddt,
    Gram,
    Rank1,
    Projection,
}

impl MatrixKind {
    pub fn tag(self) -> u8 {
        match self {
            MatrixKind::Feature(k) => k.tag(),
            MatrixKind::Rmsd => 16,
            MatrixKind::Lddt => 17,
            MatrixKind::Gram => 18,
            MatrixKind::Rank1 => 19,
            MatrixKind::Projection => 32,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            16 => MatrixKind::Rmsd,
            17 => MatrixKind::Lddt,
            18 => MatrixKind::Gram,
            19 => MatrixKind::Rank1,
            32 => MatrixKind::Projection,
            t => MatrixKind::Feature(FeatureKind::from_tag(t)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mpf1 {
    pub rows: usize,
    pub cols: usize,
    pub kind: MatrixKind,
    pub data: Vec<f64>,
}

impl Mpf1 {
    pub fn new(rows: usize, cols: usize, kind: MatrixKind, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::domain(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mpf1 { rows, cols, kind, data })
    }

    pub fn from_dmatrix(kind: MatrixKind, m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Mpf1 { rows: m.nrows(), cols: m.ncols(), kind, data }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MPF1_HEADER_LEN + self.data.len() * 8);
        out.extend_from_slice(&MPF1_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.push(self.kind.tag());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MPF1_HEADER_LEN {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: "truncated MPF1 header".into(),
            });
        }
        if bytes[..4] != MPF1_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad MPF1 magic".into(),
            });
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let kind = MatrixKind::from_tag(bytes[12]).ok_or(Error::Format {
            offset: 12,
            message: format!("unknown kind tag {}", bytes[12]),
        })?;
        let expected = MPF1_HEADER_LEN + rows * cols * 8;
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected) as u64,
                message: format!("payload length {} != expected {expected}", bytes.len()),
            });
        }
        let data = bytes[MPF1_HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Mpf1 { rows, cols, kind, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
