use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

use super::{OperatorMatrix, OperatorTag, RadialGrid};
use crate::error::{Error, Result};
use crate::kinetics::WeightSpec;

/// Sidecar written next to a binary matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub tag: OperatorTag,
    pub alpha: f64,
    pub rows: usize,
    pub cols: usize,
    pub layout: String,
    pub grid: RadialGrid,
    pub weight_a: f64,
    pub sha256: String,
    pub flags: Vec<String>,
}

fn matrix_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

/// Writes `<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
pub fn export_matrix(op: &OperatorMatrix, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let bytes = matrix_bytes(&op.matrix);
    let sidecar = MatrixSidecar {
        tag: op.tag,
        alpha: op.alpha,
        rows: op.matrix.nrows(),
        cols: op.matrix.ncols(),
        layout: "row-major f64 little-endian".into(),
        grid: op.grid.clone(),
        weight_a: op.weights.a(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        flags: op.flags.clone(),
    };
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    fs::write(&bin, &bytes)?;
    fs::write(&json, serde_json::to_string_pretty(&sidecar)?)?;
    Ok((bin, json))
}

/// Reads a matrix back and checks it against the sidecar checksum.
pub fn import_matrix(stem: &Path) -> Result<OperatorMatrix> {
    let sidecar: MatrixSidecar = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    let bytes = fs::read(stem.with_extension("bin"))?;
    if hex::encode(Sha256::digest(&bytes)) != sidecar.sha256 {
        return Err(Error::Checkpoint("matrix checksum does not match its sidecar".into()));
    }
    if bytes.len() != 8 * sidecar.rows * sidecar.cols {
        return Err(Error::Checkpoint("matrix size does not match its sidecar".into()));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(OperatorMatrix {
        tag: sidecar.tag,
        alpha: sidecar.alpha,
        grid: sidecar.grid,
        weights: WeightSpec::new(sidecar.weight_a)?,
        matrix: DMatrix::from_row_slice(sidecar.rows, sidecar.cols, &vals),
        flags: sidecar.flags,
    })
}
