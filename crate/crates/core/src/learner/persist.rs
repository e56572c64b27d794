//! Model directories: `manifest.json` plus raw little-endian f64 blobs,
//! row-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelState, TrainConfig, TransitionMatrix};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessTransform;
use crate::taxonomy::NodeId;

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub nodes: Vec<NodeId>,
    /// External ids of `nodes`, for reporting.
    pub external_ids: Vec<u64>,
    pub config: TrainConfig,
    pub iterations: usize,
    pub converged: bool,
    pub loss_log: Vec<f64>,
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(m.len() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Shape(format!(
            "{} holds {} bytes, expected {rows}x{cols} f64",
            path.display(),
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Writes `m` into `dir` (created if absent). `external_ids` maps each
/// model node to its id in the source files.
pub fn save_model(m: &ModelState, external_ids: &[u64], dir: &Path) -> Result<()> {
    if external_ids.len() != m.n() {
        return Err(Error::Shape(format!(
            "{} external ids for {} nodes",
            external_ids.len(),
            m.n()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n: m.n(),
        d: m.d(),
        nodes: m.nodes.clone(),
        external_ids: external_ids.to_vec(),
        config: m.config.clone(),
        iterations: m.iterations,
        converged: m.converged,
        loss_log: m.loss_log.clone(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    write_matrix(&dir.join("W.bin"), &m.transition.w)?;
    write_matrix(&dir.join("Z.bin"), &m.preprocess.whitener)?;
    let means = DMatrix::from_column_slice(1, m.n(), m.preprocess.means.as_slice());
    write_matrix(&dir.join("means.bin"), &means)?;
    write_matrix(&dir.join("Xw.bin"), &m.whitened)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.nodes.len() != manifest.n || manifest.external_ids.len() != manifest.n {
        return Err(Error::Shape(format!(
            "manifest lists {} nodes and {} ids for n = {}",
            manifest.nodes.len(),
            manifest.external_ids.len(),
            manifest.n
        )));
    }
    Ok(manifest)
}

/// Reads a model directory back; `U` and the inverse whitener are recomputed.
pub fn load_model(dir: &Path) -> Result<(ModelState, Vec<u64>)> {
    let man = load_manifest(dir)?;
    let (n, d) = (man.n, man.d);
    let w = read_matrix(&dir.join("W.bin"), n, n)?;
    let z = read_matrix(&dir.join("Z.bin"), n, n)?;
    let means = read_matrix(&dir.join("means.bin"), 1, n)?;
    let whitened = read_matrix(&dir.join("Xw.bin"), n, d)?;
    let inverse = z
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(z.determinant().abs()))?;
    let supplementary = &w * &whitened;
    let state = ModelState {
        transition: TransitionMatrix {
            w,
            density: man.config.density,
        },
        preprocess: PreprocessTransform {
            means: DVector::from_row_slice(means.as_slice()),
            whitener: z,
            inverse,
        },
        nodes: man.nodes,
        loss_log: man.loss_log,
        whitened,
        supplementary,
        config: man.config,
        iterations: man.iterations,
        converged: man.converged,
    };
    Ok((state, man.external_ids))
}
