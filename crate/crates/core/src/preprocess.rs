//! Embedding loading, centering and whitening.
//!
//! The matrix convention throughout the crate: one row per node variable,
//! one column per embedding coordinate. The `d` coordinates are treated as
//! `d` joint observations of the `N` node variables.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, Taxonomy};

/// Default eigenvalue floor for the node covariance.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// N x d feature matrix aligned with a list of taxonomy nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub data: DMatrix<f64>,
    pub nodes: Vec<NodeId>,
}

impl EmbeddingMatrix {
    pub fn new(data: DMatrix<f64>, nodes: Vec<NodeId>) -> Result<Self> {
        if data.nrows() != nodes.len() {
            return Err(Error::Shape(format!(
                "{} rows for {} nodes",
                data.nrows(),
                nodes.len()
            )));
        }
        if data.ncols() < 2 {
            return Err(Error::Shape(format!(
                "feature dimension must be >= 2, got {}",
                data.ncols()
            )));
        }
        if let Some(((r, _), v)) = data.row_iter().enumerate().find_map(|(r, row)| {
            row.iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite())
                .map(|(c, v)| ((r, c), *v))
        }) {
            return Err(Error::NonFinite {
                node: nodes[r].0 as u64,
                value: v,
            });
        }
        Ok(EmbeddingMatrix { data, nodes })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Rows selected by position, in the given order.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let data = self.data.select_rows(rows.iter());
        let nodes = rows.iter().map(|&r| self.nodes[r]).collect();
        EmbeddingMatrix { data, nodes }
    }
}

/// Reads a word2vec/fastText style text file keyed by integer node ids:
/// a `<count> <dim>` header followed by `<id> <f1> ... <fd>` lines.
pub fn read_vectors(path: &Path) -> Result<(usize, Vec<(u64, Vec<f64>)>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `<count> <dim>` header".into()))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let mut fields = header.split_whitespace();
    let (Some(count), Some(dim), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(parse_err(1, format!("bad header {header:?}")));
    };
    let count: usize = count
        .parse()
        .map_err(|_| parse_err(1, format!("bad count {count:?}")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| parse_err(1, format!("bad dimension {dim:?}")))?;

    let mut out = Vec::with_capacity(count);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap();
        let id: u64 = id
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad node id {id:?}")))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(i + 1, format!("bad float {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: id, value: v });
        }
        out.push((id, values));
    }
    Ok((dim, out))
}

/// Writes vectors in the format accepted by [`read_vectors`]. Floats use
/// Rust's shortest round-trip representation.
pub fn write_vectors<'a, I>(path: &Path, dim: usize, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (u64, &'a [f64])>,
{
    let rows: Vec<_> = rows.into_iter().collect();
    let mut buf = format!("{} {}\n", rows.len(), dim);
    for (id, values) in rows {
        buf.push_str(&id.to_string());
        for v in values {
            buf.push(' ');
            buf.push_str(&v.to_string());
        }
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads one vector per feature-bearing node of `t`, rows in dense id order.
/// Vectors for ids outside the taxonomy are ignored.
pub fn load_embeddings(path: &Path, t: &Taxonomy) -> Result<EmbeddingMatrix> {
    let (dim, vectors) = read_vectors(path)?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; t.len()];
    for (id, v) in vectors {
        if let Some(node) = t.lookup(id) {
            rows[node.0] = Some(v);
        }
    }
    let nodes = t.feature_nodes();
    let mut data = DMatrix::zeros(nodes.len(), dim);
    for (r, &node) in nodes.iter().enumerate() {
        let v = rows[node.0]
            .as_ref()
            .ok_or(Error::MissingVector(t.external_id(node)))?;
        data.row_mut(r).copy_from_slice(v);
    }
    EmbeddingMatrix::new(data, nodes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhitenConfig {
    pub eigen_floor: f64,
    /// Added to the covariance diagonal before the eigendecomposition.
    pub ridge: f64,
}

impl Default for WhitenConfig {
    fn default() -> Self {
        WhitenConfig {
            eigen_floor: EIGEN_FLOOR,
            ridge: 0.0,
        }
    }
}

/// Centering plus a linear whitener `Z` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessTransform {
    pub means: DVector<f64>,
    pub whitener: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

impl PreprocessTransform {
    pub fn n(&self) -> usize {
        self.means.len()
    }

    /// `Z (x - means)` for an N x d matrix.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n() {
            return Err(Error::Shape(format!(
                "transform expects {} rows, got {}",
                self.n(),
                x.nrows()
            )));
        }
        Ok(&self.whitener * center_with(x, &self.means))
    }

    /// Identity transform with zero means (already-white data).
    pub fn identity(n: usize) -> Self {
        PreprocessTransform {
            means: DVector::zeros(n),
            whitener: DMatrix::identity(n, n),
            inverse: DMatrix::identity(n, n),
        }
    }
}

/// Per-row means over the sample axis.
pub fn row_means(x: &DMatrix<f64>) -> DVector<f64> {
    let d = x.ncols() as f64;
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.sum() / d))
}

fn center_with(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for (mut row, m) in xc.row_iter_mut().zip(means.iter()) {
        row.add_scalar_mut(-m);
    }
    xc
}

/// `(1/d) X Xᵀ` for row-centered `X`.
pub fn sample_covariance(xc: &DMatrix<f64>) -> DMatrix<f64> {
    let d = xc.ncols() as f64;
    let mut c = xc * xc.transpose() / d;
    // exact symmetry for the eigensolver
    c = (&c + c.transpose()) * 0.5;
    c
}

/// Symmetric inverse-square-root whitening with default settings.
pub fn fit_whiten(x: &EmbeddingMatrix) -> Result<(PreprocessTransform, EmbeddingMatrix)> {
    fit_whiten_with(x, &WhitenConfig::default())
}

pub fn fit_whiten_with(
    x: &EmbeddingMatrix,
    cfg: &WhitenConfig,
) -> Result<(PreprocessTransform, EmbeddingMatrix)> {
    let (n, d) = (x.n(), x.d());
    if d < n {
        return Err(Error::TooFewSamples {
            samples: d,
            variables: n,
        });
    }
    let means = row_means(&x.data);
    let xc = center_with(&x.data, &means);
    let mut cov = sample_covariance(&xc);
    for i in 0..n {
        cov[(i, i)] += cfg.ridge;
    }
    let eig = SymmetricEigen::new(cov);
    let min = eig.eigenvalues.min();
    if !(min > cfg.eigen_floor) {
        return Err(Error::RankDeficient {
            eigenvalue: min,
            floor: cfg.eigen_floor,
        });
    }
    let v = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let whitener = symmetrize(v * inv_sqrt * v.transpose());
    let inverse = symmetrize(v * sqrt * v.transpose());
    let xw = &whitener * xc;
    Ok((
        PreprocessTransform {
            means,
            whitener,
            inverse,
        },
        EmbeddingMatrix {
            data: xw,
            nodes: x.nodes.clone(),
        },
    ))
}

/// Per-row standardization: centering plus a diagonal whitener. Keeps the
/// sparsity pattern of any unmixing matrix composed with it.
pub fn fit_standardize(x: &EmbeddingMatrix) -> Result<(PreprocessTransform, EmbeddingMatrix)> {
    let means = row_means(&x.data);
    let xc = center_with(&x.data, &means);
    let d = x.d() as f64;
    let sd: Vec<f64> = xc
        .row_iter()
        .map(|r| (r.norm_squared() / d).sqrt())
        .collect();
    if let Some(&s) = sd.iter().find(|&&s| !(s * s > EIGEN_FLOOR)) {
        return Err(Error::RankDeficient {
            eigenvalue: s * s,
            floor: EIGEN_FLOOR,
        });
    }
    let whitener = DMatrix::from_diagonal(&DVector::from_iterator(
        sd.len(),
        sd.iter().map(|s| 1.0 / s),
    ));
    let inverse = DMatrix::from_diagonal(&DVector::from_vec(sd));
    let xw = &whitener * xc;
    Ok((
        PreprocessTransform {
            means,
            whitener,
            inverse,
        },
        EmbeddingMatrix {
            data: xw,
            nodes: x.nodes.clone(),
        },
    ))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Composes an unmixing matrix acting on whitened data with the whitener:
/// returns `m · Z`, which acts on centered original data.
pub fn apply_inverse(tr: &PreprocessTransform, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != tr.whitener.nrows() {
        return Err(Error::Shape(format!(
            "{}x{} matrix cannot be composed with a {}x{} whitener",
            m.nrows(),
            m.ncols(),
            tr.whitener.nrows(),
            tr.whitener.ncols()
        )));
    }
    Ok(m * &tr.whitener)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        EmbeddingMatrix::new(data, (0..n).map(NodeId).collect()).unwrap()
    }

    #[test]
    fn already_white_gives_identity() {
        // rows of a scaled Hadamard-like pattern are centered, orthogonal, unit variance
        let data = DMatrix::from_row_slice(
            2,
            4,
            &[1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
        );
        let x = EmbeddingMatrix::new(data, vec![NodeId(0), NodeId(1)]).unwrap();
        let (tr, _) = fit_whiten(&x).unwrap();
        assert!(max_abs(&(&tr.whitener - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn diagonal_variances() {
        // independent rows with variances 4 and 1 (orthogonal sign patterns)
        let data = DMatrix::from_row_slice(
            2,
            4,
            &[2.0, -2.0, 2.0, -2.0, 1.0, 1.0, -1.0, -1.0],
        );
        let x = EmbeddingMatrix::new(data, vec![NodeId(0), NodeId(1)]).unwrap();
        let (tr, _) = fit_whiten(&x).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        assert!(max_abs(&(&tr.whitener - expected)) < 1e-12);
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let x = random(4, 5000, 3);
        let (tr, xw) = fit_whiten(&x).unwrap();
        let cov = sample_covariance(&xw.data);
        assert!(max_abs(&(cov - DMatrix::identity(4, 4))) < 1e-8);
        let prod = &tr.whitener * &tr.inverse;
        assert!(max_abs(&(prod - DMatrix::identity(4, 4))) < 1e-10);
        for row in xw.data.row_iter() {
            assert!((row.sum() / 5000.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_input_does_not_change_output() {
        let x = random(5, 300, 9);
        let scaled = EmbeddingMatrix::new(&x.data * 37.5, x.nodes.clone()).unwrap();
        let (_, a) = fit_whiten(&x).unwrap();
        let (_, b) = fit_whiten(&scaled).unwrap();
        assert!(max_abs(&(a.data - b.data)) < 1e-8);
    }

    #[test]
    fn rank_deficient_and_short_inputs() {
        let mut x = random(3, 50, 1);
        let r0 = x.data.row(0).clone_owned();
        x.data.row_mut(2).copy_from(&(r0 * 2.0));
        assert!(matches!(fit_whiten(&x), Err(Error::RankDeficient { .. })));
        assert!(matches!(
            fit_whiten(&random(6, 5, 1)),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn apply_inverse_cases() {
        let x = random(3, 400, 5);
        let (tr, xw) = fit_whiten(&x).unwrap();
        let id = apply_inverse(&tr, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(id, tr.whitener);
        let back = apply_inverse(&tr, &tr.inverse).unwrap();
        assert!(max_abs(&(back - DMatrix::identity(3, 3))) < 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
        let xc = center_with(&x.data, &tr.means);
        let lhs = apply_inverse(&tr, &m).unwrap() * &xc;
        let rhs = &m * &xw.data;
        assert!(max_abs(&(lhs - rhs)) < 1e-10);
        assert!(apply_inverse(&tr, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn standardize_is_diagonal() {
        let x = random(3, 200, 2);
        let (tr, xs) = fit_standardize(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(tr.whitener[(i, j)], 0.0);
                }
            }
            let var = xs.data.row(i).norm_squared() / 200.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let tax = Taxonomy::new(vec![(10, "a".into()), (20, "b".into())], &[(10, 20)]).unwrap();
        let path = dir.path().join("vec.txt");
        fs::write(&path, "2 3\n10 1 2 3\n20 4 5 6.5\n").unwrap();
        let m = load_embeddings(&path, &tax).unwrap();
        assert_eq!((m.n(), m.d()), (2, 3));
        assert_eq!(m.data[(1, 2)], 6.5);

        fs::write(&path, "1 3\n10 1 2 3\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, &tax),
            Err(Error::MissingVector(20))
        ));
        fs::write(&path, "2 3\n10 1 2 3\n20 4 5\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, &tax),
            Err(Error::DimensionMismatch { .. })
        ));
        fs::write(&path, "2 3\n10 1 2 3\n20 4 5 NaN\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, &tax),
            Err(Error::NonFinite { .. })
        ));
    }
}
