//! Log-densities of the supplementary features and their score functions.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Input clamp for `ln tanh(u)`.
pub const EPS_U: f64 = 1e-6;
/// Magnitude floor for `sinh(2u)` in the literal tanh score.
pub const EPS_S: f64 = 1e-6;

/// Density family used for every supplementary-feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// `ln tanh(u)`, clamped at `u >= EPS_U`; score `2 / sinh(2u)`.
    PaperTanh,
    /// Hyperbolic secant density: `-ln cosh(u) - ln π`. Super-Gaussian.
    LogCosh,
    /// Equal mixture of N(±1, 1): `ln cosh(u) - u²/2 - 1/2 - ln √(2π)`.
    /// Sub-Gaussian and log-concave.
    SubGaussian,
    /// Per-row choice between `LogCosh` and `SubGaussian`, re-evaluated at
    /// every call from the sign of `E[sech² u] E[u²] - E[u tanh u]`.
    #[default]
    Adaptive,
}

/// Concrete density of one row once `Adaptive` has been resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowDensity {
    PaperTanh,
    LogCosh,
    SubGaussian,
}

/// Numerically stable `ln cosh(u)`.
pub fn ln_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl RowDensity {
    pub fn log_density(self, u: f64) -> f64 {
        match self {
            RowDensity::PaperTanh => u.max(EPS_U).tanh().ln(),
            RowDensity::LogCosh => -ln_cosh(u) - PI.ln(),
            RowDensity::SubGaussian => ln_cosh(u) - 0.5 * u * u - 0.5 - 0.5 * (2.0 * PI).ln(),
        }
    }

    /// `d/du ln p(u)`.
    pub fn score(self, u: f64) -> f64 {
        match self {
            RowDensity::PaperTanh => {
                let s = (2.0 * u).sinh();
                let s = if s.abs() < EPS_S {
                    EPS_S.copysign(s)
                } else {
                    s
                };
                2.0 / s
            }
            RowDensity::LogCosh => -u.tanh(),
            RowDensity::SubGaussian => u.tanh() - u,
        }
    }
}

/// Extended-infomax switching statistic of one row; positive means the
/// super-Gaussian density is the stable choice.
pub fn switching_statistic(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut sech2, mut sq, mut ut, mut n) = (0.0, 0.0, 0.0, 0usize);
    for u in row {
        let t = u.tanh();
        sech2 += 1.0 - t * t;
        sq += u * u;
        ut += u * t;
        n += 1;
    }
    let n = n as f64;
    (sech2 / n) * (sq / n) - ut / n
}

/// Resolves the concrete density of each row of `u`.
pub fn resolve_rows(u: &DMatrix<f64>, mode: DensityMode) -> Vec<RowDensity> {
    let fixed = |r| vec![r; u.nrows()];
    match mode {
        DensityMode::PaperTanh => fixed(RowDensity::PaperTanh),
        DensityMode::LogCosh => fixed(RowDensity::LogCosh),
        DensityMode::SubGaussian => fixed(RowDensity::SubGaussian),
        DensityMode::Adaptive => u
            .row_iter()
            .map(|row| {
                if switching_statistic(row.iter().copied()) > 0.0 {
                    RowDensity::LogCosh
                } else {
                    RowDensity::SubGaussian
                }
            })
            .collect(),
    }
}

/// Elementwise log-density, same shape as `u`.
pub fn log_density(u: &DMatrix<f64>, mode: DensityMode) -> DMatrix<f64> {
    let rows = resolve_rows(u, mode);
    DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| rows[i].log_density(u[(i, j)]))
}

/// Elementwise score with rows already resolved.
pub(crate) fn score_matrix(u: &DMatrix<f64>, rows: &[RowDensity]) -> DMatrix<f64> {
    DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| rows[i].score(u[(i, j)]))
}

/// Sum over rows of the per-row sample mean log-density.
pub(crate) fn mean_log_density(u: &DMatrix<f64>, rows: &[RowDensity]) -> f64 {
    let d = u.ncols() as f64;
    u.row_iter()
        .zip(rows)
        .map(|(row, r)| row.iter().map(|&v| r.log_density(v)).sum::<f64>() / d)
        .sum()
}
