//! Negative log-likelihood of the whitened data under `U = W Xw`, its
//! gradient, and the guarded ascent step.

use nalgebra::DMatrix;

use super::density::{mean_log_density, resolve_rows, score_matrix, DensityMode, RowDensity};
use crate::error::{Error, Result};

/// Minimum `|det W|` accepted anywhere in training.
pub const EPS_DET: f64 = 1e-12;
/// Step-size halvings tried before a step is declared failed.
pub const MAX_HALVINGS: usize = 20;

/// Unmixing matrix `W = I - S` together with its density family.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub w: DMatrix<f64>,
    pub density: DensityMode,
}

/// One evaluation of the objective at a fixed `W`.
pub(crate) struct Evaluation {
    pub loss: f64,
    /// `∂(-loss)/∂W`.
    pub grad: DMatrix<f64>,
    /// `U = W Xw`.
    pub u: DMatrix<f64>,
    /// Score matrix `G`.
    pub g: DMatrix<f64>,
}

fn check_shapes(w: &DMatrix<f64>, xw: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() || w.ncols() != xw.nrows() {
        return Err(Error::Shape(format!(
            "W is {}x{}, data is {}x{}",
            w.nrows(),
            w.ncols(),
            xw.nrows(),
            xw.ncols()
        )));
    }
    Ok(())
}

/// `ln|det W|` and `W⁻¹`, or a singularity error.
pub(crate) fn log_det_and_inverse(w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let lu = w.clone().lu();
    let det = lu.determinant();
    if !(det.abs() > EPS_DET) {
        return Err(Error::Singular(det.abs()));
    }
    let inv = lu.try_inverse().ok_or(Error::Singular(det.abs()))?;
    Ok((det.abs().ln(), inv))
}

fn log_abs_det(w: &DMatrix<f64>) -> Result<f64> {
    let det = w.clone().lu().determinant();
    if !(det.abs() > EPS_DET) {
        return Err(Error::Singular(det.abs()));
    }
    Ok(det.abs().ln())
}

/// Evaluates loss and gradient together, sharing `U` and the resolved
/// row densities.
pub(crate) fn evaluate(w: &DMatrix<f64>, xw: &DMatrix<f64>, mode: DensityMode) -> Result<Evaluation> {
    check_shapes(w, xw)?;
    let (log_det, inv) = log_det_and_inverse(w)?;
    let u = w * xw;
    let rows = resolve_rows(&u, mode);
    let loss = -mean_log_density(&u, &rows) - log_det;
    let g = score_matrix(&u, &rows);
    let d = xw.ncols() as f64;
    let grad = &g * xw.transpose() / d + inv.transpose();
    Ok(Evaluation { loss, grad, u, g })
}

/// Sample-mean negative log-likelihood:
/// `-Σᵢ mean_t ln p(uᵢₜ) - ln|det W|` with `U = W Xw`.
pub fn loss(w: &TransitionMatrix, xw: &DMatrix<f64>) -> Result<f64> {
    check_shapes(&w.w, xw)?;
    let log_det = log_abs_det(&w.w)?;
    let u = &w.w * xw;
    let rows = resolve_rows(&u, w.density);
    Ok(-mean_log_density(&u, &rows) - log_det)
}

/// Loss with every row pinned to one concrete density.
pub fn loss_with_rows(w: &DMatrix<f64>, xw: &DMatrix<f64>, rows: &[RowDensity]) -> Result<f64> {
    check_shapes(w, xw)?;
    let log_det = log_abs_det(w)?;
    let u = w * xw;
    Ok(-mean_log_density(&u, rows) - log_det)
}

/// `∂(-loss)/∂W = (1/d) G Xwᵀ + (W⁻¹)ᵀ`, with `G` the elementwise score of
/// `U = W Xw`.
pub fn gradient(w: &TransitionMatrix, xw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(evaluate(&w.w, xw, w.density)?.grad)
}

/// Natural-gradient direction `(I + G Uᵀ / d) W`.
pub(crate) fn natural_direction(eval: &Evaluation, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let d = eval.u.ncols() as f64;
    (DMatrix::identity(n, n) + &eval.g * eval.u.transpose() / d) * w
}

/// Outcome of an accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub w: TransitionMatrix,
    /// Learning rate actually used after any halvings.
    pub alpha: f64,
}

/// `W' = W + α·grad`, halving `α` while `|det W'| <= EPS_DET`.
pub fn step(w: &TransitionMatrix, grad: &DMatrix<f64>, alpha: f64) -> Result<Step> {
    if grad.shape() != w.w.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} vs W {:?}",
            grad.shape(),
            w.w.shape()
        )));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite gradient".into()));
    }
    let mut a = alpha;
    for _ in 0..=MAX_HALVINGS {
        let next = &w.w + grad * a;
        let det = next.clone().lu().determinant();
        if det.abs() > EPS_DET {
            return Ok(Step {
                w: TransitionMatrix {
                    w: next,
                    density: w.density,
                },
                alpha: a,
            });
        }
        a *= 0.5;
    }
    Err(Error::StepFailed(MAX_HALVINGS))
}
