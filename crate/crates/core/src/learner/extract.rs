//! Turning a learned unmixing matrix into an inheritance matrix `S`.
//!
//! Maximum-likelihood unmixing is only identified up to row order and row
//! scale. The row order is fixed by the assignment that puts the largest
//! entries on the diagonal (minimum `Σ 1/|a_ii|`), the scale by dividing each
//! row by its diagonal. What remains off the diagonal is `-S`.

use nalgebra::DMatrix;

use super::objective::EPS_DET;
use crate::assignment::min_cost_assignment;
use crate::dag;
use crate::error::{Error, Result};

/// `S` with zero diagonal; `s[(i, j)]` is the factor with which node `i`
/// inherits from node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InheritanceMatrix {
    pub s: DMatrix<f64>,
    pub threshold: f64,
}

impl InheritanceMatrix {
    /// Nonzero entries as `(parent, child, factor)`, row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.s.nrows();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = self.s[(i, j)];
                if i != j && v != 0.0 {
                    out.push((j, i, v));
                }
            }
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        dag::topological_order(&children_of(&self.s)).is_ok()
    }
}

fn children_of(s: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = s.nrows();
    (0..n)
        .map(|j| (0..n).filter(|&i| i != j && s[(i, j)] != 0.0).collect())
        .collect()
}

/// Resolves permutation and scale of a total unmixing matrix `A` and
/// returns the unpruned `S = I - D⁻¹ P A`.
pub fn resolve_permutation_scale(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::Shape(format!("unmixing matrix is {:?}", a.shape())));
    }
    for c in 0..n {
        if a.column(c).iter().all(|v| !(v.abs() >= EPS_DET)) {
            return Err(Error::AssignmentInfeasible(c));
        }
    }
    let cost = a.map(|v| 1.0 / v.abs().max(EPS_DET));
    let col_of_row = min_cost_assignment(&cost);
    let mut permuted = DMatrix::zeros(n, n);
    for (r, &c) in col_of_row.iter().enumerate() {
        let row = a.row(r) / a[(r, c)];
        permuted.row_mut(c).copy_from(&row);
    }
    Ok(DMatrix::identity(n, n) - permuted)
}

/// Full extraction: permutation/scale resolution, pruning at `threshold`,
/// and optional removal of the weakest edge of each remaining cycle.
pub fn extract_from_unmixing(
    a: &DMatrix<f64>,
    threshold: f64,
    enforce_acyclic: bool,
) -> Result<InheritanceMatrix> {
    let mut s = resolve_permutation_scale(a)?;
    prune(&mut s, threshold);
    if enforce_acyclic {
        break_cycles(&mut s);
    }
    Ok(InheritanceMatrix { s, threshold })
}

pub(crate) fn prune(s: &mut DMatrix<f64>, threshold: f64) {
    let n = s.nrows();
    for i in 0..n {
        for j in 0..n {
            if i == j || s[(i, j)].abs() < threshold {
                s[(i, j)] = 0.0;
            }
        }
    }
}

/// Repeatedly zeroes the smallest-magnitude edge on a detected cycle.
pub(crate) fn break_cycles(s: &mut DMatrix<f64>) {
    while let Err(cycle) = dag::topological_order(&children_of(s)) {
        let k = cycle.len();
        // cycle lists parents before children: edge cycle[t] -> cycle[t+1]
        let (child, parent) = (0..k)
            .map(|t| (cycle[(t + 1) % k], cycle[t]))
            .min_by(|a, b| s[*a].abs().total_cmp(&s[*b].abs()))
            .expect("cycle is non-empty");
        s[(child, parent)] = 0.0;
    }
}
