//! Placing query nodes: estimate a query's inheritance vector against a
//! trained block, rank candidate anchors, and recombine candidates across
//! sub-taxonomy blocks.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::density::{resolve_rows, RowDensity};
use crate::learner::{self, extract_from_unmixing, DensityMode, ModelState, TrainConfig};
use crate::preprocess::{self, EmbeddingMatrix};
use crate::taxonomy::{NodeId, SubTaxonomy, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InferMode {
    /// Per-query sparse regression against the block's fixed features.
    #[default]
    Frozen,
    /// Append the query as a new variable and continue training.
    Refit,
}

impl std::str::FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(InferMode::Frozen),
            "refit" => Ok(InferMode::Refit),
            other => Err(Error::Config(format!("unknown inference mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub mode: InferMode,
    /// L1 weight as a fraction of the largest unpenalized factor.
    pub lambda_scale: f64,
    pub max_iters: usize,
    /// Stop once no coefficient moves by more than this.
    pub tol: f64,
    pub refit_iters: usize,
    pub rounds: usize,
    /// Blocks merged per recombination round.
    pub fan_in: usize,
    /// Anchors attached per query.
    pub top_m: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            mode: InferMode::Frozen,
            lambda_scale: 0.01,
            max_iters: 2000,
            tol: 1e-9,
            refit_iters: 200,
            rounds: 3,
            fan_in: 2,
            top_m: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    /// External id.
    pub id: u64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InheritanceVector {
    pub query: u64,
    /// Candidate nodes, aligned with `factors`.
    pub nodes: Vec<NodeId>,
    pub factors: Vec<f64>,
    pub no_anchor: bool,
    /// False when the optimizer stopped at `max_iters`; the best iterate is
    /// returned.
    pub converged: bool,
}

impl InheritanceVector {
    pub fn new(query: u64, nodes: Vec<NodeId>, factors: Vec<f64>) -> Self {
        let no_anchor = factors.iter().all(|&f| f == 0.0);
        InheritanceVector {
            query,
            nodes,
            factors,
            no_anchor,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedAnchors {
    pub query: u64,
    pub entries: Vec<(NodeId, f64)>,
}

impl RankedAnchors {
    pub fn top(&self) -> Option<(NodeId, f64)> {
        self.entries.first().copied()
    }
}

/// Nonzero factors by descending value (ties by ascending id), then every
/// zero-factor node by ascending id.
pub fn rank_anchors(s: &InheritanceVector) -> RankedAnchors {
    let mut nonzero: Vec<(NodeId, f64)> = Vec::new();
    let mut zero: Vec<(NodeId, f64)> = Vec::new();
    for (&n, &f) in s.nodes.iter().zip(&s.factors) {
        if f == 0.0 {
            zero.push((n, 0.0));
        } else {
            nonzero.push((n, f));
        }
    }
    nonzero.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    zero.sort_by_key(|e| e.0);
    nonzero.extend(zero);
    RankedAnchors {
        query: s.query,
        entries: nonzero,
    }
}

fn rms(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut ss, mut n) = (0.0, 0usize);
    for x in v {
        ss += x * x;
        n += 1;
    }
    ((ss / n as f64).sqrt(), n)
}

fn center(q: &[f64]) -> Vec<f64> {
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    q.iter().map(|v| v - mean).collect()
}

/// Result of the sparse regression, in the original feature scale.
struct Fit {
    factors: Vec<f64>,
    converged: bool,
}

/// Maximizes `mean_t ln p(q̃ₜ - s·x̃ₜ) - λ‖s‖₁` over `s`, with `q̃` and the
/// rows `x̃` of `xc` standardized to unit variance. Starts from the
/// least-squares solution; `λ = lambda_scale · max|s_ls|`. Factors are
/// mapped back to the original scales and pruned at `threshold`.
fn sparse_fit(
    xc: &DMatrix<f64>,
    q: &[f64],
    mode: DensityMode,
    threshold: f64,
    cfg: &InferConfig,
) -> Result<Fit> {
    let (n, d) = xc.shape();
    if q.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: q.len(),
        });
    }
    if let Some(v) = q.iter().find(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite query value {v}")));
    }
    let qc = center(q);
    let (sq, _) = rms(qc.iter().copied());
    if !(sq > 0.0) {
        return Err(Error::Degenerate("query has zero variance".into()));
    }
    let qs = DVector::from_iterator(d, qc.iter().map(|v| v / sq));
    let sd: Vec<f64> = xc.row_iter().map(|r| rms(r.iter().copied()).0).collect();
    if let Some(i) = sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Degenerate(format!("candidate row {i} has zero variance")));
    }
    let mut xs = xc.clone();
    for (mut row, s) in xs.row_iter_mut().zip(&sd) {
        row /= *s;
    }
    let df = d as f64;
    let gram = &xs * xs.transpose() / df;
    let b = &xs * &qs / df;

    let ls = match gram.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => {
            let ridge = 1e-10 * gram.trace().max(1.0) / n as f64;
            let g = &gram + DMatrix::identity(n, n) * ridge;
            g.cholesky()
                .ok_or_else(|| Error::Degenerate("candidate features are collinear".into()))?
                .solve(&b)
        }
    };
    let resid0 = &qs - xs.transpose() * &ls;
    let density = resolve_rows(&DMatrix::from_row_slice(1, d, resid0.as_slice()), mode)[0];
    let lambda = cfg.lambda_scale * ls.amax();

    let lipschitz = gram.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lipschitz;
    let grad = |s: &DVector<f64>| -> DVector<f64> {
        let r = &qs - xs.transpose() * s;
        let psi = r.map(|v| density.score(v));
        -(&xs * psi) / df
    };
    let shrink = |v: f64, t: f64| v.signum() * (v.abs() - t).max(0.0);

    // accelerated proximal ascent with momentum restart
    let mut s = ls.clone();
    let mut y = s.clone();
    let mut t = 1.0f64;
    let mut converged = n == 0;
    let mut used = 0;
    for it in 0..cfg.max_iters {
        let g = grad(&y);
        let next = (&y + g * step).map(|v| shrink(v, step * lambda));
        let moved = (&next - &s).amax();
        if (&y - &next).dot(&(&next - &s)) > 0.0 {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &s) * ((t - 1.0) / t_next);
        s = next;
        t = t_next;
        used = it + 1;
        if moved < cfg.tol {
            converged = true;
            break;
        }
    }
    log::debug!("query regression: {used} iterations");
    if !converged {
        log::warn!("query regression stopped after {} iterations", cfg.max_iters);
    }
    if density == RowDensity::PaperTanh {
        converged = false;
    }
    let factors = s
        .iter()
        .zip(&sd)
        .map(|(v, sj)| {
            let f = v * sq / sj;
            if f.abs() < threshold {
                0.0
            } else {
                f
            }
        })
        .collect();
    Ok(Fit { factors, converged })
}

/// Inheritance vector of `q` over the block's nodes.
pub fn infer_query(m: &ModelState, q: &QueryVector, cfg: &InferConfig) -> Result<InheritanceVector> {
    if q.feature.len() != m.d() {
        return Err(Error::DimensionMismatch {
            expected: m.d(),
            found: q.feature.len(),
        });
    }
    match cfg.mode {
        InferMode::Frozen => {
            let fit = sparse_fit(
                &m.centered(),
                &q.feature,
                m.config.density,
                m.config.prune_threshold,
                cfg,
            )?;
            let mut v = InheritanceVector::new(q.id, m.nodes.clone(), fit.factors);
            v.converged = fit.converged;
            Ok(v)
        }
        InferMode::Refit => refit_query(m, q, cfg),
    }
}

/// Appends `q` as variable `N`, refits the whitener, warm-starts from the
/// trained unmixing extended by `1/σ_q` on the new diagonal, and reads row
/// `N` of the extracted inheritance matrix.
fn refit_query(m: &ModelState, q: &QueryVector, cfg: &InferConfig) -> Result<InheritanceVector> {
    let n = m.n();
    let d = m.d();
    let mut x = DMatrix::zeros(n + 1, d);
    let base = m.centered();
    for i in 0..n {
        for t in 0..d {
            x[(i, t)] = base[(i, t)] + m.preprocess.means[i];
        }
    }
    for t in 0..d {
        x[(n, t)] = q.feature[t];
    }
    let (sq, _) = rms(center(&q.feature).into_iter());
    if !(sq > 0.0) {
        return Err(Error::Degenerate("query has zero variance".into()));
    }
    let mut nodes = m.nodes.clone();
    let query_node = NodeId(nodes.iter().map(|v| v.0 + 1).max().unwrap_or(0));
    nodes.push(query_node);
    let x = EmbeddingMatrix::new(x, nodes)?;

    let mut a0 = DMatrix::zeros(n + 1, n + 1);
    a0.view_mut((0, 0), (n, n)).copy_from(&m.unmixing());
    a0[(n, n)] = 1.0 / sq;
    let tcfg = TrainConfig {
        max_iters: cfg.refit_iters,
        edge_mask: None,
        max_block: m.config.max_block.max(n + 1),
        ..m.config.clone()
    };
    let refit = learner::train_from_unmixing(&x, &tcfg, &a0)?;
    let s = extract_from_unmixing(&refit.unmixing(), tcfg.prune_threshold, tcfg.enforce_acyclic)?;
    let factors: Vec<f64> = (0..n).map(|j| s.s[(n, j)]).collect();
    let mut v = InheritanceVector::new(q.id, m.nodes.clone(), factors);
    v.converged = refit.converged;
    Ok(v)
}

/// [`infer_query`] for many queries in parallel; results in input order.
pub fn infer_all(
    m: &ModelState,
    queries: &[QueryVector],
    cfg: &InferConfig,
) -> Vec<Result<InheritanceVector>> {
    queries.par_iter().map(|q| infer_query(m, q, cfg)).collect()
}

/// Original (uncentered) features of `nodes`, taken from whichever block
/// holds them.
fn gather_rows(blocks: &[ModelState], nodes: &[NodeId]) -> DMatrix<f64> {
    let mut source: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
    for (b, m) in blocks.iter().enumerate() {
        for (r, &v) in m.nodes.iter().enumerate() {
            source.entry(v).or_insert((b, r));
        }
    }
    let d = blocks[0].d();
    let centered: Vec<DMatrix<f64>> = blocks.iter().map(|m| m.centered()).collect();
    let mut x = DMatrix::zeros(nodes.len(), d);
    for (i, v) in nodes.iter().enumerate() {
        let (b, r) = source[v];
        let mean = blocks[b].preprocess.means[r];
        for t in 0..d {
            x[(i, t)] = centered[b][(r, t)] + mean;
        }
    }
    let means = preprocess::row_means(&x);
    for (mut row, mu) in x.row_iter_mut().zip(means.iter()) {
        row.add_scalar_mut(-mu);
    }
    x
}

fn best_factor(v: &InheritanceVector) -> f64 {
    v.factors.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Candidate recombination across blocks trained on `subs`.
///
/// Round 0 scores the query within every block. Each further round merges
/// the `fan_in` groups with the highest best factor and refits on their
/// union. A node's final factor is the one from the latest fit that
/// contained it; round-0 fits are applied in ascending order of best factor.
pub fn recombine(
    blocks: &[ModelState],
    q: &QueryVector,
    subs: &[SubTaxonomy],
    cfg: &InferConfig,
) -> Result<RankedAnchors> {
    if blocks.is_empty() || subs.is_empty() {
        return Err(Error::Empty("sub-taxonomy list".into()));
    }
    if blocks.len() != subs.len() {
        return Err(Error::Config(format!(
            "{} blocks for {} sub-taxonomies",
            blocks.len(),
            subs.len()
        )));
    }
    if blocks.len() == 1 {
        return Ok(rank_anchors(&infer_query(&blocks[0], q, cfg)?));
    }
    let first: Vec<InheritanceVector> = blocks
        .iter()
        .map(|m| infer_query(m, q, cfg))
        .collect::<Result<_>>()?;

    struct Group {
        nodes: Vec<NodeId>,
        best: f64,
        order: usize,
    }
    let mut groups: Vec<Group> = first
        .iter()
        .enumerate()
        .map(|(i, v)| Group {
            nodes: v.nodes.clone(),
            best: best_factor(v),
            order: i,
        })
        .collect();

    let mut history: Vec<&InheritanceVector> = first.iter().collect();
    history.sort_by(|a, b| best_factor(a).total_cmp(&best_factor(b)));
    let mut merged_fits: Vec<InheritanceVector> = Vec::new();

    let m0 = &blocks[0].config;
    let mut next_order = groups.len();
    for _ in 0..cfg.rounds {
        if groups.len() < 2 {
            break;
        }
        groups.sort_by(|a, b| b.best.total_cmp(&a.best).then(a.order.cmp(&b.order)));
        let take = cfg.fan_in.max(2).min(groups.len());
        let merged: BTreeSet<NodeId> = groups
            .drain(..take)
            .flat_map(|g| g.nodes.into_iter())
            .collect();
        let nodes: Vec<NodeId> = merged.into_iter().collect();
        let xc = gather_rows(blocks, &nodes);
        let fit = sparse_fit(&xc, &q.feature, m0.density, m0.prune_threshold, cfg)?;
        let mut v = InheritanceVector::new(q.id, nodes.clone(), fit.factors);
        v.converged = fit.converged;
        groups.push(Group {
            nodes,
            best: best_factor(&v),
            order: next_order,
        });
        next_order += 1;
        merged_fits.push(v);
    }

    let mut factor: BTreeMap<NodeId, f64> = BTreeMap::new();
    for v in history.into_iter().chain(merged_fits.iter()) {
        for (&n, &f) in v.nodes.iter().zip(&v.factors) {
            factor.insert(n, f);
        }
    }
    let (nodes, factors): (Vec<NodeId>, Vec<f64>) = factor.into_iter().unzip();
    Ok(rank_anchors(&InheritanceVector::new(q.id, nodes, factors)))
}

/// Adds the query under its `top_m` best nonzero anchors; existing nodes
/// and edges are left untouched.
pub fn attach(t: &Taxonomy, q: u64, anchors: &RankedAnchors, top_m: usize) -> Result<Taxonomy> {
    let parents: Vec<NodeId> = anchors
        .entries
        .iter()
        .filter(|(_, f)| *f != 0.0)
        .take(top_m)
        .map(|(n, _)| *n)
        .collect();
    if parents.is_empty() {
        return Err(Error::NoAnchor(q));
    }
    t.add_leaf(q, &format!("query_{q}"), &parents)
}
