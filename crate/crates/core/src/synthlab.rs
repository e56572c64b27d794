//! Synthetic structural-equation data and the validation experiments built
//! on it: structure recovery, forward/backward deviation, and entropy-based
//! measures of non-Gaussianity and dependence.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{self, extract_inheritance, InheritanceMatrix, TrainConfig, EPS_DET};
use crate::preprocess::{self, EmbeddingMatrix};
use crate::rng;
use crate::taxonomy::{validate_dag, NodeId, Taxonomy};

/// Supplementary-feature distribution, always zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// Uniform on `[-√3, √3]`.
    Uniform,
    Gaussian,
}

impl Distribution {
    pub fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Distribution::Uniform => {
                let h = 3f64.sqrt();
                rng.random_range(-h..h)
            }
            Distribution::Gaussian => rng.sample(StandardNormal),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "gaussian" => Ok(Distribution::Gaussian),
            other => Err(Error::Config(format!("unknown distribution {other:?}"))),
        }
    }
}

/// Ground-truth linear structural equation system over `n` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemSpec {
    pub n: usize,
    /// `(parent, child, factor)` in dense indices.
    pub edges: Vec<(usize, usize, f64)>,
    pub dist: Distribution,
    pub d: usize,
    pub seed: u64,
}

impl SemSpec {
    /// Four nodes v1..v4 (indices 0..3) with edges v1→v2 (1.5), v2→v4 (0.5)
    /// and v4→v3 (1.0).
    pub fn four_node(dist: Distribution, d: usize, seed: u64) -> Self {
        SemSpec {
            n: 4,
            edges: vec![(0, 1, 1.5), (1, 3, 0.5), (3, 2, 1.0)],
            dist,
            d,
            seed,
        }
    }

    pub fn s_true(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        for &(p, c, f) in &self.edges {
            s[(c, p)] = f;
        }
        s
    }

    /// The structure as a taxonomy with external ids `1..=n` and names `v1..`.
    pub fn taxonomy(&self) -> Result<Taxonomy> {
        let nodes = (0..self.n).map(|i| (i as u64 + 1, format!("v{}", i + 1))).collect();
        let edges: Vec<(u64, u64)> = self
            .edges
            .iter()
            .map(|&(p, c, _)| (p as u64 + 1, c as u64 + 1))
            .collect();
        for &(p, c, _) in &self.edges {
            if p >= self.n || c >= self.n {
                return Err(Error::Config(format!("edge ({p}, {c}) outside {} nodes", self.n)));
            }
        }
        Taxonomy::new(nodes, &edges)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemData {
    pub taxonomy: Taxonomy,
    pub s_true: InheritanceMatrix,
    pub u: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl SemData {
    pub fn embeddings(&self) -> EmbeddingMatrix {
        EmbeddingMatrix::new(self.x.clone(), (0..self.x.nrows()).map(NodeId).collect())
            .expect("generated data is finite")
    }
}

/// Draws `U` row by row from the `sem` stream and solves `X = S X + U` in
/// topological order.
pub fn gen_sem(spec: &SemSpec) -> Result<SemData> {
    let taxonomy = spec.taxonomy()?;
    let order = validate_dag(&taxonomy)?;
    let mut rng = rng::substream(spec.seed, rng::SEM);
    let mut u = DMatrix::zeros(spec.n, spec.d);
    for i in 0..spec.n {
        for t in 0..spec.d {
            u[(i, t)] = spec.dist.sample(&mut rng);
        }
    }
    let mut x = u.clone();
    for v in order {
        let i = v.0;
        for &(p, c, f) in &spec.edges {
            if c == i {
                for t in 0..spec.d {
                    x[(i, t)] += f * x[(p, t)];
                }
            }
        }
    }
    Ok(SemData {
        taxonomy,
        s_true: InheritanceMatrix {
            s: spec.s_true(),
            threshold: 0.0,
        },
        u,
        x,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeError {
    pub parent: usize,
    pub child: usize,
    pub truth: f64,
    pub estimate: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub s_hat: InheritanceMatrix,
    pub edge_errors: Vec<EdgeError>,
    /// Largest `|s|` outside the true edge set.
    pub nonedge_max: f64,
}

impl RecoveryResult {
    pub fn mean_edge_error(&self) -> f64 {
        if self.edge_errors.is_empty() {
            return 0.0;
        }
        self.edge_errors.iter().map(|e| e.error).sum::<f64>() / self.edge_errors.len() as f64
    }

    pub fn max_edge_error(&self) -> f64 {
        self.edge_errors.iter().fold(0.0, |m, e| m.max(e.error))
    }

    /// Every edge within `tol` and every non-edge pruned.
    pub fn recovered(&self, tol: f64) -> bool {
        self.max_edge_error() <= tol && self.nonedge_max == 0.0
    }
}

pub fn recovery_experiment(spec: &SemSpec, cfg: &TrainConfig) -> Result<RecoveryResult> {
    let data = gen_sem(spec)?;
    let model = learner::train(&data.embeddings(), cfg)?;
    let s_hat = extract_inheritance(&model)?;
    Ok(score_recovery(spec, s_hat))
}

fn score_recovery(spec: &SemSpec, s_hat: InheritanceMatrix) -> RecoveryResult {
    let truth = spec.s_true();
    let edge_errors = spec
        .edges
        .iter()
        .map(|&(p, c, f)| EdgeError {
            parent: p,
            child: c,
            truth: f,
            estimate: s_hat.s[(c, p)],
            error: (s_hat.s[(c, p)] - f).abs(),
        })
        .collect();
    let mut nonedge_max: f64 = 0.0;
    for i in 0..spec.n {
        for j in 0..spec.n {
            if i != j && truth[(i, j)] == 0.0 {
                nonedge_max = nonedge_max.max(s_hat.s[(i, j)].abs());
            }
        }
    }
    RecoveryResult {
        s_hat,
        edge_errors,
        nonedge_max,
    }
}

/// How the structural parts in the deviation experiment are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DeviationFit {
    /// One unconstrained fit. The forward model reads its factors off the
    /// true edge positions, the backward model off the reversed positions.
    #[default]
    Free,
    /// Two fits constrained to the true and to the reversed edge mask.
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    /// `(backward - forward) / forward` per node.
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
}

pub fn deviation_experiment(spec: &SemSpec, cfg: &TrainConfig) -> Result<DeviationResult> {
    deviation_experiment_with(spec, cfg, DeviationFit::Free)
}

/// Per-node RMS residual `‖xᵢ - ŝᵢ X‖ / √d` of a forward model (true edge
/// directions) and a backward model (every edge reversed).
pub fn deviation_experiment_with(
    spec: &SemSpec,
    cfg: &TrainConfig,
    fit: DeviationFit,
) -> Result<DeviationResult> {
    let data = gen_sem(spec)?;
    let x = data.embeddings();
    let forward_mask: Vec<(usize, usize)> = spec.edges.iter().map(|&(p, c, _)| (c, p)).collect();
    let backward_mask: Vec<(usize, usize)> = spec.edges.iter().map(|&(p, c, _)| (p, c)).collect();

    let (s_fwd, s_bwd) = match fit {
        DeviationFit::Free => {
            let s = extract_inheritance(&learner::train(&x, cfg)?)?.s;
            (s.clone(), s)
        }
        DeviationFit::Masked => {
            let masked = |mask: &[(usize, usize)]| -> Result<DMatrix<f64>> {
                let cfg = TrainConfig {
                    edge_mask: Some(mask.to_vec()),
                    ..cfg.clone()
                };
                Ok(extract_inheritance(&learner::train(&x, &cfg)?)?.s)
            };
            (masked(&forward_mask)?, masked(&backward_mask)?)
        }
    };
    let xc = centered(&data.x);
    let forward = residual_rms(&xc, &restrict(&s_fwd, &forward_mask));
    let backward = residual_rms(&xc, &restrict(&s_bwd, &backward_mask));
    let mut ratios = Vec::with_capacity(spec.n);
    for (i, (&f, &b)) in forward.iter().zip(&backward).enumerate() {
        if !(f > 0.0) {
            return Err(Error::Degenerate(format!("zero forward distance at node {i}")));
        }
        ratios.push((b - f) / f);
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(DeviationResult {
        forward,
        backward,
        ratios,
        mean_ratio,
    })
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = preprocess::row_means(x);
    let mut xc = x.clone();
    for (mut row, m) in xc.row_iter_mut().zip(means.iter()) {
        row.add_scalar_mut(-m);
    }
    xc
}

fn restrict(s: &DMatrix<f64>, mask: &[(usize, usize)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for &(i, j) in mask {
        out[(i, j)] = s[(i, j)];
    }
    out
}

fn residual_rms(xc: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    let r = xc - s * xc;
    let d = xc.ncols() as f64;
    r.row_iter().map(|row| (row.norm_squared() / d).sqrt()).collect()
}

/// `-Σ p ln p` in nats.
pub fn shannon_entropy_discrete(pmf: &[f64]) -> Result<f64> {
    if pmf.is_empty() {
        return Err(Error::InvalidPmf("empty".into()));
    }
    if let Some(p) = pmf.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidPmf(format!("entry {p} is not a probability")));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidPmf(format!("entries sum to {total}")));
    }
    Ok(-pmf.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

/// `E[ln cosh ν]` for standard normal `ν`.
pub fn gaussian_log_cosh_mean() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        // composite Simpson on [-12, 12]; the tails beyond are below 1e-30
        let (a, b, m) = (-12.0f64, 12.0f64, 200_000usize);
        let h = (b - a) / m as f64;
        let f = |x: f64| learner::density::ln_cosh(x) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let mut acc = f(a) + f(b);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + k as f64 * h);
        }
        acc * h / 3.0
    })
}

const MIN_SAMPLES: usize = 100;

fn standardize(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Degenerate(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(samples.iter().map(|v| (v - mean) / sd).collect())
}

/// Log-cosh negentropy approximation `(E[ln cosh s̃] - E[ln cosh ν])²` on
/// standardized samples.
pub fn negentropy_proxy(samples: &[f64]) -> Result<f64> {
    let s = standardize(samples)?;
    let m = s.iter().map(|&v| learner::density::ln_cosh(v)).sum::<f64>() / s.len() as f64;
    Ok((m - gaussian_log_cosh_mean()).powi(2))
}

/// Equal-width bin index of every value over `[min, max]`.
fn bin_indices(row: &[f64], bins: usize) -> (Vec<usize>, f64) {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let idx = row
        .iter()
        .map(|&v| (((v - lo) / width) as usize).min(bins - 1))
        .collect();
    (idx, width)
}

/// Plug-in entropy of bin counts with the Miller–Madow correction.
fn counts_entropy(counts: impl Iterator<Item = usize>, total: usize) -> f64 {
    let n = total as f64;
    let mut h = 0.0;
    let mut occupied = 0usize;
    for c in counts.filter(|&c| c > 0) {
        let p = c as f64 / n;
        h -= p * p.ln();
        occupied += 1;
    }
    h + (occupied as f64 - 1.0) / (2.0 * n)
}

const MARGINAL_BINS: usize = 64;
const PAIR_BINS: usize = 16;

/// Histogram estimate of the differential entropy of one standardized row.
fn differential_entropy(row: &[f64]) -> Result<f64> {
    let s = standardize(row)?;
    let (idx, width) = bin_indices(&s, MARGINAL_BINS);
    let mut counts = vec![0usize; MARGINAL_BINS];
    for i in idx {
        counts[i] += 1;
    }
    Ok(counts_entropy(counts.into_iter(), s.len()) + width.ln())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Sum of pairwise mutual informations between the rows, each estimated on
/// a 16x16 equal-width grid. A relative dependence score, not an absolute
/// mutual information.
pub fn mutual_info_proxy(rows: &DMatrix<f64>) -> Result<f64> {
    let rs = rows_of(rows);
    let mut binned = Vec::with_capacity(rs.len());
    for r in &rs {
        binned.push(bin_indices(&standardize(r)?, PAIR_BINS).0);
    }
    let d = rows.ncols();
    let marginal: Vec<f64> = binned
        .iter()
        .map(|b| {
            let mut c = vec![0usize; PAIR_BINS];
            b.iter().for_each(|&i| c[i] += 1);
            counts_entropy(c.into_iter(), d)
        })
        .collect();
    let mut total = 0.0;
    for i in 0..binned.len() {
        for j in i + 1..binned.len() {
            let mut c = vec![0usize; PAIR_BINS * PAIR_BINS];
            for (a, b) in binned[i].iter().zip(&binned[j]) {
                c[a * PAIR_BINS + b] += 1;
            }
            total += marginal[i] + marginal[j] - counts_entropy(c.into_iter(), d);
        }
    }
    Ok(total)
}

/// Mutual information among the rows of `w · base` up to the joint entropy
/// of `base`, which is shared by every `w`:
/// `Σᵢ Ĥ((w·base)ᵢ) - ln|det w|`, with 64-bin marginal estimates.
/// Differences between two `w` on the same `base` estimate differences in
/// mutual information.
pub fn mutual_info_linear(base: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    if !w.is_square() || w.ncols() != base.nrows() {
        return Err(Error::Shape(format!(
            "transform {:?} for {} rows",
            w.shape(),
            base.nrows()
        )));
    }
    let det = w.clone().lu().determinant();
    if !(det.abs() > EPS_DET) {
        return Err(Error::Singular(det.abs()));
    }
    let y = w * base;
    let mut h = 0.0;
    for r in rows_of(&y) {
        h += differential_entropy(&r)?;
    }
    Ok(h - det.abs().ln())
}

fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    let n = cov.nrows() as f64;
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * (n * (2.0 * PI * E).ln() + log_det))
}

/// `(H(b x) - H(x), ln|det b|)` for a Gaussian source `x` whose covariance
/// is the sample covariance of `d` seeded standard-normal draws. Both
/// entropies are closed-form in the exact covariances.
pub fn entropy_transform_check(b: &DMatrix<f64>, d: usize, seed: u64) -> Result<(f64, f64)> {
    if !b.is_square() {
        return Err(Error::Shape(format!("b is {:?}", b.shape())));
    }
    let n = b.nrows();
    if d < n {
        return Err(Error::TooFewSamples {
            samples: d,
            variables: n,
        });
    }
    let det = b.clone().lu().determinant();
    if !(det.abs() > EPS_DET) {
        return Err(Error::Singular(det.abs()));
    }
    let mut rng = rng::substream(seed, rng::SEM);
    let samples = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cov = preprocess::sample_covariance(&centered(&samples));
    let transformed = b * &cov * b.transpose();
    let transformed = (&transformed + transformed.transpose()) * 0.5;
    let lhs = gaussian_entropy(&transformed)? - gaussian_entropy(&cov)?;
    Ok((lhs, det.abs().ln()))
}

/// What a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Recovery,
    Deviation,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recovery" => Ok(Experiment::Recovery),
            "deviation" => Ok(Experiment::Deviation),
            other => Err(Error::Config(format!("unknown experiment {other:?}"))),
        }
    }
}

/// One seeded run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Recovery(RecoveryResult),
    Deviation(DeviationResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub experiment: Experiment,
    pub distribution: Distribution,
    pub seeds: usize,
    pub samples: usize,
    /// Deviation: mean over seeds of the per-run mean ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ratio: Option<f64>,
    /// Recovery: mean absolute edge error over every edge of every run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_edge_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_edge_error: Option<f64>,
    /// Recovery: runs with every edge within 0.15 and all non-edges pruned.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_runs: Option<usize>,
    /// Per-node means over seeds (deviation only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backward: Option<Vec<f64>>,
}

pub const RECOVERY_TOL: f64 = 0.15;

/// Runs `experiment` on the four-node system for seeds `0..seeds`, in
/// parallel; results come back in seed order.
pub fn sweep(
    experiment: Experiment,
    dist: Distribution,
    seeds: u64,
    samples: usize,
    cfg: &TrainConfig,
    fit: DeviationFit,
) -> Result<Vec<(u64, RunOutcome)>> {
    use rayon::prelude::*;
    (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let spec = SemSpec::four_node(dist, samples, seed);
            let cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let out = match experiment {
                Experiment::Recovery => RunOutcome::Recovery(recovery_experiment(&spec, &cfg)?),
                Experiment::Deviation => {
                    RunOutcome::Deviation(deviation_experiment_with(&spec, &cfg, fit)?)
                }
            };
            Ok((seed, out))
        })
        .collect()
}

pub fn summarize(
    experiment: Experiment,
    dist: Distribution,
    samples: usize,
    runs: &[(u64, RunOutcome)],
) -> SweepSummary {
    let mut summary = SweepSummary {
        experiment,
        distribution: dist,
        seeds: runs.len(),
        samples,
        mean_ratio: None,
        mean_edge_error: None,
        max_edge_error: None,
        recovered_runs: None,
        forward: None,
        backward: None,
    };
    let k = runs.len().max(1) as f64;
    match experiment {
        Experiment::Recovery => {
            let recs: Vec<&RecoveryResult> = runs
                .iter()
                .filter_map(|(_, r)| match r {
                    RunOutcome::Recovery(r) => Some(r),
                    _ => None,
                })
                .collect();
            summary.mean_edge_error = Some(recs.iter().map(|r| r.mean_edge_error()).sum::<f64>() / k);
            summary.max_edge_error = Some(recs.iter().fold(0.0, |m, r| m.max(r.max_edge_error())));
            summary.recovered_runs = Some(recs.iter().filter(|r| r.recovered(RECOVERY_TOL)).count());
        }
        Experiment::Deviation => {
            let devs: Vec<&DeviationResult> = runs
                .iter()
                .filter_map(|(_, r)| match r {
                    RunOutcome::Deviation(r) => Some(r),
                    _ => None,
                })
                .collect();
            summary.mean_ratio = Some(devs.iter().map(|r| r.mean_ratio).sum::<f64>() / k);
            let n = devs.first().map_or(0, |r| r.forward.len());
            let avg = |f: &dyn Fn(&DeviationResult) -> &Vec<f64>| {
                (0..n)
                    .map(|i| devs.iter().map(|r| f(r)[i]).sum::<f64>() / k)
                    .collect::<Vec<f64>>()
            };
            summary.forward = Some(avg(&|r| &r.forward));
            summary.backward = Some(avg(&|r| &r.backward));
        }
    }
    summary
}

/// Per-seed CSV. Deviation rows are per node; recovery rows are per edge,
/// with `node` naming the child and `forward`/`backward` holding the true
/// and estimated factor and `ratio` the absolute error.
pub fn write_sweep_csv(path: &Path, dist: Distribution, runs: &[(u64, RunOutcome)]) -> Result<()> {
    let mut out = String::from("seed,distribution,node,forward,backward,ratio\n");
    for (seed, run) in runs {
        match run {
            RunOutcome::Deviation(r) => {
                for i in 0..r.forward.len() {
                    out.push_str(&format!(
                        "{seed},{},v{},{},{},{}\n",
                        dist.name(),
                        i + 1,
                        r.forward[i],
                        r.backward[i],
                        r.ratios[i]
                    ));
                }
            }
            RunOutcome::Recovery(r) => {
                for e in &r.edge_errors {
                    out.push_str(&format!(
                        "{seed},{},v{},{},{},{}\n",
                        dist.name(),
                        e.child + 1,
                        e.truth,
                        e.estimate,
                        e.error
                    ));
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_summary_json(path: &Path, summary: &SweepSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Files of a generated seed-taxonomy plus held-out queries.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineFixture {
    pub taxonomy: Taxonomy,
    /// Seed-node vectors in external-id order.
    pub vectors: Vec<(u64, Vec<f64>)>,
    pub queries: Vec<(u64, Vec<f64>)>,
    /// Query id to parent ids.
    pub anchors: BTreeMap<u64, Vec<u64>>,
}

/// A random recursive tree of `nodes` nodes (single root), with positive
/// inheritance factors in `[0.5, 1.0]` and uniform supplementary features,
/// plus `queries` extra nodes that each inherit from one seed node.
pub fn pipeline_fixture(nodes: usize, queries: usize, d: usize, seed: u64) -> Result<PipelineFixture> {
    if nodes < 2 {
        return Err(Error::Config("fixture needs at least two nodes".into()));
    }
    let mut rng = rng::substream(seed, rng::SEM);
    let mut parent = vec![0usize; nodes];
    let mut factor = vec![0.0; nodes];
    for i in 1..nodes {
        parent[i] = rng.random_range(0..i);
        factor[i] = rng.random_range(0.5..1.0);
    }
    let mut x = DMatrix::zeros(nodes, d);
    for i in 0..nodes {
        for t in 0..d {
            let inherited = if i == 0 { 0.0 } else { factor[i] * x[(parent[i], t)] };
            x[(i, t)] = inherited + Distribution::Uniform.sample(&mut rng);
        }
    }
    let ext = |i: usize| i as u64 + 1;
    let names = (0..nodes).map(|i| (ext(i), format!("node{}", i + 1))).collect();
    let edges: Vec<(u64, u64)> = (1..nodes).map(|i| (ext(parent[i]), ext(i))).collect();
    let taxonomy = Taxonomy::new(names, &edges)?;
    let vectors = (0..nodes)
        .map(|i| (ext(i), x.row(i).iter().copied().collect()))
        .collect();

    let mut qrng = rng::substream(seed, rng::QUERY);
    let mut qs = Vec::with_capacity(queries);
    let mut anchors = BTreeMap::new();
    for k in 0..queries {
        let p = qrng.random_range(0..nodes);
        let f = qrng.random_range(0.5..1.0);
        let v: Vec<f64> = (0..d)
            .map(|t| f * x[(p, t)] + Distribution::Uniform.sample(&mut qrng))
            .collect();
        let id = (nodes + 1 + k) as u64;
        qs.push((id, v));
        anchors.insert(id, vec![ext(p)]);
    }
    Ok(PipelineFixture {
        taxonomy,
        vectors,
        queries: qs,
        anchors,
    })
}

impl PipelineFixture {
    /// Writes `nodes.tsv`, `edges.tsv`, `vectors.txt`, `queries.txt` and
    /// `judgments.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.taxonomy.save(&dir.join("nodes.tsv"), &dir.join("edges.tsv"))?;
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        preprocess::write_vectors(
            &dir.join("vectors.txt"),
            dim,
            self.vectors.iter().map(|(i, v)| (*i, v.as_slice())),
        )?;
        preprocess::write_vectors(
            &dir.join("queries.txt"),
            dim,
            self.queries.iter().map(|(i, v)| (*i, v.as_slice())),
        )?;
        let mut j = String::new();
        for (q, a) in &self.anchors {
            j.push_str(&serde_json::to_string(&crate::evalmetrics::JudgmentLine {
                query: *q,
                anchors: a.clone(),
            })?);
            j.push('\n');
        }
        let path = dir.join("judgments.jsonl");
        fs::write(&path, j).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_structure_gives_x_equal_u() {
        let spec = SemSpec {
            n: 3,
            edges: vec![],
            dist: Distribution::Uniform,
            d: 200,
            seed: 1,
        };
        let data = gen_sem(&spec).unwrap();
        assert_eq!(data.x, data.u);
    }

    #[test]
    fn structural_equations_hold_exactly() {
        let data = gen_sem(&SemSpec::four_node(Distribution::Uniform, 1000, 7)).unwrap();
        let resid = &data.x - &data.s_true.s * &data.x - &data.u;
        assert!(resid.abs().max() <= 1e-12);
        for t in 0..1000 {
            assert_eq!(data.x[(1, t)], 1.5 * data.x[(0, t)] + data.u[(1, t)]);
        }
        assert_eq!(data.taxonomy.depth(), 4);
    }

    #[test]
    fn generated_u_is_standardized() {
        for dist in [Distribution::Uniform, Distribution::Gaussian] {
            let d = 20_000;
            let data = gen_sem(&SemSpec::four_node(dist, d, 3)).unwrap();
            let cov = &data.u * data.u.transpose() / d as f64;
            let dev = (cov - DMatrix::<f64>::identity(4, 4)).abs().max();
            assert!(dev < 3.0 / (d as f64).sqrt(), "{dist:?}: {dev}");
        }
    }

    #[test]
    fn cyclic_spec_rejected() {
        let spec = SemSpec {
            n: 2,
            edges: vec![(0, 1, 0.5), (1, 0, 0.5)],
            dist: Distribution::Uniform,
            d: 10,
            seed: 0,
        };
        assert!(matches!(gen_sem(&spec), Err(Error::Cycle(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SemSpec::four_node(Distribution::Gaussian, 100, 4);
        assert_eq!(gen_sem(&spec).unwrap(), gen_sem(&spec).unwrap());
    }

    #[test]
    fn entropy_examples() {
        assert!((shannon_entropy_discrete(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_entropy_discrete(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let h = shannon_entropy_discrete(&[0.25, 0.75]).unwrap();
        assert!((h - 0.5623).abs() < 1e-4);
        assert!((h - (-(0.25f64 * 0.25f64.ln()) - 0.75 * 0.75f64.ln())).abs() < 1e-15);
        assert!(shannon_entropy_discrete(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy_discrete(&[-0.5, 1.5]).is_err());
    }

    #[test]
    fn gaussian_reference_constant() {
        // independent Monte Carlo estimate
        let mut rng = rng::substream(11, "mc");
        let n = 400_000;
        let mc = (0..n)
            .map(|_| learner::density::ln_cosh(rng.sample::<f64, _>(StandardNormal)))
            .sum::<f64>()
            / n as f64;
        assert!((gaussian_log_cosh_mean() - mc).abs() < 3e-3);
        assert!((gaussian_log_cosh_mean() - 0.374567207491438).abs() < 1e-12);
    }

    fn draws(dist: Distribution, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::substream(seed, "draws");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    #[test]
    fn negentropy_separates_uniform_from_gaussian() {
        let g = negentropy_proxy(&draws(Distribution::Gaussian, 10_000, 1)).unwrap();
        let u = negentropy_proxy(&draws(Distribution::Uniform, 10_000, 1)).unwrap();
        assert!(g <= 0.01);
        // closed form for unit-variance uniform: E ln cosh = 0.40134...
        assert!(u > 5e-4 && u > g, "uniform {u}, gaussian {g}");
        assert!(negentropy_proxy(&[1.0; 200]).is_err());
        assert!(negentropy_proxy(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn mutual_info_examples() {
        let a = draws(Distribution::Uniform, 10_000, 2);
        let b = draws(Distribution::Uniform, 10_000, 3);
        let indep = DMatrix::from_fn(2, 10_000, |i, t| if i == 0 { a[t] } else { b[t] });
        let mi = mutual_info_proxy(&indep).unwrap();
        assert!(mi.abs() <= 0.05, "{mi}");
        let dup = DMatrix::from_fn(2, 10_000, |_, t| a[t]);
        assert!(mutual_info_proxy(&dup).unwrap() > 1.0);
    }

    #[test]
    fn linear_mutual_info_prefers_unmixed_rows() {
        let a = draws(Distribution::Uniform, 10_000, 4);
        let b = draws(Distribution::Uniform, 10_000, 5);
        let s = DMatrix::from_fn(2, 10_000, |i, t| if i == 0 { a[t] } else { b[t] });
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let rot = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let mixed = &rot * &s;
        let unmix = rot.transpose();
        let at_mixed = mutual_info_linear(&mixed, &DMatrix::identity(2, 2)).unwrap();
        let at_unmixed = mutual_info_linear(&mixed, &unmix).unwrap();
        assert!(at_unmixed < at_mixed);
    }

    #[test]
    fn entropy_transform_examples() {
        let (l, r) = entropy_transform_check(&DMatrix::identity(3, 3), 100, 1).unwrap();
        assert!(l.abs() < 1e-12 && r == 0.0);
        let (l, r) = entropy_transform_check(&(DMatrix::identity(2, 2) * 2.0), 100, 1).unwrap();
        assert!((r - 4f64.ln()).abs() < 1e-15);
        assert!((l - r).abs() < 1e-12);
        assert!(entropy_transform_check(&DMatrix::zeros(2, 2), 100, 1).is_err());
    }

    #[test]
    fn deviation_and_recovery_small_run() {
        let spec = SemSpec::four_node(Distribution::Uniform, 5000, 0);
        let cfg = TrainConfig::default();
        let rec = recovery_experiment(&spec, &cfg).unwrap();
        assert!(rec.recovered(RECOVERY_TOL), "{:?}", rec.edge_errors);
        let dev = deviation_experiment(&spec, &cfg).unwrap();
        assert!(dev.forward.iter().chain(&dev.backward).all(|v| *v >= 0.0));
        assert!(dev.mean_ratio > 0.0);
    }

    #[test]
    fn fixture_is_consistent() {
        let f = pipeline_fixture(30, 5, 200, 9).unwrap();
        assert_eq!(f.taxonomy.len(), 30);
        assert_eq!(f.taxonomy.roots().len(), 1);
        assert_eq!(f.queries.len(), 5);
        for (q, a) in &f.anchors {
            assert!(*q > 30);
            assert!(f.taxonomy.lookup(a[0]).is_some());
        }
    }
}
