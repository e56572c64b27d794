//! Rank-based evaluation of anchor predictions: Precision@k, Recall@k,
//! mean rank and (scaled) mean reciprocal rank.
//!
//! Queries with several ground-truth anchors are scored per anchor first
//! and then averaged per query.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
pub const DEFAULT_MRR_SCALE: f64 = 10.0;

/// One query's ground truth and predicted ranking, by external node id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryJudgment {
    pub query: u64,
    pub truth: BTreeSet<u64>,
    /// Best first; every candidate exactly once.
    pub ranking: Vec<u64>,
}

impl QueryJudgment {
    pub fn new(query: u64, truth: impl IntoIterator<Item = u64>, ranking: Vec<u64>) -> Result<Self> {
        let truth: BTreeSet<u64> = truth.into_iter().collect();
        if truth.is_empty() {
            return Err(Error::Empty(format!("ground truth of query {query}")));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = ranking.iter().find(|&&n| !seen.insert(n)) {
            return Err(Error::Config(format!("node {dup} ranked twice for query {query}")));
        }
        Ok(QueryJudgment {
            query,
            truth,
            ranking,
        })
    }

    fn hits(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.ranking.len() {
            return Err(Error::KTooLarge {
                k,
                len: self.ranking.len(),
            });
        }
        Ok(self.ranking[..k].iter().filter(|n| self.truth.contains(n)).count())
    }

    /// 1-based ranks of every ground-truth anchor.
    fn truth_ranks(&self) -> Result<Vec<usize>> {
        let pos: HashMap<u64, usize> = self
            .ranking
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, i + 1))
            .collect();
        self.truth
            .iter()
            .map(|t| {
                pos.get(t).copied().ok_or(Error::AnchorNotRanked {
                    query: self.query,
                    node: *t,
                })
            })
            .collect()
    }
}

pub fn precision_at_k(j: &QueryJudgment, k: usize) -> Result<f64> {
    Ok(j.hits(k)? as f64 / k as f64)
}

pub fn recall_at_k(j: &QueryJudgment, k: usize) -> Result<f64> {
    Ok(j.hits(k)? as f64 / j.truth.len() as f64)
}

fn per_query_mean<F>(js: &[QueryJudgment], f: F) -> Result<f64>
where
    F: Fn(usize) -> f64,
{
    if js.is_empty() {
        return Err(Error::Empty("judgment list".into()));
    }
    let mut total = 0.0;
    for j in js {
        let ranks = j.truth_ranks()?;
        total += ranks.iter().map(|&r| f(r)).sum::<f64>() / ranks.len() as f64;
    }
    Ok(total / js.len() as f64)
}

pub fn mean_rank(js: &[QueryJudgment]) -> Result<f64> {
    per_query_mean(js, |r| r as f64)
}

/// Returns `(mrr, scale · mrr)`.
pub fn mrr(js: &[QueryJudgment], scale: f64) -> Result<(f64, f64)> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("MRR scale must be > 0, got {scale}")));
    }
    let m = per_query_mean(js, |r| 1.0 / r as f64)?;
    Ok((m, scale * m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub mean_rank: f64,
    pub mrr: f64,
    pub scaled_mrr: f64,
    pub scale: f64,
    pub queries: usize,
}

/// Aggregates every metric. A `k` beyond a query's ranking length is an
/// error, as for the single-query functions.
pub fn report(js: &[QueryJudgment], ks: &[usize], scale: f64) -> Result<MetricReport> {
    if js.is_empty() {
        return Err(Error::Empty("judgment list".into()));
    }
    let n = js.len() as f64;
    let mut precision = Vec::with_capacity(ks.len());
    let mut recall = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut p = 0.0;
        let mut r = 0.0;
        for j in js {
            p += precision_at_k(j, k)?;
            r += recall_at_k(j, k)?;
        }
        precision.push(p / n);
        recall.push(r / n);
    }
    let (m, scaled) = mrr(js, scale)?;
    Ok(MetricReport {
        ks: ks.to_vec(),
        precision,
        recall,
        mean_rank: mean_rank(js)?,
        mrr: m,
        scaled_mrr: scaled,
        scale,
        queries: js.len(),
    })
}

impl MetricReport {
    /// `(metric, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (k, p) in self.ks.iter().zip(&self.precision) {
            out.push((format!("precision@{k}"), *p));
        }
        for (k, r) in self.ks.iter().zip(&self.recall) {
            out.push((format!("recall@{k}"), *r));
        }
        out.push(("mean_rank".into(), self.mean_rank));
        out.push(("mrr".into(), self.mrr));
        out.push(("scaled_mrr".into(), self.scaled_mrr));
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut body = String::from("metric,value\n");
        for (name, v) in self.rows() {
            body.push_str(&format!("{name},{v}\n"));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub query: u64,
    pub ranking: Vec<(u64, f64)>,
}

/// Line of a judgments file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentLine {
    pub query: u64,
    pub anchors: Vec<u64>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>> {
    read_jsonl(path)
}

pub fn read_judgments(path: &Path) -> Result<Vec<JudgmentLine>> {
    read_jsonl(path)
}

/// Pairs judgments with predictions by query id, sorted by query id. A
/// judgment without a prediction is an error.
pub fn join(preds: &[PredictionLine], truth: &[JudgmentLine]) -> Result<Vec<QueryJudgment>> {
    let by_query: BTreeMap<u64, &PredictionLine> = preds.iter().map(|p| (p.query, p)).collect();
    let mut sorted: Vec<&JudgmentLine> = truth.iter().collect();
    sorted.sort_by_key(|j| j.query);
    sorted
        .into_iter()
        .map(|j| {
            let p = by_query.get(&j.query).ok_or(Error::UnknownQuery(j.query))?;
            QueryJudgment::new(
                j.query,
                j.anchors.iter().copied(),
                p.ranking.iter().map(|(n, _)| *n).collect(),
            )
        })
        .collect()
}
