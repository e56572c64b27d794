use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the expansion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("cycle detected: {}", format_cycle(.0))]
    Cycle(Vec<u64>),

    #[error("edge ({parent}, {child}) references unknown node {missing}")]
    DanglingEdge { parent: u64, child: u64, missing: u64 },

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("query count {requested} too large: only {available} eligible non-root nodes")]
    QueryCountTooLarge { requested: usize, available: usize },

    #[error("missing embedding vector for node {0}")]
    MissingVector(u64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value {value} for node {node}")]
    NonFinite { node: u64, value: f64 },

    #[error("covariance is rank deficient: eigenvalue {eigenvalue:e} below floor {floor:e}")]
    RankDeficient { eigenvalue: f64, floor: f64 },

    #[error("too few samples: {samples} samples for {variables} variables")]
    TooFewSamples { samples: usize, variables: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("transition matrix is singular (|det| = {0:e})")]
    Singular(f64),

    #[error("step failed: |det W| stayed below threshold after {0} halvings")]
    StepFailed(usize),

    #[error("assignment infeasible: column {0} has no entry above threshold")]
    AssignmentInfeasible(usize),

    #[error("block too large: {size} nodes exceeds the dense limit of {limit}")]
    BlockTooLarge { size: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no anchor: every inheritance factor is zero for query {0}")]
    NoAnchor(u64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("k = {k} exceeds ranking length {len}")]
    KTooLarge { k: usize, len: usize },

    #[error("ground-truth node {node} missing from ranking of query {query}")]
    AnchorNotRanked { query: u64, node: u64 },

    #[error("unknown query id {0}")]
    UnknownQuery(u64),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_cycle(nodes: &[u64]) -> String {
    nodes
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
