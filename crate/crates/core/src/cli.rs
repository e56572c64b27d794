//! Command-line entry point: `train`, `expand`, `eval` and `synth`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{self, PredictionLine, DEFAULT_KS};
use crate::inference::{self, InferConfig, InferMode, QueryVector};
use crate::learner::{self, persist, DensityMode, ModelState, TrainConfig};
use crate::preprocess::{self, EmbeddingMatrix};
use crate::synthlab::{self, DeviationFit, Distribution, Experiment};
use crate::taxonomy::{self, NodeId, SubTaxonomy, Taxonomy};

pub const THREADS_ENV: &str = "TAXO_DNG_THREADS";
const BUNDLE: &str = "bundle.json";

#[derive(Debug, Parser)]
#[command(name = "taxo-dng", version, about = "Taxonomy expansion by non-Gaussian inheritance learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a seed taxonomy and its node embeddings.
    Train(TrainArgs),
    /// Place query nodes into a trained taxonomy.
    Expand(ExpandArgs),
    /// Score predictions against ground-truth anchors.
    Eval(EvalArgs),
    /// Run the synthetic recovery or deviation experiment over seeds.
    Synth(SynthArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// `<nodes.tsv>,<edges.tsv>`
    #[arg(long)]
    pub taxonomy: String,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub density: Option<DensityArg>,
}

#[derive(Debug, clap::Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Anchors attached per query in the expanded taxonomy.
    #[arg(long)]
    pub top_m: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub judgments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = evalmetrics::DEFAULT_MRR_SCALE)]
    pub scale: f64,
    /// Cut-offs, comma separated. Cut-offs longer than the shortest
    /// ranking are dropped.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub ks: Vec<usize>,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub experiment: ExperimentArg,
    #[arg(long, value_enum)]
    pub dist: DistArg,
    /// Runs with seeds `0..n`.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Structural fit used by the deviation experiment.
    #[arg(long, value_enum, default_value_t = FitArg::Free)]
    pub fit: FitArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DensityArg {
    PaperTanh,
    LogCosh,
    SubGaussian,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Frozen,
    Refit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Recovery,
    Deviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitArg {
    Free,
    Masked,
}

/// Contents of a `--config` file. Both sections are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub infer: InferConfig,
}

fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found: {}", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One trained block in a bundle, in external ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleEntry {
    dir: String,
    source: u64,
    destinations: Vec<u64>,
    members: Vec<u64>,
    truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Bundle {
    blocks: Vec<BundleEntry>,
}

fn write_training_log(dir: &Path, m: &ModelState) -> Result<()> {
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in m.loss_log.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write(&dir.join("training_log.csv"), &csv)
}

fn external_ids(t: &Taxonomy, nodes: &[NodeId]) -> Vec<u64> {
    nodes.iter().map(|&v| t.external_id(v)).collect()
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (nodes_path, edges_path) = args.taxonomy.split_once(',').ok_or_else(|| {
        Error::Config("--taxonomy expects `<nodes.tsv>,<edges.tsv>`".into())
    })?;
    let (nodes_path, edges_path) = (Path::new(nodes_path), Path::new(edges_path));
    require(nodes_path, "taxonomy nodes file")?;
    require(edges_path, "taxonomy edges file")?;
    require(&args.embeddings, "embeddings")?;
    if let Some(c) = &args.config {
        require(c, "config")?;
    }
    let mut cfg = read_config(args.config.as_deref())?.train;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.max_iters {
        cfg.max_iters = n;
    }
    if let Some(a) = args.learning_rate {
        cfg.learning_rate = a;
    }
    if let Some(d) = args.density {
        cfg.density = match d {
            DensityArg::PaperTanh => DensityMode::PaperTanh,
            DensityArg::LogCosh => DensityMode::LogCosh,
            DensityArg::SubGaussian => DensityMode::SubGaussian,
            DensityArg::Adaptive => DensityMode::Adaptive,
        };
    }
    cfg.validate()?;

    let t = taxonomy::load_taxonomy(nodes_path, edges_path)?;
    let x = preprocess::load_embeddings(&args.embeddings, &t)?;
    create_dir(&args.out)?;
    t.save(&args.out.join("nodes.tsv"), &args.out.join("edges.tsv"))?;

    if x.n() <= cfg.max_block {
        let m = learner::train(&x, &cfg)?;
        persist::save_model(&m, &external_ids(&t, &m.nodes), &args.out)?;
        return write_training_log(&args.out, &m);
    }

    let row_of: BTreeMap<NodeId, usize> = x.nodes.iter().enumerate().map(|(r, &v)| (v, r)).collect();
    let subs = taxonomy::split_subtaxonomies(&t, cfg.max_block)?;
    let blocks: Vec<(SubTaxonomy, EmbeddingMatrix)> = subs
        .into_iter()
        .filter_map(|s| {
            let rows: Vec<usize> = s.members.iter().filter_map(|v| row_of.get(v).copied()).collect();
            (rows.len() >= 2).then(|| {
                let xb = x.select(&rows);
                (s, xb)
            })
        })
        .collect();
    let trained: Vec<ModelState> = blocks
        .par_iter()
        .map(|(_, xb)| learner::train(xb, &cfg))
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(blocks.len());
    for (i, ((sub, _), m)) in blocks.iter().zip(&trained).enumerate() {
        let name = format!("block_{i:04}");
        let dir = args.out.join(&name);
        persist::save_model(m, &external_ids(&t, &m.nodes), &dir)?;
        write_training_log(&dir, m)?;
        entries.push(BundleEntry {
            dir: name,
            source: t.external_id(sub.source),
            destinations: external_ids(&t, &sub.destinations),
            members: external_ids(&t, &sub.members),
            truncated: sub.truncated,
        });
    }
    let text = serde_json::to_string_pretty(&Bundle { blocks: entries })? + "\n";
    write(&args.out.join(BUNDLE), &text)
}

/// Rebinds a loaded block's nodes to the ids of `t`.
fn bind(t: &Taxonomy, mut m: ModelState, ids: &[u64]) -> Result<ModelState> {
    m.nodes = ids
        .iter()
        .map(|&e| {
            t.lookup(e)
                .ok_or_else(|| Error::InvalidTaxonomy(format!("model node {e} is not in the taxonomy")))
        })
        .collect::<Result<_>>()?;
    Ok(m)
}

fn load_blocks(dir: &Path, t: &Taxonomy) -> Result<Vec<(ModelState, SubTaxonomy)>> {
    let lookup = |ids: &[u64]| -> Result<Vec<NodeId>> {
        ids.iter()
            .map(|&e| {
                t.lookup(e)
                    .ok_or_else(|| Error::InvalidTaxonomy(format!("bundle node {e} is not in the taxonomy")))
            })
            .collect()
    };
    let bundle_path = dir.join(BUNDLE);
    if !bundle_path.exists() {
        let (m, ids) = persist::load_model(dir)?;
        let m = bind(t, m, &ids)?;
        let sub = SubTaxonomy {
            members: m.nodes.clone(),
            source: t.roots().first().copied().unwrap_or(NodeId(0)),
            destinations: t.leaves(),
            truncated: false,
        };
        return Ok(vec![(m, sub)]);
    }
    let text = fs::read_to_string(&bundle_path).map_err(|e| Error::io(&bundle_path, e))?;
    let bundle: Bundle = serde_json::from_str(&text)?;
    let mut out = Vec::with_capacity(bundle.blocks.len());
    for b in &bundle.blocks {
        let (m, ids) = persist::load_model(&dir.join(&b.dir))?;
        let m = bind(t, m, &ids)?;
        let sub = SubTaxonomy {
            members: lookup(&b.members)?,
            source: lookup(&[b.source])?[0],
            destinations: lookup(&b.destinations)?,
            truncated: b.truncated,
        };
        out.push((m, sub));
    }
    Ok(out)
}

pub fn cmd_expand(args: &ExpandArgs) -> Result<()> {
    require(&args.model, "model")?;
    require(&args.queries, "queries")?;
    let mut cfg = read_config(args.config.as_deref())?.infer;
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Frozen => InferMode::Frozen,
            ModeArg::Refit => InferMode::Refit,
        };
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if let Some(k) = args.top_m {
        cfg.top_m = k;
    }

    let t = taxonomy::load_taxonomy(&args.model.join("nodes.tsv"), &args.model.join("edges.tsv"))?;
    let blocks = load_blocks(&args.model, &t)?;
    let d = blocks[0].0.d();
    let (dim, rows) = preprocess::read_vectors(&args.queries)?;
    if !rows.is_empty() && dim != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: dim,
        });
    }
    let mut queries: Vec<QueryVector> = rows
        .into_iter()
        .map(|(id, feature)| QueryVector { id, feature })
        .collect();
    queries.sort_by_key(|q| q.id);
    if let Some(q) = queries.iter().find(|q| t.lookup(q.id).is_some()) {
        return Err(Error::InvalidTaxonomy(format!("query id {} already names a taxonomy node", q.id)));
    }

    let (models, subs): (Vec<ModelState>, Vec<SubTaxonomy>) = blocks.into_iter().unzip();
    let ranked: Vec<inference::RankedAnchors> = queries
        .par_iter()
        .map(|q| inference::recombine(&models, q, &subs, &cfg))
        .collect::<Result<_>>()?;

    create_dir(&args.out)?;
    let mut lines = String::new();
    let mut expanded = t.clone();
    for r in &ranked {
        let line = PredictionLine {
            query: r.query,
            ranking: r.entries.iter().map(|&(v, f)| (t.external_id(v), f)).collect(),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
        match inference::attach(&expanded, r.query, r, cfg.top_m) {
            Ok(next) => expanded = next,
            Err(Error::NoAnchor(q)) => log::warn!("query {q} has no anchor and is left unattached"),
            Err(e) => return Err(e),
        }
    }
    write(&args.out.join("predictions.jsonl"), &lines)?;
    expanded.save(&args.out.join("expanded_nodes.tsv"), &args.out.join("expanded_edges.tsv"))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    require(&args.predictions, "predictions")?;
    require(&args.judgments, "judgments")?;
    let preds = evalmetrics::read_predictions(&args.predictions)?;
    let truth = evalmetrics::read_judgments(&args.judgments)?;
    let js = evalmetrics::join(&preds, &truth)?;
    let shortest = js.iter().map(|j| j.ranking.len()).min().unwrap_or(0);
    let ks: Vec<usize> = args.ks.iter().copied().filter(|&k| k <= shortest).collect();
    for k in args.ks.iter().filter(|&&k| k > shortest) {
        log::warn!("dropping k = {k}: shortest ranking has {shortest} entries");
    }
    let report = evalmetrics::report(&js, &ks, args.scale)?;
    create_dir(&args.out)?;
    report.write_json(&args.out.join("metrics.json"))?;
    report.write_csv(&args.out.join("metrics.csv"))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = read_config(args.config.as_deref())?.train;
    let experiment = match args.experiment {
        ExperimentArg::Recovery => Experiment::Recovery,
        ExperimentArg::Deviation => Experiment::Deviation,
    };
    let dist = match args.dist {
        DistArg::Uniform => Distribution::Uniform,
        DistArg::Gaussian => Distribution::Gaussian,
    };
    let fit = match args.fit {
        FitArg::Free => DeviationFit::Free,
        FitArg::Masked => DeviationFit::Masked,
    };
    let runs = synthlab::sweep(experiment, dist, args.seeds, args.samples, &cfg, fit)?;
    let summary = synthlab::summarize(experiment, dist, args.samples, &runs);
    create_dir(&args.out)?;
    let stem = format!(
        "{}_{}",
        match experiment {
            Experiment::Recovery => "recovery",
            Experiment::Deviation => "deviation",
        },
        dist.name()
    );
    synthlab::write_sweep_csv(&args.out.join(format!("{stem}.csv")), dist, &runs)?;
    synthlab::write_summary_json(&args.out.join(format!("{stem}_summary.json")), &summary)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    // a pool may already exist when embedded; keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Expand(a) => cmd_expand(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses arguments, runs, and maps any error to exit status 2.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_sections_are_optional() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"max_iters": 3}}"#).unwrap();
        assert_eq!(c.train.max_iters, 3);
        assert_eq!(c.infer, InferConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
