//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`).

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use taxo_dng::evalmetrics::{self, QueryJudgment};
use taxo_dng::learner::{self, DensityMode, TrainConfig, TransitionMatrix};
use taxo_dng::preprocess::{self, EmbeddingMatrix};
use taxo_dng::rng::substream;
use taxo_dng::synthlab::{self, Distribution, SemSpec, RECOVERY_TOL};
use taxo_dng::taxonomy::NodeId;

const SEEDS: u64 = 20;
const D: usize = 5000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn recovery_runs(dist: Distribution) -> Vec<synthlab::RecoveryResult> {
    (0..SEEDS)
        .map(|seed| {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            synthlab::recovery_experiment(&SemSpec::four_node(dist, D, seed), &cfg).unwrap()
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

fn c1_c2() -> (Outcome, Outcome) {
    let start = Instant::now();
    let uniform = recovery_runs(Distribution::Uniform);
    let secs = start.elapsed().as_secs_f64();
    let ok = uniform.iter().filter(|r| r.recovered(RECOVERY_TOL)).count();
    let c1 = outcome(
        ok >= 18 && secs < 60.0,
        format!("{ok}/20 runs recovered within ±{RECOVERY_TOL}, {secs:.1} s"),
    );
    let gaussian = recovery_runs(Distribution::Gaussian);
    let eu = mean(uniform.iter().map(|r| r.mean_edge_error()));
    let eg = mean(gaussian.iter().map(|r| r.mean_edge_error()));
    let c2 = outcome(
        eg >= 3.0 * eu,
        format!("mean edge error gaussian {eg:.4} vs uniform {eu:.4} ({:.1}x)", eg / eu),
    );
    (c1, c2)
}

fn c3() -> Outcome {
    let ratio = |dist| {
        mean((0..SEEDS).map(|seed| {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            synthlab::deviation_experiment(&SemSpec::four_node(dist, D, seed), &cfg)
                .unwrap()
                .mean_ratio
        }))
    };
    let u = ratio(Distribution::Uniform);
    let g = ratio(Distribution::Gaussian);
    outcome(
        u > 0.0 && g > 0.0 && u >= 1.5 * g,
        format!("mean deviation ratio uniform {:.2}% vs gaussian {:.2}%", 100.0 * u, 100.0 * g),
    )
}

/// Central differences of `f` around `w`.
fn finite_diff(w: &DMatrix<f64>, h: f64, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let mut up = w.clone();
            up[(i, j)] += h;
            let mut dn = w.clone();
            dn[(i, j)] -= h;
            g[(i, j)] = (f(&up) - f(&dn)) / (2.0 * h);
        }
    }
    g
}

fn condition(w: &DMatrix<f64>) -> f64 {
    let sv = w.clone().svd(false, false).singular_values;
    sv.max() / sv.min()
}

fn c4() -> Outcome {
    let mut rng = substream(4, "gradient");
    let mut worst_lc: f64 = 0.0;
    let mut made = 0;
    while made < 10 {
        let w = DMatrix::<f64>::identity(4, 4) + DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.5..0.5));
        if condition(&w) >= 1e3 {
            continue;
        }
        made += 1;
        let x = DMatrix::from_fn(4, 200, |_, _| rng.random_range(-2.0..2.0));
        let tm = TransitionMatrix {
            w: w.clone(),
            density: DensityMode::LogCosh,
        };
        let g = learner::gradient(&tm, &x).unwrap();
        // the gradient is of the negated loss
        let fd = -finite_diff(&w, 1e-5, |v| {
            let t = TransitionMatrix {
                w: v.clone(),
                density: DensityMode::LogCosh,
            };
            learner::loss(&t, &x).unwrap()
        });
        worst_lc = worst_lc.max((&g - &fd).norm() / fd.norm());
    }

    // safe domain: positive W and data keep every u above 0.5
    let mut worst_tanh: f64 = 0.0;
    for _ in 0..10 {
        let w = DMatrix::<f64>::identity(4, 4) * 1.5 + DMatrix::from_fn(4, 4, |_, _| rng.random_range(0.1..0.4));
        let x = DMatrix::from_fn(4, 200, |_, _| rng.random_range(0.5..2.0));
        let u = &w * &x;
        assert!(u.min() >= 0.5);
        let tm = TransitionMatrix {
            w: w.clone(),
            density: DensityMode::PaperTanh,
        };
        let g = learner::gradient(&tm, &x).unwrap();
        let clamp_free = |v: &DMatrix<f64>| {
            let u = v * &x;
            let data: f64 = u.row_iter().map(|r| r.iter().map(|s| s.tanh().ln()).sum::<f64>() / 200.0).sum();
            -data - v.determinant().abs().ln()
        };
        let fd = -finite_diff(&w, 1e-5, clamp_free);
        worst_tanh = worst_tanh.max((&g - &fd).norm() / fd.norm());
    }
    outcome(
        worst_lc <= 1e-6 && worst_tanh <= 1e-5,
        format!("max relative error log_cosh {worst_lc:.2e}, paper_tanh {worst_tanh:.2e}"),
    )
}

fn c5() -> Outcome {
    let mut rng = substream(5, "whiten");
    let mut worst: f64 = 0.0;
    for &(n, d) in &[(2, 50), (10, 1000), (50, 5000), (100, 10_000)] {
        // correlated rows: a random mixing of independent draws
        let mix = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rng.random_range(-0.3..0.3) });
        let raw = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0) + 3.0);
        let x = EmbeddingMatrix::new(&mix * raw, (0..n).map(NodeId).collect()).unwrap();
        let (_, xw) = preprocess::fit_whiten(&x).unwrap();
        let cov = &xw.data * xw.data.transpose() / d as f64;
        worst = worst.max((cov - DMatrix::<f64>::identity(n, n)).abs().max());
    }
    outcome(worst <= 1e-8, format!("max |cov - I| = {worst:.2e} up to N = 100, d = 10000"))
}

/// Average ranks, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(ra.iter().copied()), mean(rb.iter().copied()));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn c6() -> Outcome {
    // trajectory sampled at iterations 0, 1, 2, 4, 8, ... and the last one
    let mut worst = f64::INFINITY;
    for seed in 0..SEEDS {
        let data = synthlab::gen_sem(&SemSpec::four_node(Distribution::Uniform, D, seed)).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let neg = |u: &DMatrix<f64>| {
            mean(u.row_iter().map(|r| {
                let v: Vec<f64> = r.iter().copied().collect();
                synthlab::negentropy_proxy(&v).unwrap()
            }))
        };
        let mut points: Vec<(f64, f64)> = Vec::new();
        let m = learner::train_observed(&data.embeddings(), &cfg, |s| {
            if s.iteration == 0 || s.iteration.is_power_of_two() {
                points.push((-s.loss, neg(s.supplementary)));
            }
        })
        .unwrap();
        points.push((-m.final_loss(), neg(&m.supplementary)));
        let a: Vec<f64> = points.iter().map(|p| p.0).collect();
        let b: Vec<f64> = points.iter().map(|p| p.1).collect();
        worst = worst.min(spearman(&a, &b));
    }
    outcome(worst >= 0.9, format!("min Spearman over {SEEDS} trajectories {worst:.4}"))
}

fn c7() -> Outcome {
    let mut ok = 0;
    for seed in 0..SEEDS {
        let data = synthlab::gen_sem(&SemSpec::four_node(Distribution::Uniform, D, seed)).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let m = learner::train(&data.embeddings(), &cfg).unwrap();
        let n = m.n();
        let at_u = synthlab::mutual_info_linear(&m.whitened, &m.transition.w).unwrap();
        let at_x = synthlab::mutual_info_linear(&m.whitened, &DMatrix::identity(n, n)).unwrap();
        if at_u < at_x {
            ok += 1;
        }
    }
    outcome(ok >= 18, format!("{ok}/20 seeds with lower mutual information in U"))
}

fn c8() -> Outcome {
    let mut rng = substream(8, "entropy");
    let mut worst: f64 = 0.0;
    let mut made = 0;
    while made < 10 {
        let n = 2 + made % 5;
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        if b.determinant().abs() < 1e-3 {
            continue;
        }
        let (lhs, rhs) = synthlab::entropy_transform_check(&b, 500, made as u64).unwrap();
        worst = worst.max((lhs - rhs).abs());
        made += 1;
    }
    outcome(worst <= 1e-9, format!("max |lhs - rhs| = {worst:.2e} over 10 matrices"))
}

fn c9() -> Outcome {
    let (a, b, c, e) = (1, 2, 3, 4);
    let two = QueryJudgment::new(0, [a, b], vec![a, c, b]).unwrap();
    let p = evalmetrics::precision_at_k(&two, 2).unwrap();
    let r = evalmetrics::recall_at_k(&two, 2).unwrap();
    let mr = evalmetrics::mean_rank(&[QueryJudgment::new(0, [b, e], vec![a, b, c, e]).unwrap()]).unwrap();
    let (mrr, scaled) = evalmetrics::mrr(&[QueryJudgment::new(0, [e], vec![a, b, c, e]).unwrap()], 10.0).unwrap();
    outcome(
        p == 0.5 && r == 0.5 && mr == 3.0 && mrr == 0.25 && scaled == 2.5,
        format!("P@2 {p}, R@2 {r}, MR {mr}, MRR {mrr}, scaled {scaled}"),
    )
}

fn run(bin: &str, args: &[&str]) -> bool {
    Command::new(bin)
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn c10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let fixture = synthlab::pipeline_fixture(200, 20, 1000, 10).unwrap();
    fixture.write(&data).unwrap();
    std::fs::write(root.join("run.json"), r#"{"train": {"max_iters": 200}}"#).unwrap();
    let p = |rel: &str| -> String { root.join(rel).to_string_lossy().into_owned() };
    let bin = env!("CARGO_BIN_EXE_taxo-dng");
    let taxonomy = format!("{},{}", p("data/nodes.tsv"), p("data/edges.tsv"));

    let start = Instant::now();
    let ok = run(
        bin,
        &[
            "train", "--taxonomy", &taxonomy, "--embeddings", &p("data/vectors.txt"),
            "--out", &p("model"), "--config", &p("run.json"), "--seed", "10",
        ],
    ) && run(
        bin,
        &["expand", "--model", &p("model"), "--queries", &p("data/queries.txt"), "--out", &p("expand")],
    ) && run(
        bin,
        &[
            "eval", "--predictions", &p("expand/predictions.jsonl"),
            "--judgments", &p("data/judgments.jsonl"), "--out", &p("eval"),
        ],
    );
    let secs = start.elapsed().as_secs_f64();
    if !ok {
        return outcome(false, "a pipeline stage exited with an error".into());
    }
    let report: evalmetrics::MetricReport =
        serde_json::from_str(&std::fs::read_to_string(Path::new(&p("eval/metrics.json"))).unwrap()).unwrap();
    let k1 = report.ks.iter().position(|&k| k == 1).unwrap();
    let recall = report.recall[k1];
    outcome(
        recall >= 0.8 && secs < 300.0,
        format!("Recall@1 {recall:.2} on 20 queries, MRR {:.3}, {secs:.1} s", report.mrr),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: u32, name: &str, o: Outcome| {
        all &= o.pass;
        println!("[{}] {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    let (o1, o2) = c1_c2();
    report(1, "four-node recovery, uniform", o1);
    report(2, "gaussian control", o2);
    report(3, "directionality ordering", c3());
    report(4, "gradient vs finite differences", c4());
    report(5, "whitening covariance", c5());
    report(6, "likelihood tracks negentropy", c6());
    report(7, "unmixing lowers mutual information", c7());
    report(8, "entropy of a linear transform", c8());
    report(9, "metric fixtures", c9());
    report(10, "train -> expand -> eval pipeline", c10());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
