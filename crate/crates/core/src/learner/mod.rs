//! Maximum-likelihood learning of the transition matrix `W = I - S`.
//!
//! Node features are modelled as `X = S X + U` with independent,
//! non-Gaussian supplementary rows `U`. After whitening, `W` is fitted by
//! gradient ascent on the sample-mean log-likelihood
//! `Σᵢ mean_t ln p(wᵢ·xₜ) + ln|det W|`.

pub mod density;
pub mod extract;
pub mod objective;
pub mod persist;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use density::{log_density, DensityMode, RowDensity};
pub use extract::{extract_from_unmixing, resolve_permutation_scale, InheritanceMatrix};
pub use objective::{gradient, loss, loss_with_rows, step, Step, TransitionMatrix, EPS_DET};

use crate::error::{Error, Result};
use crate::preprocess::{self, apply_inverse, EmbeddingMatrix, PreprocessTransform};
use crate::rng;
use crate::taxonomy::NodeId;
use objective::{evaluate, natural_direction};

/// Largest number of node variables trained as one dense block.
pub const MAX_DENSE_BLOCK: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplies the learning rate after every iteration.
    pub decay: f64,
    pub max_iters: usize,
    /// Stop once `‖ΔW‖_F` falls below this.
    pub tol: f64,
    pub seed: u64,
    pub density: DensityMode,
    pub prune_threshold: f64,
    pub enforce_acyclic: bool,
    /// Use the `(I + G Uᵀ/d) W` direction instead of the plain gradient.
    pub natural_gradient: bool,
    /// Half-width of the uniform perturbation added to the identity at start.
    pub init_scale: f64,
    pub max_block: usize,
    /// Allowed off-diagonal positions `(child, parent)` in row order. When
    /// present, only these entries of `W` move and the data is standardized
    /// per row instead of fully whitened, so that the pattern carries over
    /// to the total unmixing matrix.
    pub edge_mask: Option<Vec<(usize, usize)>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            decay: 0.999,
            max_iters: 5000,
            tol: 1e-6,
            seed: 0,
            density: DensityMode::Adaptive,
            prune_threshold: 0.1,
            enforce_acyclic: true,
            natural_gradient: false,
            init_scale: 0.01,
            max_block: MAX_DENSE_BLOCK,
            edge_mask: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if !(self.prune_threshold >= 0.0) {
            return bad(format!("prune threshold must be >= 0, got {}", self.prune_threshold));
        }
        if !(self.init_scale >= 0.0) {
            return bad(format!("init scale must be >= 0, got {}", self.init_scale));
        }
        Ok(())
    }
}

/// A trained block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub transition: TransitionMatrix,
    pub preprocess: PreprocessTransform,
    pub nodes: Vec<NodeId>,
    /// Loss before every step, plus the loss at the final `W`.
    pub loss_log: Vec<f64>,
    /// Preprocessed training data, N x d.
    pub whitened: DMatrix<f64>,
    /// `U = W · whitened`.
    pub supplementary: DMatrix<f64>,
    pub config: TrainConfig,
    pub iterations: usize,
    pub converged: bool,
}

impl ModelState {
    pub fn n(&self) -> usize {
        self.whitened.nrows()
    }

    pub fn d(&self) -> usize {
        self.whitened.ncols()
    }

    /// Total unmixing `W Z` acting on centered original features.
    pub fn unmixing(&self) -> DMatrix<f64> {
        apply_inverse(&self.preprocess, &self.transition.w).expect("shapes fixed at training")
    }

    /// Centered original features `Z⁻¹ · whitened`.
    pub fn centered(&self) -> DMatrix<f64> {
        &self.preprocess.inverse * &self.whitened
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_log.last().expect("loss log is never empty")
    }
}

/// What the observer sees at every iteration, before the step is applied.
pub struct Snapshot<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub w: &'a DMatrix<f64>,
    pub supplementary: &'a DMatrix<f64>,
}

pub fn train(x: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<ModelState> {
    train_observed(x, cfg, |_| {})
}

/// [`train`] with a callback invoked once per iteration.
pub fn train_observed<F>(x: &EmbeddingMatrix, cfg: &TrainConfig, observe: F) -> Result<ModelState>
where
    F: FnMut(&Snapshot<'_>),
{
    train_inner(x, cfg, None, observe)
}

/// Starts from a total unmixing `a0` (acting on centered original features)
/// instead of the perturbed identity; `W₀ = a0 · Z⁻¹`.
pub fn train_from_unmixing(x: &EmbeddingMatrix, cfg: &TrainConfig, a0: &DMatrix<f64>) -> Result<ModelState> {
    if a0.shape() != (x.n(), x.n()) {
        return Err(Error::Shape(format!(
            "initial unmixing {:?} for {} nodes",
            a0.shape(),
            x.n()
        )));
    }
    train_inner(x, cfg, Some(a0), |_| {})
}

fn train_inner<F>(
    x: &EmbeddingMatrix,
    cfg: &TrainConfig,
    a0: Option<&DMatrix<f64>>,
    mut observe: F,
) -> Result<ModelState>
where
    F: FnMut(&Snapshot<'_>),
{
    cfg.validate()?;
    let n = x.n();
    if n > cfg.max_block {
        return Err(Error::BlockTooLarge {
            size: n,
            limit: cfg.max_block,
        });
    }
    let allowed = cfg.edge_mask.as_ref().map(|m| allowed_entries(n, m)).transpose()?;
    let (transform, xw) = match allowed {
        Some(_) => preprocess::fit_standardize(x)?,
        None => preprocess::fit_whiten(x)?,
    };
    let xw = xw.data;

    let mut w = match a0 {
        Some(a) => a * &transform.inverse,
        None => {
            let mut init_rng = rng::substream(cfg.seed, rng::INIT);
            DMatrix::from_fn(n, n, |i, j| {
                let delta = init_rng.random_range(-1.0..=1.0) * cfg.init_scale;
                if i == j {
                    1.0 + delta
                } else {
                    delta
                }
            })
        }
    };
    if let Some(mask) = &allowed {
        w.component_mul_assign(mask);
    }

    let mut alpha = cfg.learning_rate;
    let mut loss_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        let eval = evaluate(&w, &xw, cfg.density)?;
        if !eval.loss.is_finite() {
            return Err(Error::Degenerate(format!("non-finite loss at iteration {it}")));
        }
        observe(&Snapshot {
            iteration: it,
            loss: eval.loss,
            w: &w,
            supplementary: &eval.u,
        });
        loss_log.push(eval.loss);
        let mut dir = if cfg.natural_gradient {
            natural_direction(&eval, &w)
        } else {
            eval.grad
        };
        if let Some(mask) = &allowed {
            dir.component_mul_assign(mask);
        }
        let current = TransitionMatrix {
            w,
            density: cfg.density,
        };
        let next = step(&current, &dir, alpha)?;
        let delta = (&next.w.w - &current.w).norm();
        w = next.w.w;
        iterations = it + 1;
        alpha *= cfg.decay;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    let last = evaluate(&w, &xw, cfg.density)?;
    loss_log.push(last.loss);
    log::debug!(
        "trained {n} nodes in {iterations} iterations (converged: {converged}, loss {:.6})",
        last.loss
    );

    Ok(ModelState {
        transition: TransitionMatrix {
            w,
            density: cfg.density,
        },
        preprocess: transform,
        nodes: x.nodes.clone(),
        loss_log,
        whitened: xw,
        supplementary: last.u,
        config: cfg.clone(),
        iterations,
        converged,
    })
}

fn allowed_entries(n: usize, mask: &[(usize, usize)]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::identity(n, n);
    for &(child, parent) in mask {
        if child >= n || parent >= n || child == parent {
            return Err(Error::Config(format!(
                "invalid mask entry ({child}, {parent}) for {n} nodes"
            )));
        }
        m[(child, parent)] = 1.0;
    }
    Ok(m)
}

/// Inheritance matrix of a trained block, in the original feature scale.
pub fn extract_inheritance(m: &ModelState) -> Result<InheritanceMatrix> {
    extract_from_unmixing(
        &m.unmixing(),
        m.config.prune_threshold,
        m.config.enforce_acyclic,
    )
}
