//! Hyperparameter learning: Minka fixed-point updates for symmetric
//! Dirichlet strengths and validation-set grid search.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::SplitCorpus;
use crate::error::{Error, Result};
use crate::evaluation::heldout_perplexity;
use crate::exec::Exec;
use crate::model_state::{CountMatrices, GammaPrior, Hyperparams};
use crate::rng::derive_seed;
use crate::special::digamma;
use crate::train::{train, Algorithm, TrainConfig};

const MIN_VALUE: f64 = 1e-6;
const MAX_VALUE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinkaConfig {
    /// First training iteration after which updates are applied.
    pub start_iteration: usize,
    pub gamma_prior: GammaPrior,
    /// Inner iterations for [`minka_converge`].
    pub max_inner_iterations: usize,
    pub tolerance: f64,
}

impl Default for MinkaConfig {
    fn default() -> Self {
        Self {
            start_iteration: 15,
            gamma_prior: GammaPrior::default(),
            max_inner_iterations: 200,
            tolerance: 1e-8,
        }
    }
}

impl MinkaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start_iteration == 0 {
            return Err(Error::InvalidConfig("Minka start iteration must be at least 1".into()));
        }
        Ok(())
    }
}

/// One step for a symmetric Dirichlet strength `v` shared by groups of `dim`
/// components: `entries` holds every component count and `totals` each
/// group's sum.
fn minka_step(entries: &[f64], totals: &[f64], dim: usize, v: f64, shape: f64, rate: f64, name: &str) -> f64 {
    let psi_v = digamma(v);
    let num_sum: f64 = entries
        .iter()
        .filter(|&&x| x != 0.0)
        .map(|&x| digamma(x + v) - psi_v)
        .sum();
    let dv = dim as f64 * v;
    let psi_dv = digamma(dv);
    let den_sum: f64 = totals
        .iter()
        .filter(|&&x| x != 0.0)
        .map(|&x| digamma(x + dv) - psi_dv)
        .sum();
    let next = (shape - 1.0 + v * num_sum) / (rate + dim as f64 * den_sum);
    if !next.is_finite() || next.is_nan() {
        log::warn!("Minka update for {name} undefined; keeping {v}");
        return v;
    }
    next.clamp(MIN_VALUE, MAX_VALUE)
}

/// α ← (c − 1 + α Σ_jk [ψ(N_kj + α) − ψ(α)]) / (d + K Σ_j [ψ(N_j + Kα) − ψ(Kα)]),
/// clamped to [1e-6, 1e3].
pub fn minka_update_alpha(cm: &CountMatrices, h: &Hyperparams, prior: (f64, f64)) -> f64 {
    minka_step(&cm.n_kj, &cm.n_j, cm.topics(), h.alpha, prior.0, prior.1, "alpha")
}

/// η ← (a − 1 + η Σ_wk [ψ(N_wk + η) − ψ(η)]) / (b + W Σ_k [ψ(N_k + Wη) − ψ(Wη)]),
/// clamped to [1e-6, 1e3].
pub fn minka_update_eta(cm: &CountMatrices, h: &Hyperparams, prior: (f64, f64)) -> f64 {
    minka_step(&cm.n_wk, &cm.n_k, cm.vocab_size(), h.eta, prior.0, prior.1, "eta")
}

/// Iterate both updates on fixed counts until neither moves more than the
/// tolerance. Returns the final values and the number of steps taken.
pub fn minka_converge(cm: &CountMatrices, h: &Hyperparams, cfg: &MinkaConfig) -> (Hyperparams, usize) {
    let p = cfg.gamma_prior;
    let mut cur = *h;
    for step in 1..=cfg.max_inner_iterations {
        let alpha = minka_update_alpha(cm, &cur, (p.c, p.d));
        let eta = minka_update_eta(cm, &cur, (p.a, p.b));
        let change = (alpha - cur.alpha).abs().max((eta - cur.eta).abs());
        cur.alpha = alpha;
        cur.eta = eta;
        if change < cfg.tolerance {
            return (cur, step);
        }
    }
    (cur, cfg.max_inner_iterations)
}

/// The six grid values used by default for both α and η.
pub const DEFAULT_GRID: [f64; 6] = [0.01, 0.1, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub alpha_values: Vec<f64>,
    pub eta_values: Vec<f64>,
    /// Added to both grids when training MAP.
    pub map_shift: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alpha_values: DEFAULT_GRID.to_vec(),
            eta_values: DEFAULT_GRID.to_vec(),
            map_shift: 1.0,
        }
    }
}

impl GridSpec {
    /// The (α, η) pairs actually trained for `algorithm`, α-major.
    pub fn cells(&self, algorithm: Algorithm) -> Result<Vec<(f64, f64)>> {
        if self.alpha_values.is_empty() || self.eta_values.is_empty() {
            return Err(Error::InvalidConfig("grid value lists must be non-empty".into()));
        }
        let shift = if algorithm == Algorithm::Map { self.map_shift } else { 0.0 };
        let mut out = Vec::new();
        for &a in &self.alpha_values {
            for &e in &self.eta_values {
                let (a, e) = (a + shift, e + shift);
                if !(a > 0.0 && e > 0.0) {
                    return Err(Error::InvalidConfig(format!("grid value must be positive: ({a}, {e})")));
                }
                if algorithm == Algorithm::Map && (a <= 1.0 || e <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "MAP grid values must exceed 1 after the shift: ({a}, {e})"
                    )));
                }
                out.push((a, e));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub eta: f64,
    #[serde(rename = "K")]
    pub topics: usize,
    pub seed: u64,
    pub validation_perplexity: Option<f64>,
    pub test_perplexity: Option<f64>,
    pub iterations_run: usize,
    pub seconds: f64,
    /// Why the cell is invalid, if it is.
    #[serde(skip)]
    pub error: Option<String>,
}

impl GridCell {
    pub fn is_valid(&self) -> bool {
        self.error.is_none() && self.validation_perplexity.is_some_and(f64::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index of the cell with the lowest validation perplexity.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// Lowest validation perplexity; ties go to the larger η, then the larger α.
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if !c.is_valid() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (p, q) = (c.validation_perplexity.unwrap(), cells[b].validation_perplexity.unwrap());
                p < q || (p == q && (c.eta, c.alpha) > (cells[b].eta, cells[b].alpha))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Train and score a single grid cell. Validation and test perplexities both
/// come from fold-in on half of each held-out document.
pub fn run_cell(split: &SplitCorpus, base: &TrainConfig, alpha: f64, eta: f64) -> GridCell {
    let start = Instant::now();
    let mut cell = GridCell {
        algorithm: base.algorithm,
        alpha,
        eta,
        topics: base.topics,
        seed: base.seed,
        validation_perplexity: None,
        test_perplexity: None,
        iterations_run: 0,
        seconds: 0.0,
        error: None,
    };
    let result = (|| -> Result<(f64, f64, usize)> {
        let mut cfg = base.clone();
        cfg.hyperparams = Hyperparams { alpha, eta, ..base.hyperparams };
        let m = train(&split.train, Some(&split.validation), &cfg)?;
        let models = [(&m.estimates, m.hyperparams)];
        let eval_seed = derive_seed(cfg.seed, "heldout-eval");
        let val = heldout_perplexity(&split.validation, &models, cfg.algorithm, &cfg.fold_in, eval_seed, cfg.exec)?;
        let test = heldout_perplexity(&split.test, &models, cfg.algorithm, &cfg.fold_in, eval_seed, cfg.exec)?;
        Ok((val.perplexity, test.perplexity, m.iterations_run))
    })();
    match result {
        Ok((v, t, it)) => {
            cell.validation_perplexity = Some(v);
            cell.test_perplexity = Some(t);
            cell.iterations_run = it;
        }
        Err(e) => {
            log::warn!("grid cell alpha={alpha} eta={eta} failed: {e}");
            cell.error = Some(e.to_string());
        }
    }
    cell.seconds = start.elapsed().as_secs_f64();
    cell
}

/// Train one model per grid cell (cells run concurrently under `exec`, each
/// single-threaded inside) and pick the best by validation perplexity.
pub fn grid_search(split: &SplitCorpus, grid: &GridSpec, base: &TrainConfig, exec: Exec) -> Result<GridResult> {
    base.validate().or_else(|e| match e {
        // the base hyperparameters are replaced per cell
        Error::InvalidHyperparams(_) => Ok(()),
        e => Err(e),
    })?;
    let cells = grid.cells(base.algorithm)?;
    let mut inner = base.clone();
    inner.exec = if exec.is_parallel() && cells.len() > 1 {
        Exec::Sequential
    } else {
        base.exec
    };
    let results = exec.map_range(cells.len(), |i| run_cell(split, &inner, cells[i].0, cells[i].1));
    let best = select_best(&results);
    Ok(GridResult { cells: results, best })
}

/// Grid table as CSV: algorithm, alpha, eta, K, seed, validation_perplexity,
/// test_perplexity, iterations_run, seconds.
pub fn write_grid_csv<W: Write>(cells: &[GridCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
