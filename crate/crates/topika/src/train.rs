//! Training driver shared by every learner: initialisation, sweeps,
//! optional hyperparameter updates, validation and early stopping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batch::{batch_sweep, BatchAlgorithm, BatchState};
use crate::collapsed::{
    collapsed_sweep, parallel_cvb0_sweep, CollapsedAlgorithm, CollapsedState,
};
use crate::corpus::{fold_in_split, Corpus, FoldInSplit};
use crate::error::{Error, Result};
use crate::evaluation::{fold_in, perplexity, FoldInConfig};
use crate::exec::Exec;
use crate::hyperopt::{minka_update_alpha, minka_update_eta, MinkaConfig};
use crate::model_state::{
    estimate_collapsed, estimate_map, estimate_vb_alternative, CountMatrices, EstimatorTag,
    Hyperparams, TopicEstimates,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trace::{ParallelInfo, TraceRecord};

/// Smallest value Minka updates may give a MAP hyperparameter.
const MAP_FLOOR: f64 = 1.0 + 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ml,
    Map,
    Vb,
    Cvb,
    Cvb0,
    Cgs,
    Pcvb0,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Ml,
        Algorithm::Map,
        Algorithm::Vb,
        Algorithm::Cvb,
        Algorithm::Cvb0,
        Algorithm::Cgs,
        Algorithm::Pcvb0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ml => "ml",
            Algorithm::Map => "map",
            Algorithm::Vb => "vb",
            Algorithm::Cvb => "cvb",
            Algorithm::Cvb0 => "cvb0",
            Algorithm::Cgs => "cgs",
            Algorithm::Pcvb0 => "pcvb0",
        }
    }

    /// Estimator used for prediction unless overridden.
    pub fn default_estimator(self) -> EstimatorTag {
        match self {
            Algorithm::Map => EstimatorTag::Map,
            _ => EstimatorTag::Collapsed,
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == Algorithm::Cgs
    }

    fn batch(self) -> Option<BatchAlgorithm> {
        match self {
            Algorithm::Ml => Some(BatchAlgorithm::Ml),
            Algorithm::Map => Some(BatchAlgorithm::Map),
            Algorithm::Vb => Some(BatchAlgorithm::Vb),
            _ => None,
        }
    }

    fn collapsed(self) -> Option<CollapsedAlgorithm> {
        match self {
            Algorithm::Cvb => Some(CollapsedAlgorithm::Cvb),
            Algorithm::Cvb0 | Algorithm::Pcvb0 => Some(CollapsedAlgorithm::Cvb0),
            Algorithm::Cgs => Some(CollapsedAlgorithm::Cgs),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub topics: usize,
    pub hyperparams: Hyperparams,
    pub max_iterations: usize,
    /// Validate every this many iterations; 0 disables validation.
    pub eval_every: usize,
    /// ML/MAP/VB stop after this many validations without improvement.
    pub patience: usize,
    /// Stop when no responsibility moves more than this (deterministic
    /// learners only). CGS always runs `max_iterations`.
    pub tolerance: f64,
    pub seed: u64,
    pub minka: Option<MinkaConfig>,
    /// Parallel CVB0 shards.
    pub workers: usize,
    pub sync_every: usize,
    /// Prediction estimator; `None` picks the algorithm's default.
    pub estimator: Option<EstimatorTag>,
    /// Stop as soon as validation perplexity falls below this value.
    pub stop_below: Option<f64>,
    pub fold_in: FoldInConfig,
    pub exec: Exec,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, topics: usize, hyperparams: Hyperparams) -> Self {
        Self {
            algorithm,
            topics,
            hyperparams,
            max_iterations: 500,
            eval_every: 2,
            patience: 5,
            tolerance: 1e-4,
            seed: 0,
            minka: None,
            workers: 4,
            sync_every: 4096,
            estimator: None,
            stop_below: None,
            fold_in: FoldInConfig::default(),
            exec: Exec::default(),
        }
    }

    pub fn estimator_tag(&self) -> EstimatorTag {
        self.estimator
            .unwrap_or_else(|| self.algorithm.default_estimator())
    }

    /// Reject invalid combinations before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::InvalidConfig("number of topics must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.algorithm == Algorithm::Map {
            self.hyperparams.validate_map()?;
        } else {
            self.hyperparams.validate()?;
        }
        if self.estimator_tag() == EstimatorTag::Map {
            self.hyperparams.validate_map()?;
        }
        if self.algorithm == Algorithm::Pcvb0 && (self.workers == 0 || self.sync_every == 0) {
            return Err(Error::InvalidConfig(
                "workers and sync_every must be at least 1".into(),
            ));
        }
        if let Some(m) = &self.minka {
            m.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    /// ML/MAP/VB: estimates from the best validated iteration. Collapsed
    /// learners: the final state (the last sample for CGS).
    pub estimates: TopicEstimates,
    /// Hyperparameters belonging to `estimates`.
    pub hyperparams: Hyperparams,
    /// Counts after the last sweep.
    pub counts: CountMatrices,
    pub iterations_run: usize,
    /// Iteration that produced `estimates`.
    pub best_iteration: usize,
    /// Validation perplexity of `estimates`.
    pub best_validation_perplexity: Option<f64>,
    /// Iteration and training seconds at which `stop_below` was reached.
    pub threshold_reached: Option<(usize, f64)>,
    /// Training time excluding validation.
    pub seconds: f64,
    pub trace: Vec<TraceRecord>,
    pub parallel: Option<ParallelInfo>,
}

pub fn estimates_for(cm: &CountMatrices, h: &Hyperparams, tag: EstimatorTag) -> Result<TopicEstimates> {
    match tag {
        EstimatorTag::Collapsed => Ok(estimate_collapsed(cm, h)),
        EstimatorTag::Map => estimate_map(cm, h),
        EstimatorTag::VbAlternative => Ok(estimate_vb_alternative(cm, h)),
    }
}

enum State {
    Batch(BatchAlgorithm, BatchState),
    Collapsed(CollapsedState, crate::rng::Rng),
}

impl State {
    fn counts(&self) -> &CountMatrices {
        match self {
            State::Batch(_, s) => &s.counts,
            State::Collapsed(s, _) => &s.counts,
        }
    }
}

/// Train on `corpus`. When `validation` is given its documents are split in
/// halves, folded in on the first half and scored on the second every
/// `eval_every` iterations.
pub fn train(corpus: &Corpus, validation: Option<&Corpus>, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let tag = cfg.estimator_tag();
    let init_seed = derive_seed(cfg.seed, "init");
    let mut state = match (cfg.algorithm.batch(), cfg.algorithm.collapsed()) {
        (Some(b), _) => State::Batch(b, BatchState::init(corpus, cfg.topics, init_seed)?),
        (None, Some(c)) => State::Collapsed(
            CollapsedState::init(c, corpus, cfg.topics, init_seed)?,
            rng_from_seed(derive_seed(cfg.seed, "sampler")),
        ),
        _ => unreachable!(),
    };
    let val_split: Option<FoldInSplit> = match validation {
        Some(v) if cfg.eval_every > 0 => Some(fold_in_split(v, derive_seed(cfg.seed, "validation-split"))),
        _ => None,
    };
    let fold_seed = derive_seed(cfg.seed, "validation-fold-in");
    let parallel = (cfg.algorithm == Algorithm::Pcvb0).then_some(ParallelInfo {
        workers: cfg.workers,
        sync_every: cfg.sync_every,
    });

    let mut h = cfg.hyperparams;
    let mut trace = Vec::new();
    let mut seconds = 0.0;
    let mut best: Option<(f64, TopicEstimates, Hyperparams, usize)> = None;
    let mut since_best = 0;
    let early_stopping = cfg.algorithm.batch().is_some();
    let mut threshold_reached = None;
    let mut iterations_run = 0;

    for it in 1..=cfg.max_iterations {
        let start = Instant::now();
        let (objective, max_change, merges) = match &mut state {
            State::Batch(b, s) => {
                let st = batch_sweep(*b, corpus, s, &h, cfg.exec)?;
                (Some(st.objective), Some(st.max_change), None)
            }
            State::Collapsed(s, rng) => {
                if cfg.algorithm == Algorithm::Pcvb0 {
                    let st = parallel_cvb0_sweep(s, &h, cfg.workers, cfg.sync_every, cfg.exec)?;
                    (None, Some(st.max_change), Some(st.merges))
                } else {
                    let st = collapsed_sweep(s, &h, rng, true);
                    let change = (!cfg.algorithm.is_stochastic()).then_some(st.max_change);
                    (None, change, None)
                }
            }
        };
        if let Some(m) = &cfg.minka {
            if it >= m.start_iteration {
                let cm = state.counts();
                let mut next = h;
                next.alpha = minka_update_alpha(cm, &h, (m.gamma_prior.c, m.gamma_prior.d));
                next.eta = minka_update_eta(cm, &h, (m.gamma_prior.a, m.gamma_prior.b));
                if cfg.algorithm == Algorithm::Map || tag == EstimatorTag::Map {
                    if next.alpha < MAP_FLOOR || next.eta < MAP_FLOOR {
                        log::warn!("Minka step below the MAP limit; clamped");
                    }
                    next.alpha = next.alpha.max(MAP_FLOOR);
                    next.eta = next.eta.max(MAP_FLOOR);
                }
                h.alpha = next.alpha;
                h.eta = next.eta;
            }
        }
        seconds += start.elapsed().as_secs_f64();
        iterations_run = it;

        let converged = max_change.is_some_and(|c| c < cfg.tolerance);
        let mut validation_perplexity = None;
        let mut stop = converged;
        let evaluate_now = cfg.eval_every > 0 && (it % cfg.eval_every == 0 || converged || it == cfg.max_iterations);
        if let (Some(split), true) = (&val_split, evaluate_now) {
            let est = estimates_for(state.counts(), &h, tag)?;
            let folded = fold_in(&split.observed_half, &est, cfg.algorithm, &h, &cfg.fold_in, fold_seed, cfg.exec)?;
            let p = perplexity(&split.heldout_half, &[folded])?.perplexity;
            validation_perplexity = Some(p);
            if !early_stopping || best.as_ref().is_none_or(|b| p < b.0) {
                best = Some((p, est, h, it));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stop = true;
                }
            }
            if let Some(t) = cfg.stop_below {
                if p < t && threshold_reached.is_none() {
                    threshold_reached = Some((it, seconds));
                    stop = true;
                }
            }
        }
        trace.push(TraceRecord {
            iteration: it,
            objective,
            max_change,
            validation_perplexity,
            alpha: h.alpha,
            eta: h.eta,
            seconds,
            merges,
        });
        if stop {
            break;
        }
    }

    let counts = state.counts().clone();
    let (estimates, hyperparams, best_iteration, best_validation_perplexity) = match best {
        Some((p, est, bh, it)) => (est, bh, it, Some(p)),
        None => (estimates_for(&counts, &h, tag)?, h, iterations_run, None),
    };
    Ok(TrainedModel {
        algorithm: cfg.algorithm,
        estimates,
        hyperparams,
        counts,
        iterations_run,
        best_iteration,
        best_validation_perplexity,
        threshold_reached,
        seconds,
        trace,
        parallel,
    })
}
