//! Run configuration: command-line flags layered over an optional TOML file
//! layered over defaults. File keys are the flag names without the leading
//! dashes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use topika::hyperopt::DEFAULT_GRID;
use topika::Algorithm;

use crate::manifest::Manifest;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with any of these options; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// UCI bag-of-words docword file
    #[arg(long)]
    pub docword: Option<PathBuf>,
    /// Vocabulary file, one word per line
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Class labels, one integer per line for each document of --docword
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// ml, map, vb, cvb, cvb0, cgs or pcvb0 (bench accepts a comma list)
    #[arg(long, value_delimiter = ',')]
    pub algo: Option<Vec<String>>,
    /// Number of topics
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Maximum training iterations
    #[arg(long)]
    pub iters: Option<usize>,
    /// Root seed; every random component derives its own seed from it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learn alpha and eta with Minka's fixed-point updates
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub minka: Option<bool>,
    /// Iteration after which the Minka updates start
    #[arg(long)]
    pub minka_start: Option<usize>,
    /// Parallel CVB0 workers
    #[arg(long)]
    pub workers: Option<usize>,
    /// Tokens per worker between count merges (parallel CVB0)
    #[arg(long)]
    pub sync_every: Option<usize>,
    /// Independent runs whose models are averaged for perplexity (train);
    /// kept sweeps (oracle-check)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated alpha grid
    #[arg(long, value_delimiter = ',')]
    pub grid_alpha: Option<Vec<f64>>,
    /// Comma-separated eta grid
    #[arg(long, value_delimiter = ',')]
    pub grid_eta: Option<Vec<f64>>,
    /// Validation perplexity to reach (bench); probed when absent
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Documents held out for testing (default D/16)
    #[arg(long)]
    pub test_docs: Option<usize>,
    /// Documents held out for validation (default D/16)
    #[arg(long)]
    pub validation_docs: Option<usize>,
    /// Model dump to evaluate; repeat to average several
    #[arg(long)]
    pub model: Option<Vec<PathBuf>>,
    /// Evaluate on every document of --docword instead of the test split
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub whole: Option<bool>,
    /// Words per topic in the top-words table
    #[arg(long)]
    pub top_words: Option<usize>,
    /// Timing runs per algorithm (bench)
    #[arg(long)]
    pub runs: Option<usize>,
}

impl RunArgs {
    /// Fill every unset field from `other`.
    fn or(self, other: RunArgs) -> RunArgs {
        RunArgs {
            config: self.config.or(other.config),
            docword: self.docword.or(other.docword),
            vocab: self.vocab.or(other.vocab),
            labels: self.labels.or(other.labels),
            algo: self.algo.or(other.algo),
            topics: self.topics.or(other.topics),
            alpha: self.alpha.or(other.alpha),
            eta: self.eta.or(other.eta),
            iters: self.iters.or(other.iters),
            seed: self.seed.or(other.seed),
            minka: self.minka.or(other.minka),
            minka_start: self.minka_start.or(other.minka_start),
            workers: self.workers.or(other.workers),
            sync_every: self.sync_every.or(other.sync_every),
            samples: self.samples.or(other.samples),
            grid_alpha: self.grid_alpha.or(other.grid_alpha),
            grid_eta: self.grid_eta.or(other.grid_eta),
            threshold: self.threshold.or(other.threshold),
            out: self.out.or(other.out),
            test_docs: self.test_docs.or(other.test_docs),
            validation_docs: self.validation_docs.or(other.validation_docs),
            model: self.model.or(other.model),
            whole: self.whole.or(other.whole),
            top_words: self.top_words.or(other.top_words),
            runs: self.runs.or(other.runs),
        }
    }
}

/// Fully resolved settings of one run, as recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Resolved {
    pub docword: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub algorithms: Vec<Algorithm>,
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub iters: usize,
    pub seed: u64,
    pub minka: bool,
    pub minka_start: usize,
    pub workers: usize,
    pub sync_every: usize,
    pub samples: usize,
    pub grid_alpha: Vec<f64>,
    pub grid_eta: Vec<f64>,
    pub threshold: Option<f64>,
    pub out: PathBuf,
    pub test_docs: Option<usize>,
    pub validation_docs: Option<usize>,
    pub models: Vec<PathBuf>,
    pub whole: bool,
    pub top_words: usize,
    pub runs: usize,
}

impl Resolved {
    /// The single algorithm of commands that train one model.
    pub fn algorithm(&self) -> anyhow::Result<Algorithm> {
        match self.algorithms.as_slice() {
            [a] => Ok(*a),
            _ => bail!("exactly one --algo is required here"),
        }
    }
}

impl From<Resolved> for RunArgs {
    fn from(r: Resolved) -> Self {
        RunArgs {
            config: None,
            docword: r.docword,
            vocab: r.vocab,
            labels: r.labels,
            algo: Some(r.algorithms.iter().map(|a| a.name().to_string()).collect()),
            topics: Some(r.topics),
            alpha: Some(r.alpha),
            eta: Some(r.eta),
            iters: Some(r.iters),
            seed: Some(r.seed),
            minka: Some(r.minka),
            minka_start: Some(r.minka_start),
            workers: Some(r.workers),
            sync_every: Some(r.sync_every),
            samples: Some(r.samples),
            grid_alpha: Some(r.grid_alpha),
            grid_eta: Some(r.grid_eta),
            threshold: r.threshold,
            out: Some(r.out),
            test_docs: r.test_docs,
            validation_docs: r.validation_docs,
            model: Some(r.models),
            whole: Some(r.whole),
            top_words: Some(r.top_words),
            runs: Some(r.runs),
        }
    }
}

/// A TOML config file, or a run manifest (`.json`) to repeat that run.
fn read_file(path: &Path) -> anyhow::Result<RunArgs> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(Manifest::read(path)?.config.into());
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Per-command defaults that differ from the common ones.
#[derive(Debug, Clone, Copy)]
pub struct Defaults<'a> {
    pub algorithms: &'a [Algorithm],
    pub topics: usize,
    pub samples: usize,
    /// alpha and eta when unset (MAP alone gets 1.1)
    pub strength: f64,
}

impl Default for Defaults<'_> {
    fn default() -> Self {
        Defaults {
            algorithms: &[],
            topics: 10,
            samples: 1,
            strength: 0.1,
        }
    }
}

/// Merge flags, config file and defaults. `threads_cap` limits the worker
/// count.
pub fn resolve(flags: RunArgs, defaults: Defaults, threads_cap: Option<usize>) -> anyhow::Result<Resolved> {
    let file = match &flags.config {
        Some(p) => read_file(p)?,
        None => RunArgs::default(),
    };
    let a = flags.or(file);
    let algorithms = match &a.algo {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Algorithm>().map_err(anyhow::Error::from))
            .collect::<anyhow::Result<Vec<_>>>()?,
        None => defaults.algorithms.to_vec(),
    };
    // MAP needs strengths above one
    let default_strength = if algorithms == [Algorithm::Map] { 1.1 } else { defaults.strength };
    let mut workers = a.workers.unwrap_or(4);
    if let Some(cap) = threads_cap {
        workers = workers.min(cap.max(1));
    }
    let topics = a.topics.unwrap_or(defaults.topics);
    if topics == 0 {
        bail!("--topics must be at least 1");
    }
    for p in [&a.docword, &a.vocab, &a.labels].into_iter().flatten() {
        if !p.exists() {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(Resolved {
        docword: a.docword,
        vocab: a.vocab,
        labels: a.labels,
        algorithms,
        topics,
        alpha: a.alpha.unwrap_or(default_strength),
        eta: a.eta.unwrap_or(default_strength),
        iters: a.iters.unwrap_or(500),
        seed: a.seed.unwrap_or(0),
        minka: a.minka.unwrap_or(false),
        minka_start: a.minka_start.unwrap_or(15),
        workers,
        sync_every: a.sync_every.unwrap_or(4096),
        samples: a.samples.unwrap_or(defaults.samples),
        grid_alpha: a.grid_alpha.unwrap_or_else(|| DEFAULT_GRID.to_vec()),
        grid_eta: a.grid_eta.unwrap_or_else(|| DEFAULT_GRID.to_vec()),
        threshold: a.threshold,
        out: a.out.unwrap_or_else(|| PathBuf::from("topika-out")),
        test_docs: a.test_docs,
        validation_docs: a.validation_docs,
        models: a.model.unwrap_or_default(),
        whole: a.whole.unwrap_or(false),
        top_words: a.top_words.unwrap_or(10),
        runs: a.runs.unwrap_or(3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cvb0() -> Defaults<'static> {
        Defaults {
            algorithms: &[Algorithm::Cvb0],
            ..Defaults::default()
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "topics = 7\nalpha = 0.3\nsync-every = 100\ngrid-eta = [0.1, 0.2]\n").unwrap();
        let flags = RunArgs {
            config: Some(cfg),
            alpha: Some(0.9),
            ..RunArgs::default()
        };
        let r = resolve(flags, cvb0(), None).unwrap();
        assert_eq!(r.topics, 7);
        assert_eq!(r.alpha, 0.9);
        assert_eq!(r.eta, 0.1);
        assert_eq!(r.sync_every, 100);
        assert_eq!(r.grid_eta, vec![0.1, 0.2]);
        assert_eq!(r.iters, 500);
        assert_eq!(r.minka_start, 15);
    }

    #[test]
    fn unknown_keys_and_threads_cap() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "topcs = 7\n").unwrap();
        let flags = RunArgs {
            config: Some(cfg),
            ..RunArgs::default()
        };
        assert!(resolve(flags, cvb0(), None).is_err());
        let r = resolve(
            RunArgs::default(),
            Defaults {
                algorithms: &[Algorithm::Pcvb0],
                ..Defaults::default()
            },
            Some(2),
        ).unwrap();
        assert_eq!(r.workers, 2);
    }
}
