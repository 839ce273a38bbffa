//! Held-out evaluation: fold-in of document proportions against frozen
//! topics, perplexity, class-ranking metrics and time-to-threshold runs.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::collapsed::CVB_EXPONENT_CAP;
use crate::corpus::{fold_in_split, Corpus, Entry};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model_state::{estimate_theta_row, EstimatorTag, Hyperparams, TopicEstimates};
use crate::rng::{derive_indexed, rng_from_seed};
use crate::special::digamma;
use crate::train::{train, Algorithm, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldInConfig {
    pub max_sweeps: usize,
    /// Stop once no θ̂ entry moves more than this between sweeps
    /// (deterministic learners).
    pub tolerance: f64,
}

impl Default for FoldInConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            tolerance: 1e-5,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Entry-level fold-in for ML, MAP and VB: γ_wk ∝ φ̂_wk · f(N_k) with the
/// learner's document-side factor f.
fn fold_in_entries(
    entries: &[Entry],
    phi: &[f64],
    k_: usize,
    algorithm: Algorithm,
    h: &Hyperparams,
    tag: EstimatorTag,
    cfg: &FoldInConfig,
) -> Vec<f64> {
    let total: f64 = entries.iter().map(|e| e.count as f64).sum();
    let mut n = vec![total / k_ as f64; k_];
    let mut fresh = vec![0.0; k_];
    let mut factor = vec![0.0; k_];
    let mut g = vec![0.0; k_];
    let mut theta = vec![0.0; k_];
    let mut next_theta = vec![0.0; k_];
    estimate_theta_row(&n, total, h.alpha, tag, &mut theta);
    for _ in 0..cfg.max_sweeps {
        for k in 0..k_ {
            factor[k] = match algorithm {
                Algorithm::Ml => n[k],
                Algorithm::Map => n[k] + h.alpha - 1.0,
                _ => digamma(n[k] + h.alpha).exp(),
            };
        }
        fresh.iter_mut().for_each(|x| *x = 0.0);
        for e in entries {
            let p = &phi[e.word as usize * k_..(e.word as usize + 1) * k_];
            let mut s = 0.0;
            for k in 0..k_ {
                g[k] = p[k] * factor[k];
                s += g[k];
            }
            if !(s > 0.0) {
                continue;
            }
            let c = e.count as f64 / s;
            for k in 0..k_ {
                fresh[k] += c * g[k];
            }
        }
        std::mem::swap(&mut n, &mut fresh);
        estimate_theta_row(&n, total, h.alpha, tag, &mut next_theta);
        let change = max_abs_diff(&theta, &next_theta);
        std::mem::swap(&mut theta, &mut next_theta);
        if change < cfg.tolerance {
            break;
        }
    }
    theta
}

/// Token-level fold-in for CVB and CVB0: in-place updates of the document's
/// counts, word side taken from φ̂.
fn fold_in_soft_tokens(
    entries: &[Entry],
    phi: &[f64],
    k_: usize,
    with_variance: bool,
    h: &Hyperparams,
    cfg: &FoldInConfig,
) -> Vec<f64> {
    let words: Vec<usize> = entries
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.word as usize, e.count as usize))
        .collect();
    let total = words.len() as f64;
    let mut gamma = vec![1.0 / k_ as f64; words.len() * k_];
    let mut n = vec![total / k_ as f64; k_];
    let mut v = vec![0.0; k_];
    if with_variance {
        let u = 1.0 / k_ as f64;
        v.iter_mut().for_each(|x| *x = total * u * (1.0 - u));
    }
    let mut g = vec![0.0; k_];
    let mut theta = vec![0.0; k_];
    let mut next_theta = vec![0.0; k_];
    estimate_theta_row(&n, total, h.alpha, EstimatorTag::Collapsed, &mut theta);
    for _ in 0..cfg.max_sweeps {
        for (t, &w) in words.iter().enumerate() {
            let p = &phi[w * k_..(w + 1) * k_];
            let old = &mut gamma[t * k_..(t + 1) * k_];
            let mut s = 0.0;
            for k in 0..k_ {
                n[k] = (n[k] - old[k]).max(0.0);
                let a = n[k] + h.alpha;
                let mut x = p[k] * a;
                if with_variance {
                    v[k] = (v[k] - old[k] * (1.0 - old[k])).max(0.0);
                    let e = (-v[k] / (2.0 * a * a)).max(-CVB_EXPONENT_CAP);
                    x *= e.exp();
                }
                g[k] = x;
                s += x;
            }
            for k in 0..k_ {
                let new = g[k] / s;
                old[k] = new;
                n[k] += new;
                if with_variance {
                    v[k] += new * (1.0 - new);
                }
            }
        }
        estimate_theta_row(&n, total, h.alpha, EstimatorTag::Collapsed, &mut next_theta);
        let change = max_abs_diff(&theta, &next_theta);
        std::mem::swap(&mut theta, &mut next_theta);
        if change < cfg.tolerance {
            break;
        }
    }
    theta
}

/// Gibbs fold-in: θ̂ is the average of the collapsed estimate over the second
/// half of the sweeps.
fn fold_in_gibbs(entries: &[Entry], phi: &[f64], k_: usize, h: &Hyperparams, cfg: &FoldInConfig, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let words: Vec<usize> = entries
        .iter()
        .flat_map(|e| std::iter::repeat_n(e.word as usize, e.count as usize))
        .collect();
    let total = words.len() as f64;
    let mut n = vec![0.0; k_];
    let mut z: Vec<usize> = words
        .iter()
        .map(|_| {
            let k = rng.random_range(0..k_);
            n[k] += 1.0;
            k
        })
        .collect();
    let mut cdf = vec![0.0; k_];
    let mut theta = vec![0.0; k_];
    let mut acc = vec![0.0; k_];
    let sweeps = cfg.max_sweeps.max(2);
    let burn_in = sweeps / 2;
    for sweep in 0..sweeps {
        for (t, &w) in words.iter().enumerate() {
            n[z[t]] -= 1.0;
            let p = &phi[w * k_..(w + 1) * k_];
            let mut s = 0.0;
            for k in 0..k_ {
                s += p[k] * (n[k] + h.alpha);
                cdf[k] = s;
            }
            let u = rng.random::<f64>() * s;
            let k = cdf.partition_point(|&c| c <= u).min(k_ - 1);
            z[t] = k;
            n[k] += 1.0;
        }
        if sweep >= burn_in {
            estimate_theta_row(&n, total, h.alpha, EstimatorTag::Collapsed, &mut theta);
            acc.iter_mut().zip(&theta).for_each(|(a, t)| *a += t);
        }
    }
    let m = (sweeps - burn_in) as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    acc
}

/// Learn θ̂ for the documents of `observed` with φ̂ from `model` held fixed,
/// using the document-side update of `algorithm`. Returns φ̂ (unchanged)
/// paired with the new θ̂.
pub fn fold_in(
    observed: &Corpus,
    model: &TopicEstimates,
    algorithm: Algorithm,
    h: &Hyperparams,
    cfg: &FoldInConfig,
    seed: u64,
    exec: Exec,
) -> Result<TopicEstimates> {
    if observed.vocab_size() != model.vocab_size() {
        return Err(Error::Shape(format!(
            "corpus has {} words, model has {}",
            observed.vocab_size(),
            model.vocab_size()
        )));
    }
    if algorithm == Algorithm::Map {
        h.validate_map()?;
    } else {
        h.validate()?;
    }
    let k_ = model.topics();
    let phi = &model.phi;
    let tag = model.tag;
    let rows = exec.map_range(observed.num_docs(), |j| {
        let entries = observed.doc_entries(j);
        if entries.is_empty() {
            let mut t = vec![0.0; k_];
            estimate_theta_row(&vec![0.0; k_], 0.0, h.alpha, tag, &mut t);
            return t;
        }
        match algorithm {
            Algorithm::Ml | Algorithm::Map | Algorithm::Vb => {
                fold_in_entries(entries, phi, k_, algorithm, h, tag, cfg)
            }
            Algorithm::Cvb0 | Algorithm::Pcvb0 => fold_in_soft_tokens(entries, phi, k_, false, h, cfg),
            Algorithm::Cvb => fold_in_soft_tokens(entries, phi, k_, true, h, cfg),
            Algorithm::Cgs => fold_in_gibbs(entries, phi, k_, h, cfg, derive_indexed(seed, "fold-in", j as u64)),
        }
    });
    model.with_theta(observed.num_docs(), rows.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub log_likelihood: f64,
    pub heldout_tokens: u64,
    pub estimator_tag: EstimatorTag,
    pub samples_averaged: usize,
}

/// Perplexity of `heldout` under the average of S models:
/// log p = Σ_jw N_jw log (1/S) Σ_s Σ_k θ̂ˢ_kj φ̂ˢ_wk.
pub fn perplexity(heldout: &Corpus, models: &[TopicEstimates]) -> Result<PerplexityReport> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidConfig("at least one model is needed".into()))?;
    for m in models {
        if m.num_docs() != heldout.num_docs() || m.vocab_size() != heldout.vocab_size() {
            return Err(Error::Shape(format!(
                "model covers {} docs x {} words, held-out corpus has {} x {}",
                m.num_docs(),
                m.vocab_size(),
                heldout.num_docs(),
                heldout.vocab_size()
            )));
        }
    }
    let n = heldout.total_tokens();
    if n == 0 {
        return Err(Error::EmptyHeldout);
    }
    let s = models.len() as f64;
    let mut ll = 0.0;
    for e in heldout.entries() {
        let (w, j) = (e.word as usize, e.doc as usize);
        let mut p = 0.0;
        for m in models {
            p += m.word_row(w).iter().zip(m.doc_row(j)).map(|(a, b)| a * b).sum::<f64>();
        }
        p /= s;
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::ZeroProbability { doc: j, word: w });
        }
        ll += e.count as f64 * p.ln();
    }
    Ok(PerplexityReport {
        perplexity: (-ll / n as f64).exp(),
        log_likelihood: ll,
        heldout_tokens: n,
        estimator_tag: first.tag,
        samples_averaged: models.len(),
    })
}

/// Split `corpus` into halves, fold each model in on the first half and
/// score the second.
pub fn heldout_perplexity(
    corpus: &Corpus,
    models: &[(&TopicEstimates, Hyperparams)],
    algorithm: Algorithm,
    cfg: &FoldInConfig,
    seed: u64,
    exec: Exec,
) -> Result<PerplexityReport> {
    let split = fold_in_split(corpus, derive_indexed(seed, "heldout-split", 0));
    let folded = models
        .iter()
        .enumerate()
        .map(|(s, (m, h))| {
            fold_in(&split.observed_half, m, algorithm, h, cfg, derive_indexed(seed, "heldout-fold-in", s as u64), exec)
        })
        .collect::<Result<Vec<_>>>()?;
    perplexity(&split.heldout_half, &folded)
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counted half (midrank).
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = mid;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Average precision of the ranking by descending score: the mean of the
/// precision at each positive. Tied scores are ranked by input order.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        if positive[i] {
            hits += 1.0;
            sum += hits / (r + 1) as f64;
        }
    }
    (hits > 0.0).then(|| sum / hits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub mean_auc: f64,
    pub mean_average_precision: f64,
    /// Classes that were scored, ascending.
    pub classes: Vec<usize>,
    pub per_class_auc: Vec<f64>,
    pub per_class_average_precision: Vec<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Score every test document against each class centroid of the training
/// θ̂ rows by cosine similarity, then rank one-vs-rest per class.
pub fn classify_and_score(
    train_theta: &[Vec<f64>],
    train_labels: &[usize],
    test_theta: &[Vec<f64>],
    test_labels: &[usize],
) -> Result<ClassificationReport> {
    if train_theta.len() != train_labels.len() || test_theta.len() != test_labels.len() {
        return Err(Error::Shape("one label per document is required".into()));
    }
    let dim = train_theta.first().or(test_theta.first()).map_or(0, |r| r.len());
    let num_classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let mut centroids = vec![vec![0.0; dim]; num_classes];
    let mut sizes = vec![0usize; num_classes];
    for (row, &c) in train_theta.iter().zip(train_labels) {
        sizes[c] += 1;
        centroids[c].iter_mut().zip(row).for_each(|(a, x)| *a += x);
    }
    let mut classes = Vec::new();
    let mut per_class_auc = Vec::new();
    let mut per_class_ap = Vec::new();
    for c in 0..num_classes {
        if sizes[c] == 0 {
            if test_labels.contains(&c) {
                log::warn!("class {c} has no training documents; excluded");
            }
            continue;
        }
        let centroid: Vec<f64> = centroids[c].iter().map(|x| x / sizes[c] as f64).collect();
        let scores: Vec<f64> = test_theta.iter().map(|r| cosine(r, &centroid)).collect();
        let positive: Vec<bool> = test_labels.iter().map(|&l| l == c).collect();
        if let (Some(a), Some(p)) = (auc(&scores, &positive), average_precision(&scores, &positive)) {
            classes.push(c);
            per_class_auc.push(a);
            per_class_ap.push(p);
        }
    }
    if classes.is_empty() {
        return Err(Error::InvalidConfig("no class has both positive and negative test documents".into()));
    }
    let m = classes.len() as f64;
    Ok(ClassificationReport {
        mean_auc: per_class_auc.iter().sum::<f64>() / m,
        mean_average_precision: per_class_ap.iter().sum::<f64>() / m,
        classes,
        per_class_auc,
        per_class_average_precision: per_class_ap,
    })
}

/// θ̂ rows of an estimate as separate vectors.
pub fn theta_rows(est: &TopicEstimates) -> Vec<Vec<f64>> {
    (0..est.num_docs()).map(|j| est.doc_row(j).to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub algorithm: Algorithm,
    /// Median training seconds to pass the threshold; `None` is a timeout.
    pub seconds: Option<f64>,
    /// Median sweeps needed to pass the threshold.
    pub sweeps: Option<usize>,
    /// Median training seconds per sweep.
    pub seconds_per_sweep: f64,
    pub runs: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Train each configuration `runs` times (seeds derived from its own seed)
/// until validation perplexity drops below `threshold`, and report the
/// median time and sweep count. Validation time is not counted.
pub fn timing_benchmark(
    configs: &[TrainConfig],
    train_corpus: &Corpus,
    validation: &Corpus,
    threshold: f64,
    runs: usize,
) -> Result<Vec<TimingResult>> {
    let runs = runs.max(1);
    let mut out = Vec::with_capacity(configs.len());
    for base in configs {
        let mut times = Vec::new();
        let mut sweeps = Vec::new();
        let mut per_sweep = Vec::new();
        let mut timed_out = false;
        for r in 0..runs {
            let mut cfg = base.clone();
            cfg.seed = derive_indexed(base.seed, "timing-run", r as u64);
            cfg.stop_below = Some(threshold);
            cfg.patience = usize::MAX;
            if cfg.eval_every == 0 {
                cfg.eval_every = 1;
            }
            let m = train(train_corpus, Some(validation), &cfg)?;
            per_sweep.push(m.seconds / m.iterations_run as f64);
            match m.threshold_reached {
                Some((it, s)) => {
                    times.push(s);
                    sweeps.push(it as f64);
                }
                None => timed_out = true,
            }
        }
        // a run that never passes makes the median a timeout once half fail
        let passed = times.len();
        let ok = !timed_out || passed * 2 > runs;
        out.push(TimingResult {
            algorithm: base.algorithm,
            seconds: (ok && passed > 0).then(|| median(&mut times)),
            sweeps: (ok && passed > 0).then(|| median(&mut sweeps).round() as usize),
            seconds_per_sweep: median(&mut per_sweep),
            runs,
        });
    }
    Ok(out)
}

/// One line of run metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    #[serde(rename = "K")]
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
    pub perplexity: f64,
    pub auc: Option<f64>,
    pub map: Option<f64>,
    pub seconds: f64,
}

impl RunMetrics {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Append as a CSV row, writing the header when `with_header` is set.
    pub fn append_csv<W: Write>(&self, out: W, with_header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(with_header).from_writer(out);
        w.serialize(self)?;
        w.flush()?;
        Ok(())
    }
}
