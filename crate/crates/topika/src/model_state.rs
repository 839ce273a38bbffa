//! Sufficient statistics, responsibilities and point estimates.
//!
//! Dense storage throughout: word-topic counts are `W x K` row-major by
//! word, document-topic counts `D x K` row-major by document, so the `K`
//! values touched by one update are contiguous.

use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenStream};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::special::digamma;

/// Gamma prior constants for the Minka updates: η ~ G[a, b], α ~ G[c, d].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        // flat: the fixed point is the plain maximum-likelihood one
        Self {
            a: 1.0,
            b: 0.0,
            c: 1.0,
            d: 0.0,
        }
    }
}

/// Symmetric Dirichlet strengths: `alpha` on document-topic proportions,
/// `eta` on topic-word distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub eta: f64,
    #[serde(default)]
    pub gamma_prior: GammaPrior,
}

impl Hyperparams {
    pub fn new(alpha: f64, eta: f64) -> Result<Self> {
        let h = Self {
            alpha,
            eta,
            gamma_prior: GammaPrior::default(),
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// MAP needs alpha > 1 and eta > 1, otherwise its estimates can go
    /// negative.
    pub fn validate_map(&self) -> Result<()> {
        self.validate()?;
        if self.alpha <= 1.0 || self.eta <= 1.0 {
            return Err(Error::InvalidHyperparams(format!(
                "MAP requires alpha > 1 and eta > 1, got alpha = {}, eta = {}",
                self.alpha, self.eta
            )));
        }
        Ok(())
    }
}

/// The statistics shared by every learner: `n_wk`, `n_kj`, `n_k`, `n_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrices {
    topics: usize,
    vocab_size: usize,
    num_docs: usize,
    /// `W x K`, row `w` at `w * K`.
    pub n_wk: Vec<f64>,
    /// `D x K`, row `j` at `j * K`.
    pub n_kj: Vec<f64>,
    pub n_k: Vec<f64>,
    pub n_j: Vec<f64>,
}

impl CountMatrices {
    pub fn zeros(topics: usize, vocab_size: usize, num_docs: usize) -> Self {
        Self {
            topics,
            vocab_size,
            num_docs,
            n_wk: vec![0.0; vocab_size * topics],
            n_kj: vec![0.0; num_docs * topics],
            n_k: vec![0.0; topics],
            n_j: vec![0.0; num_docs],
        }
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn nwk(&self, w: usize, k: usize) -> f64 {
        self.n_wk[w * self.topics + k]
    }

    pub fn nkj(&self, k: usize, j: usize) -> f64 {
        self.n_kj[j * self.topics + k]
    }

    pub fn word_row(&self, w: usize) -> &[f64] {
        &self.n_wk[w * self.topics..(w + 1) * self.topics]
    }

    pub fn doc_row(&self, j: usize) -> &[f64] {
        &self.n_kj[j * self.topics..(j + 1) * self.topics]
    }

    pub fn total_mass(&self) -> f64 {
        self.n_k.iter().sum()
    }

    /// Add `weight * dist` for word `w` in document `j`.
    pub fn add(&mut self, w: usize, j: usize, weight: f64, dist: &[f64]) {
        let k_ = self.topics;
        let wr = &mut self.n_wk[w * k_..(w + 1) * k_];
        let dr = &mut self.n_kj[j * k_..(j + 1) * k_];
        for k in 0..k_ {
            let x = weight * dist[k];
            wr[k] += x;
            dr[k] += x;
            self.n_k[k] += x;
        }
        self.n_j[j] += weight;
    }

    /// Set `n_k` and `n_j` to the marginals of `n_wk` and `n_kj`.
    pub fn recompute_marginals(&mut self) {
        let k_ = self.topics;
        self.n_k.iter_mut().for_each(|x| *x = 0.0);
        for row in self.n_wk.chunks_exact(k_) {
            for (acc, x) in self.n_k.iter_mut().zip(row) {
                *acc += x;
            }
        }
        for (nj, row) in self.n_j.iter_mut().zip(self.n_kj.chunks_exact(k_)) {
            *nj = row.iter().sum();
        }
    }

    /// Largest relative discrepancy between the stored marginals and the
    /// sums of the full matrices.
    pub fn marginal_inconsistency(&self) -> f64 {
        let k_ = self.topics;
        let mut col = vec![0.0; k_];
        for row in self.n_wk.chunks_exact(k_) {
            for (acc, x) in col.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        let mut worst = col
            .iter()
            .zip(&self.n_k)
            .map(|(&a, &b)| rel(a, b))
            .fold(0.0, f64::max);
        for (nj, row) in self.n_j.iter().zip(self.n_kj.chunks_exact(k_)) {
            worst = worst.max(rel(row.iter().sum(), *nj));
        }
        let total_k: f64 = self.n_k.iter().sum();
        let total_j: f64 = self.n_j.iter().sum();
        worst.max(rel(total_k, total_j))
    }

    /// Largest elementwise difference against another set of counts.
    pub fn max_abs_diff(&self, other: &CountMatrices) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        d(&self.n_wk, &other.n_wk)
            .max(d(&self.n_kj, &other.n_kj))
            .max(d(&self.n_k, &other.n_k))
            .max(d(&self.n_j, &other.n_j))
    }

    /// Counts accumulated from entry-level responsibilities, each weighted by
    /// its entry count.
    pub fn from_entry_responsibilities(corpus: &Corpus, resp: &Responsibilities) -> Self {
        let mut cm = Self::zeros(resp.topics, corpus.vocab_size(), corpus.num_docs());
        for (i, e) in corpus.entries().iter().enumerate() {
            cm.add(e.word as usize, e.doc as usize, e.count as f64, resp.get(i));
        }
        cm.recompute_marginals();
        cm
    }

    /// Counts accumulated from token-level responsibilities.
    pub fn from_token_responsibilities(
        tokens: &TokenStream,
        resp: &Responsibilities,
        vocab_size: usize,
    ) -> Self {
        let num_docs = tokens.doc_offsets.len() - 1;
        let mut cm = Self::zeros(resp.topics, vocab_size, num_docs);
        for t in 0..tokens.len() {
            cm.add(
                tokens.words[t] as usize,
                tokens.docs[t] as usize,
                1.0,
                resp.get(t),
            );
        }
        cm.recompute_marginals();
        cm
    }

    /// Integer counts from hard topic assignments.
    pub fn from_assignments(
        tokens: &TokenStream,
        z: &TopicAssignments,
        topics: usize,
        vocab_size: usize,
    ) -> Self {
        let num_docs = tokens.doc_offsets.len() - 1;
        let mut cm = Self::zeros(topics, vocab_size, num_docs);
        for t in 0..tokens.len() {
            let (w, j, k) = (
                tokens.words[t] as usize,
                tokens.docs[t] as usize,
                z.z[t] as usize,
            );
            cm.n_wk[w * topics + k] += 1.0;
            cm.n_kj[j * topics + k] += 1.0;
            cm.n_k[k] += 1.0;
            cm.n_j[j] += 1.0;
        }
        cm
    }
}

/// Which unit a responsibility distribution belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// One distribution per unique (word, document) entry: ML, MAP, VB.
    Entry,
    /// One distribution per token: CVB, CVB0.
    Token,
}

/// Topic distributions γ, one `K`-vector per unit, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub layout: Layout,
    topics: usize,
    pub data: Vec<f64>,
}

impl Responsibilities {
    pub fn uniform(layout: Layout, units: usize, topics: usize) -> Self {
        Self {
            layout,
            topics,
            data: vec![1.0 / topics as f64; units * topics],
        }
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn units(&self) -> usize {
        self.data.len() / self.topics
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.topics..(i + 1) * self.topics]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.topics..(i + 1) * self.topics]
    }

    /// Largest deviation of any distribution's sum from 1, or infinity if
    /// some entry is negative or non-finite.
    pub fn normalization_error(&self) -> f64 {
        self.data
            .chunks_exact(self.topics)
            .map(|g| {
                if g.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    f64::INFINITY
                } else {
                    (g.iter().sum::<f64>() - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Per-count variances Σ γ(1 − γ) maintained by CVB.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCounts {
    pub v_wk: Vec<f64>,
    pub v_kj: Vec<f64>,
    pub v_k: Vec<f64>,
}

impl VarianceCounts {
    pub fn from_token_responsibilities(
        tokens: &TokenStream,
        resp: &Responsibilities,
        vocab_size: usize,
    ) -> Self {
        let k_ = resp.topics;
        let num_docs = tokens.doc_offsets.len() - 1;
        let mut v = Self {
            v_wk: vec![0.0; vocab_size * k_],
            v_kj: vec![0.0; num_docs * k_],
            v_k: vec![0.0; k_],
        };
        for t in 0..tokens.len() {
            let (w, j) = (tokens.words[t] as usize, tokens.docs[t] as usize);
            for (k, &g) in resp.get(t).iter().enumerate() {
                let var = g * (1.0 - g);
                v.v_wk[w * k_ + k] += var;
                v.v_kj[j * k_ + k] += var;
                v.v_k[k] += var;
            }
        }
        v
    }

    pub fn max_abs_diff(&self, other: &VarianceCounts) -> f64 {
        self.v_wk
            .iter()
            .zip(&other.v_wk)
            .chain(self.v_kj.iter().zip(&other.v_kj))
            .chain(self.v_k.iter().zip(&other.v_k))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Hard per-token topic ids, used by collapsed Gibbs sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicAssignments {
    pub z: Vec<u32>,
}

/// Which formula produced a [`TopicEstimates`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    /// Smoothed counts, (N + prior) / (total + size * prior).
    Collapsed,
    /// Mode of the Dirichlet posterior, (N + prior − 1) / (...).
    Map,
    /// exp(ψ(N + prior)) normalised.
    VbAlternative,
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorTag::Collapsed => "collapsed",
            EstimatorTag::Map => "map",
            EstimatorTag::VbAlternative => "vb_alternative",
        })
    }
}

/// Point estimates of topic-word (`phi`, columns over words sum to one) and
/// document-topic (`theta`, columns over topics sum to one) distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicEstimates {
    topics: usize,
    vocab_size: usize,
    num_docs: usize,
    /// `W x K`, row `w` at `w * K`.
    pub phi: Vec<f64>,
    /// `D x K`, row `j` at `j * K`.
    pub theta: Vec<f64>,
    pub tag: EstimatorTag,
}

impl TopicEstimates {
    pub fn from_parts(
        topics: usize,
        vocab_size: usize,
        num_docs: usize,
        phi: Vec<f64>,
        theta: Vec<f64>,
        tag: EstimatorTag,
    ) -> Result<Self> {
        if phi.len() != vocab_size * topics || theta.len() != num_docs * topics {
            return Err(Error::Shape(format!(
                "phi has {} values, theta {}; expected {} and {}",
                phi.len(),
                theta.len(),
                vocab_size * topics,
                num_docs * topics
            )));
        }
        Ok(Self {
            topics,
            vocab_size,
            num_docs,
            phi,
            theta,
            tag,
        })
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn phi(&self, w: usize, k: usize) -> f64 {
        self.phi[w * self.topics + k]
    }

    pub fn theta(&self, k: usize, j: usize) -> f64 {
        self.theta[j * self.topics + k]
    }

    pub fn word_row(&self, w: usize) -> &[f64] {
        &self.phi[w * self.topics..(w + 1) * self.topics]
    }

    pub fn doc_row(&self, j: usize) -> &[f64] {
        &self.theta[j * self.topics..(j + 1) * self.topics]
    }

    /// Replace the document side, keeping phi. Used after fold-in.
    pub fn with_theta(&self, num_docs: usize, theta: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            self.topics,
            self.vocab_size,
            num_docs,
            self.phi.clone(),
            theta,
            self.tag,
        )
    }

    /// Largest deviation of a phi or theta column sum from one; infinity if
    /// any entry is not strictly positive.
    pub fn normalization_error(&self) -> f64 {
        if self.phi.iter().chain(&self.theta).any(|x| !(*x > 0.0)) {
            return f64::INFINITY;
        }
        let k_ = self.topics;
        let mut col = vec![0.0; k_];
        for row in self.phi.chunks_exact(k_) {
            for (acc, x) in col.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let phi_err = col.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        let theta_err = self
            .theta
            .chunks_exact(k_)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        phi_err.max(theta_err)
    }
}

/// φ̂ from word-topic counts with one of the estimators.
pub fn estimate_phi(cm: &CountMatrices, h: &Hyperparams, tag: EstimatorTag) -> Vec<f64> {
    let (k_, w_) = (cm.topics, cm.vocab_size as f64);
    let mut phi = vec![0.0; cm.n_wk.len()];
    match tag {
        EstimatorTag::Collapsed => {
            let denom: Vec<f64> = cm.n_k.iter().map(|n| n + w_ * h.eta).collect();
            for (out, row) in phi.chunks_exact_mut(k_).zip(cm.n_wk.chunks_exact(k_)) {
                for k in 0..k_ {
                    out[k] = (row[k] + h.eta) / denom[k];
                }
            }
        }
        EstimatorTag::Map => {
            let denom: Vec<f64> = cm.n_k.iter().map(|n| n + w_ * h.eta - w_).collect();
            for (out, row) in phi.chunks_exact_mut(k_).zip(cm.n_wk.chunks_exact(k_)) {
                for k in 0..k_ {
                    out[k] = (row[k] + h.eta - 1.0) / denom[k];
                }
            }
        }
        EstimatorTag::VbAlternative => {
            let denom: Vec<f64> = cm.n_k.iter().map(|n| digamma(n + w_ * h.eta)).collect();
            let mut col = vec![0.0; k_];
            for (out, row) in phi.chunks_exact_mut(k_).zip(cm.n_wk.chunks_exact(k_)) {
                for k in 0..k_ {
                    out[k] = (digamma(row[k] + h.eta) - denom[k]).exp();
                    col[k] += out[k];
                }
            }
            for out in phi.chunks_exact_mut(k_) {
                for k in 0..k_ {
                    out[k] /= col[k];
                }
            }
        }
    }
    phi
}

/// θ̂ for one document from its topic counts.
pub fn estimate_theta_row(
    doc_counts: &[f64],
    doc_total: f64,
    alpha: f64,
    tag: EstimatorTag,
    out: &mut [f64],
) {
    let k_ = doc_counts.len() as f64;
    match tag {
        EstimatorTag::Collapsed => {
            let denom = doc_total + k_ * alpha;
            for (o, n) in out.iter_mut().zip(doc_counts) {
                *o = (n + alpha) / denom;
            }
        }
        EstimatorTag::Map => {
            let denom = doc_total + k_ * alpha - k_;
            for (o, n) in out.iter_mut().zip(doc_counts) {
                *o = (n + alpha - 1.0) / denom;
            }
        }
        EstimatorTag::VbAlternative => {
            let denom = digamma(doc_total + k_ * alpha);
            for (o, n) in out.iter_mut().zip(doc_counts) {
                *o = (digamma(n + alpha) - denom).exp();
            }
            let s: f64 = out.iter().sum();
            out.iter_mut().for_each(|o| *o /= s);
        }
    }
}

fn estimate_theta(cm: &CountMatrices, h: &Hyperparams, tag: EstimatorTag) -> Vec<f64> {
    let k_ = cm.topics;
    let mut theta = vec![0.0; cm.n_kj.len()];
    for (j, out) in theta.chunks_exact_mut(k_).enumerate() {
        estimate_theta_row(cm.doc_row(j), cm.n_j[j], h.alpha, tag, out);
    }
    theta
}

fn estimate(cm: &CountMatrices, h: &Hyperparams, tag: EstimatorTag) -> TopicEstimates {
    TopicEstimates {
        topics: cm.topics,
        vocab_size: cm.vocab_size,
        num_docs: cm.num_docs,
        phi: estimate_phi(cm, h, tag),
        theta: estimate_theta(cm, h, tag),
        tag,
    }
}

/// φ̂_wk = (N_wk + η)/(N_k + Wη), θ̂_kj = (N_kj + α)/(N_j + Kα).
pub fn estimate_collapsed(cm: &CountMatrices, h: &Hyperparams) -> TopicEstimates {
    estimate(cm, h, EstimatorTag::Collapsed)
}

/// φ̂_wk = (N_wk + η − 1)/(N_k + Wη − W), θ̂_kj = (N_kj + α − 1)/(N_j + Kα − K).
/// Rejects α ≤ 1 or η ≤ 1.
pub fn estimate_map(cm: &CountMatrices, h: &Hyperparams) -> Result<TopicEstimates> {
    h.validate_map()?;
    Ok(estimate(cm, h, EstimatorTag::Map))
}

/// φ̂_wk ∝ exp(ψ(N_wk + η))/exp(ψ(N_k + Wη)) and θ̂ analogously, each
/// column normalised.
pub fn estimate_vb_alternative(cm: &CountMatrices, h: &Hyperparams) -> TopicEstimates {
    estimate(cm, h, EstimatorTag::VbAlternative)
}

fn dirichlet_one(rng: &mut impl rand::Rng, out: &mut [f64]) {
    let mut s = 0.0;
    for o in out.iter_mut() {
        let x: f64 = Exp1.sample(rng);
        *o = x;
        s += x;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Random responsibilities drawn uniformly from the simplex (Dirichlet(1)),
/// together with the counts they induce.
pub fn init_random(
    corpus: &Corpus,
    topics: usize,
    layout: Layout,
    seed: u64,
) -> Result<(Responsibilities, CountMatrices)> {
    if topics == 0 {
        return Err(Error::InvalidConfig("number of topics must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    match layout {
        Layout::Entry => {
            let mut resp = Responsibilities::uniform(layout, corpus.nnz(), topics);
            for g in resp.data.chunks_exact_mut(topics) {
                dirichlet_one(&mut rng, g);
            }
            let cm = CountMatrices::from_entry_responsibilities(corpus, &resp);
            Ok((resp, cm))
        }
        Layout::Token => {
            let tokens = corpus.tokens();
            let mut resp = Responsibilities::uniform(layout, tokens.len(), topics);
            for g in resp.data.chunks_exact_mut(topics) {
                dirichlet_one(&mut rng, g);
            }
            let cm = CountMatrices::from_token_responsibilities(&tokens, &resp, corpus.vocab_size());
            Ok((resp, cm))
        }
    }
}

/// Uniformly random hard assignments and their integer counts.
pub fn init_assignments(
    tokens: &TokenStream,
    topics: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<(TopicAssignments, CountMatrices)> {
    if topics == 0 {
        return Err(Error::InvalidConfig("number of topics must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let z = TopicAssignments {
        z: (0..tokens.len())
            .map(|_| rng.random_range(0..topics as u32))
            .collect(),
    };
    let cm = CountMatrices::from_assignments(tokens, &z, topics, vocab_size);
    Ok((z, cm))
}

/// Metadata stored alongside a model dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    #[serde(rename = "W")]
    pub vocab_size: usize,
    #[serde(rename = "K")]
    pub topics: usize,
    #[serde(rename = "D")]
    pub num_docs: usize,
    pub alpha: f64,
    pub eta: f64,
    pub estimator_tag: EstimatorTag,
    pub algorithm: String,
    pub iterations: usize,
    pub seed: u64,
}

/// Self-describing JSON model dump: the header, `phi` as `W` rows of `K`
/// values and `theta` as `K` rows of `D` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub format: String,
    pub header: ModelHeader,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

pub const MODEL_FORMAT: &str = "topika-model/1";

impl ModelDump {
    pub fn new(header: ModelHeader, est: &TopicEstimates) -> Self {
        let k_ = est.topics;
        let phi = est.phi.chunks_exact(k_).map(<[f64]>::to_vec).collect();
        let theta = (0..k_)
            .map(|k| (0..est.num_docs).map(|j| est.theta(k, j)).collect())
            .collect();
        Self {
            format: MODEL_FORMAT.to_string(),
            header,
            phi,
            theta,
        }
    }

    pub fn estimates(&self) -> Result<TopicEstimates> {
        let h = &self.header;
        if self.format != MODEL_FORMAT {
            return Err(Error::Shape(format!("unknown model format {:?}", self.format)));
        }
        if self.phi.len() != h.vocab_size
            || self.phi.iter().any(|r| r.len() != h.topics)
            || self.theta.len() != h.topics
            || self.theta.iter().any(|r| r.len() != h.num_docs)
        {
            return Err(Error::Shape("model tables disagree with header".into()));
        }
        let phi = self.phi.concat();
        let mut theta = vec![0.0; h.num_docs * h.topics];
        for (k, row) in self.theta.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                theta[j * h.topics + k] = x;
            }
        }
        TopicEstimates::from_parts(h.topics, h.vocab_size, h.num_docs, phi, theta, h.estimator_tag)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }
}

#[derive(Debug, Serialize)]
struct TopWordRow<'a> {
    topic: usize,
    rank: usize,
    word_id: usize,
    word: &'a str,
    probability: f64,
}

/// CSV of the `m` most probable words of every topic.
pub fn write_top_words<W: Write>(
    est: &TopicEstimates,
    vocab: Option<&[String]>,
    m: usize,
    out: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut order: Vec<usize> = (0..est.vocab_size).collect();
    for k in 0..est.topics {
        order.sort_by(|&a, &b| est.phi(b, k).total_cmp(&est.phi(a, k)).then(a.cmp(&b)));
        for (rank, &w) in order.iter().take(m).enumerate() {
            wtr.serialize(TopWordRow {
                topic: k,
                rank: rank + 1,
                word_id: w,
                word: vocab.and_then(|v| v.get(w)).map_or("", String::as_str),
                probability: est.phi(w, k),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}
