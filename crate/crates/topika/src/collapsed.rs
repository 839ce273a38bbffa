//! Collapsed learners: Gibbs sampling (CGS), collapsed variational Bayes
//! (CVB) and its zeroth-order form (CVB0).
//!
//! All three visit tokens in document-major order and update the counts in
//! place after every token. The counts used for token `ij` exclude that
//! token's own contribution unless `remove_current_token` is off, as in the
//! parallel CVB0 sweep.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TokenStream};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model_state::{
    init_assignments, init_random, CountMatrices, Hyperparams, Layout, Responsibilities,
    TopicAssignments, VarianceCounts,
};
use crate::rng::{rng_from_seed, Rng};

/// Cap on the magnitude of the CVB second-order exponent.
pub const CVB_EXPONENT_CAP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollapsedAlgorithm {
    Cgs,
    Cvb,
    Cvb0,
}

/// Settings specific to the collapsed learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapsedConfig {
    /// Worker shards for parallel CVB0.
    pub workers: usize,
    /// Tokens each worker processes between count merges.
    pub sync_every: usize,
    /// Subtract the current token from the counts before updating it.
    pub remove_current_token: bool,
}

impl Default for CollapsedConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            sync_every: 4096,
            remove_current_token: true,
        }
    }
}

impl CollapsedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.sync_every == 0 {
            return Err(Error::InvalidConfig("sync_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-token latent state.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    /// CVB0: one distribution per token.
    Soft(Responsibilities),
    /// CVB: distributions plus variance counts.
    SoftWithVariance(Responsibilities, VarianceCounts),
    /// CGS: one topic per token.
    Hard(TopicAssignments),
}

#[derive(Debug, Clone)]
pub struct CollapsedState {
    pub tokens: TokenStream,
    pub counts: CountMatrices,
    pub latent: Latent,
}

impl CollapsedState {
    /// CVB/CVB0 start from Dirichlet(1) token responsibilities, CGS from
    /// uniform random assignments.
    pub fn init(
        algorithm: CollapsedAlgorithm,
        corpus: &Corpus,
        topics: usize,
        seed: u64,
    ) -> Result<Self> {
        let tokens = corpus.tokens();
        match algorithm {
            CollapsedAlgorithm::Cgs => {
                let (z, counts) = init_assignments(&tokens, topics, corpus.vocab_size(), seed)?;
                Ok(Self {
                    tokens,
                    counts,
                    latent: Latent::Hard(z),
                })
            }
            CollapsedAlgorithm::Cvb0 | CollapsedAlgorithm::Cvb => {
                let (resp, counts) = init_random(corpus, topics, Layout::Token, seed)?;
                let latent = if algorithm == CollapsedAlgorithm::Cvb {
                    let v = VarianceCounts::from_token_responsibilities(
                        &tokens,
                        &resp,
                        corpus.vocab_size(),
                    );
                    Latent::SoftWithVariance(resp, v)
                } else {
                    Latent::Soft(resp)
                };
                Ok(Self {
                    tokens,
                    counts,
                    latent,
                })
            }
        }
    }

    pub fn responsibilities(&self) -> Option<&Responsibilities> {
        match &self.latent {
            Latent::Soft(r) | Latent::SoftWithVariance(r, _) => Some(r),
            Latent::Hard(_) => None,
        }
    }

    /// Counts rebuilt from scratch out of the latent state.
    pub fn rebuilt_counts(&self) -> CountMatrices {
        let w = self.counts.vocab_size();
        match &self.latent {
            Latent::Soft(r) | Latent::SoftWithVariance(r, _) => {
                CountMatrices::from_token_responsibilities(&self.tokens, r, w)
            }
            Latent::Hard(z) => {
                CountMatrices::from_assignments(&self.tokens, z, self.counts.topics(), w)
            }
        }
    }
}

/// Unnormalised CGS conditional
/// (N_wk + η)/(N_k + Wη) · (N_kj + α), with counts already excluding the
/// token being resampled.
pub fn cgs_conditional(w: usize, j: usize, cm: &CountMatrices, h: &Hyperparams, out: &mut [f64]) {
    let w_eta = cm.vocab_size() as f64 * h.eta;
    let (wr, dr) = (cm.word_row(w), cm.doc_row(j));
    for (k, o) in out.iter_mut().enumerate() {
        *o = (wr[k] + h.eta) / (cm.n_k[k] + w_eta) * (dr[k] + h.alpha);
    }
}

/// Unnormalised CVB0 update, the same expression as [`cgs_conditional`]
/// used deterministically.
pub fn cvb0_conditional(w: usize, j: usize, cm: &CountMatrices, h: &Hyperparams, out: &mut [f64]) {
    let w_eta = cm.vocab_size() as f64 * h.eta;
    let k_ = out.len();
    let wr = &cm.n_wk[w * k_..(w + 1) * k_];
    let dr = &cm.n_kj[j * k_..(j + 1) * k_];
    for k in 0..k_ {
        out[k] = (wr[k] + h.eta) * (dr[k] + h.alpha) / (cm.n_k[k] + w_eta);
    }
}

/// Subtract `weight * dist` from the counts of (w, j), clamping rounding
/// residue at zero.
fn remove_soft(cm: &mut CountMatrices, w: usize, j: usize, dist: &[f64]) {
    let k_ = dist.len();
    for k in 0..k_ {
        let a = &mut cm.n_wk[w * k_ + k];
        *a = (*a - dist[k]).max(0.0);
        let b = &mut cm.n_kj[j * k_ + k];
        *b = (*b - dist[k]).max(0.0);
        let c = &mut cm.n_k[k];
        *c = (*c - dist[k]).max(0.0);
    }
    cm.n_j[j] = (cm.n_j[j] - 1.0).max(0.0);
}

fn add_soft(cm: &mut CountMatrices, w: usize, j: usize, dist: &[f64]) {
    let k_ = dist.len();
    for k in 0..k_ {
        cm.n_wk[w * k_ + k] += dist[k];
        cm.n_kj[j * k_ + k] += dist[k];
        cm.n_k[k] += dist[k];
    }
    cm.n_j[j] += 1.0;
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One CVB0 token update. `gamma` holds the token's current distribution
/// and receives the new one; the counts are updated to match. Returns the
/// largest change in `gamma`.
pub fn cvb0_step(
    w: usize,
    j: usize,
    gamma: &mut [f64],
    cm: &mut CountMatrices,
    h: &Hyperparams,
    remove_current_token: bool,
    scratch: &mut [f64],
) -> f64 {
    if remove_current_token {
        remove_soft(cm, w, j, gamma);
        cvb0_conditional(w, j, cm, h, scratch);
        normalize(scratch);
        add_soft(cm, w, j, scratch);
    } else {
        cvb0_conditional(w, j, cm, h, scratch);
        normalize(scratch);
        let k_ = gamma.len();
        for k in 0..k_ {
            let d = scratch[k] - gamma[k];
            cm.n_wk[w * k_ + k] += d;
            cm.n_kj[j * k_ + k] += d;
            cm.n_k[k] += d;
        }
    }
    let change = max_abs_diff(gamma, scratch);
    gamma.copy_from_slice(scratch);
    change
}

/// The CVB second-order multiplier for topic `k`, before capping:
/// −V_kj/2(N_kj+α)² − V_wk/2(N_wk+η)² + V_k/2(N_k+Wη)².
#[inline]
fn cvb_exponent(nkj_a: f64, vkj: f64, nwk_e: f64, vwk: f64, nk_we: f64, vk: f64) -> f64 {
    -vkj / (2.0 * nkj_a * nkj_a) - vwk / (2.0 * nwk_e * nwk_e) + vk / (2.0 * nk_we * nk_we)
}

/// Unnormalised CVB update for counts and variances that already exclude the
/// token. Returns how many exponents hit the ±50 cap.
pub fn cvb_conditional(
    w: usize,
    j: usize,
    cm: &CountMatrices,
    var: &VarianceCounts,
    h: &Hyperparams,
    out: &mut [f64],
) -> usize {
    let k_ = out.len();
    let w_eta = cm.vocab_size() as f64 * h.eta;
    let mut clamped = 0;
    for k in 0..k_ {
        let nwk_e = cm.n_wk[w * k_ + k] + h.eta;
        let nkj_a = cm.n_kj[j * k_ + k] + h.alpha;
        let nk_we = cm.n_k[k] + w_eta;
        let mut x = cvb_exponent(
            nkj_a,
            var.v_kj[j * k_ + k],
            nwk_e,
            var.v_wk[w * k_ + k],
            nk_we,
            var.v_k[k],
        );
        if x.abs() > CVB_EXPONENT_CAP {
            x = x.clamp(-CVB_EXPONENT_CAP, CVB_EXPONENT_CAP);
            clamped += 1;
        }
        out[k] = nwk_e / nk_we * nkj_a * x.exp();
    }
    clamped
}

fn add_variance(var: &mut VarianceCounts, w: usize, j: usize, dist: &[f64], sign: f64) {
    let k_ = dist.len();
    for (k, &g) in dist.iter().enumerate() {
        let v = sign * g * (1.0 - g);
        let a = &mut var.v_wk[w * k_ + k];
        *a = (*a + v).max(0.0);
        let b = &mut var.v_kj[j * k_ + k];
        *b = (*b + v).max(0.0);
        let c = &mut var.v_k[k];
        *c = (*c + v).max(0.0);
    }
}

/// One CVB token update with variance bookkeeping. Returns the largest
/// change in `gamma` and the number of capped exponents.
#[allow(clippy::too_many_arguments)]
pub fn cvb_step(
    w: usize,
    j: usize,
    gamma: &mut [f64],
    cm: &mut CountMatrices,
    var: &mut VarianceCounts,
    h: &Hyperparams,
    scratch: &mut [f64],
) -> (f64, usize) {
    remove_soft(cm, w, j, gamma);
    add_variance(var, w, j, gamma, -1.0);
    let clamped = cvb_conditional(w, j, cm, var, h, scratch);
    normalize(scratch);
    add_soft(cm, w, j, scratch);
    add_variance(var, w, j, scratch, 1.0);
    let change = max_abs_diff(gamma, scratch);
    gamma.copy_from_slice(scratch);
    (change, clamped)
}

/// One CGS token update: remove the token, sample a topic from the
/// conditional, add it back. Returns the new topic.
pub fn cgs_step(
    w: usize,
    j: usize,
    z: &mut u32,
    cm: &mut CountMatrices,
    h: &Hyperparams,
    rng: &mut Rng,
    scratch: &mut [f64],
) -> u32 {
    let k_ = scratch.len();
    let old = *z as usize;
    cm.n_wk[w * k_ + old] -= 1.0;
    cm.n_kj[j * k_ + old] -= 1.0;
    cm.n_k[old] -= 1.0;
    cm.n_j[j] -= 1.0;

    cgs_conditional(w, j, cm, h, scratch);
    let mut total = 0.0;
    for s in scratch.iter_mut() {
        total += *s;
        *s = total;
    }
    let u = rng.random::<f64>() * total;
    let k = scratch.partition_point(|&c| c <= u).min(k_ - 1);

    cm.n_wk[w * k_ + k] += 1.0;
    cm.n_kj[j * k_ + k] += 1.0;
    cm.n_k[k] += 1.0;
    cm.n_j[j] += 1.0;
    *z = k as u32;
    k as u32
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CollapsedStats {
    /// Largest responsibility change (CVB, CVB0).
    pub max_change: f64,
    /// Tokens whose topic changed (CGS).
    pub reassigned: usize,
    /// CVB exponents that hit the cap.
    pub clamped_exponents: usize,
}

/// One in-place pass over all tokens in document-major order.
pub fn collapsed_sweep(
    state: &mut CollapsedState,
    h: &Hyperparams,
    rng: &mut Rng,
    remove_current_token: bool,
) -> CollapsedStats {
    let k_ = state.counts.topics();
    let mut scratch = vec![0.0; k_];
    let mut stats = CollapsedStats::default();
    let CollapsedState {
        tokens,
        counts,
        latent,
    } = state;
    match latent {
        Latent::Soft(resp) => {
            for t in 0..tokens.len() {
                let (w, j) = (tokens.words[t] as usize, tokens.docs[t] as usize);
                let c = cvb0_step(w, j, resp.get_mut(t), counts, h, remove_current_token, &mut scratch);
                stats.max_change = stats.max_change.max(c);
            }
        }
        Latent::SoftWithVariance(resp, var) => {
            for t in 0..tokens.len() {
                let (w, j) = (tokens.words[t] as usize, tokens.docs[t] as usize);
                let (c, n) = cvb_step(w, j, resp.get_mut(t), counts, var, h, &mut scratch);
                stats.max_change = stats.max_change.max(c);
                stats.clamped_exponents += n;
            }
            if stats.clamped_exponents > 0 {
                log::warn!(
                    "{} CVB exponents capped at ±{CVB_EXPONENT_CAP}",
                    stats.clamped_exponents
                );
            }
        }
        Latent::Hard(z) => {
            for t in 0..tokens.len() {
                let (w, j) = (tokens.words[t] as usize, tokens.docs[t] as usize);
                let old = z.z[t];
                if cgs_step(w, j, &mut z.z[t], counts, h, rng, &mut scratch) != old {
                    stats.reassigned += 1;
                }
            }
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParallelStats {
    pub max_change: f64,
    /// Count merges performed during the sweep.
    pub merges: usize,
    /// Worst relative deviation of total topic mass from the token count,
    /// checked after every merge.
    pub max_mass_error: f64,
}

/// Contiguous document ranges with roughly equal token counts.
fn shard_docs(tokens: &TokenStream, workers: usize) -> Vec<(usize, usize)> {
    let num_docs = tokens.doc_offsets.len() - 1;
    let n = tokens.len();
    let mut bounds = vec![0usize];
    let mut d = 0;
    for s in 1..workers {
        let target = n * s / workers;
        while d < num_docs && tokens.doc_offsets[d] < target {
            d += 1;
        }
        d = d.max(*bounds.last().unwrap());
        bounds.push(d);
    }
    bounds.push(num_docs);
    bounds.windows(2).map(|b| (b[0], b[1])).collect()
}

struct Worker<'a> {
    first_doc: usize,
    first_token: usize,
    cursor: usize,
    end: usize,
    resp: &'a mut [f64],
    n_kj: &'a mut [f64],
    local_wk: Vec<f64>,
    local_k: Vec<f64>,
    delta_wk: Vec<f64>,
    delta_k: Vec<f64>,
    touched: Vec<u32>,
    is_touched: Vec<bool>,
    max_change: f64,
}

impl Worker<'_> {
    fn run_epoch(&mut self, tokens: &TokenStream, h: &Hyperparams, budget: usize, w_eta: f64) {
        let k_ = self.local_k.len();
        let mut scratch = vec![0.0; k_];
        let stop = (self.cursor + budget).min(self.end);
        for t in self.cursor..stop {
            let w = tokens.words[t] as usize;
            let jl = tokens.docs[t] as usize - self.first_doc;
            let g = &mut self.resp[(t - self.first_token) * k_..(t - self.first_token + 1) * k_];
            let wr = &mut self.local_wk[w * k_..(w + 1) * k_];
            let dr = &mut self.n_kj[jl * k_..(jl + 1) * k_];
            let mut s = 0.0;
            for k in 0..k_ {
                let x = (wr[k] + h.eta) * (dr[k] + h.alpha) / (self.local_k[k] + w_eta);
                scratch[k] = x;
                s += x;
            }
            let dw = &mut self.delta_wk[w * k_..(w + 1) * k_];
            for k in 0..k_ {
                let new = scratch[k] / s;
                let d = new - g[k];
                self.max_change = self.max_change.max(d.abs());
                wr[k] += d;
                dr[k] += d;
                self.local_k[k] += d;
                dw[k] += d;
                self.delta_k[k] += d;
                g[k] = new;
            }
            if !self.is_touched[w] {
                self.is_touched[w] = true;
                self.touched.push(w as u32);
            }
        }
        self.cursor = stop;
    }
}

/// One CVB0 sweep over token shards processed concurrently.
///
/// Documents are split into `workers` contiguous shards. Each worker owns its
/// documents' topic counts and responsibilities and keeps a private copy of
/// the word-topic counts. After every `sync_every` tokens per worker the
/// private deltas are added into the global counts (in worker order) and
/// every private copy is refreshed. The current token is not removed from the
/// counts. The result is independent of thread scheduling.
pub fn parallel_cvb0_sweep(
    state: &mut CollapsedState,
    h: &Hyperparams,
    workers: usize,
    sync_every: usize,
    exec: Exec,
) -> Result<ParallelStats> {
    CollapsedConfig {
        workers,
        sync_every,
        remove_current_token: false,
    }
    .validate()?;
    let CollapsedState {
        tokens,
        counts,
        latent,
    } = state;
    let resp = match latent {
        Latent::Soft(r) => r,
        _ => {
            return Err(Error::InvalidConfig(
                "parallel CVB0 needs token responsibilities without variances".into(),
            ))
        }
    };
    let k_ = counts.topics();
    let vocab = counts.vocab_size();
    let w_eta = vocab as f64 * h.eta;
    let total = tokens.len() as f64;

    let shards = shard_docs(tokens, workers);
    let mut pool: Vec<Worker> = Vec::with_capacity(shards.len());
    {
        let mut resp_rest: &mut [f64] = &mut resp.data;
        let mut nkj_rest: &mut [f64] = &mut counts.n_kj;
        for &(d0, d1) in &shards {
            let (t0, t1) = (tokens.doc_offsets[d0], tokens.doc_offsets[d1]);
            let (r, rr) = std::mem::take(&mut resp_rest).split_at_mut((t1 - t0) * k_);
            let (n, nr) = std::mem::take(&mut nkj_rest).split_at_mut((d1 - d0) * k_);
            resp_rest = rr;
            nkj_rest = nr;
            pool.push(Worker {
                first_doc: d0,
                first_token: t0,
                cursor: t0,
                end: t1,
                resp: r,
                n_kj: n,
                local_wk: counts.n_wk.clone(),
                local_k: counts.n_k.clone(),
                delta_wk: vec![0.0; vocab * k_],
                delta_k: vec![0.0; k_],
                touched: Vec::new(),
                is_touched: vec![false; vocab],
                max_change: 0.0,
            });
        }
    }

    let mut stats = ParallelStats::default();
    let mut union: Vec<u32> = Vec::new();
    let mut in_union = vec![false; vocab];
    while pool.iter().any(|wk| wk.cursor < wk.end) {
        exec.for_each_mut(&mut pool, |wk| wk.run_epoch(tokens, h, sync_every, w_eta));

        // serialized merge in worker order
        union.clear();
        for wk in pool.iter_mut() {
            for &w in &wk.touched {
                let w = w as usize;
                let (g, d) = (
                    &mut counts.n_wk[w * k_..(w + 1) * k_],
                    &mut wk.delta_wk[w * k_..(w + 1) * k_],
                );
                for k in 0..k_ {
                    g[k] += d[k];
                    d[k] = 0.0;
                }
                wk.is_touched[w] = false;
                if !in_union[w] {
                    in_union[w] = true;
                    union.push(w as u32);
                }
            }
            wk.touched.clear();
            for k in 0..k_ {
                counts.n_k[k] += wk.delta_k[k];
                wk.delta_k[k] = 0.0;
            }
        }
        for &w in &union {
            in_union[w as usize] = false;
        }
        let global_wk = &counts.n_wk;
        let global_k = &counts.n_k;
        exec.for_each_mut(&mut pool, |wk| {
            for &w in &union {
                let w = w as usize;
                wk.local_wk[w * k_..(w + 1) * k_].copy_from_slice(&global_wk[w * k_..(w + 1) * k_]);
            }
            wk.local_k.copy_from_slice(global_k);
        });
        stats.merges += 1;
        let mass: f64 = counts.n_k.iter().sum();
        stats.max_mass_error = stats.max_mass_error.max((mass - total).abs() / total.max(1.0));
    }
    stats.max_change = pool.iter().map(|wk| wk.max_change).fold(0.0, f64::max);
    Ok(stats)
}

/// Exact posterior quantities for a tiny corpus, by enumerating every topic
/// assignment.
#[derive(Debug, Clone)]
pub struct CallenReport {
    /// P(z_i = k | x) for each token `i` (document-major order).
    pub marginals: Vec<Vec<f64>>,
    /// P(z_i = z_i' | x) for each token pair.
    pub coassignment: Vec<Vec<f64>>,
    /// Largest gap between a marginal and the posterior expectation of the
    /// normalised collapsed conditional for that token.
    pub identity_residual: f64,
}

/// Upper bound on K^N for [`callen_oracle`].
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// Enumerate all K^N assignments, weight each by the collapsed joint and
/// return exact token marginals, pairwise co-assignment probabilities and the
/// residual of the self-consistency identity
/// P(z_i = k | x) = E_{p(z^{-i}|x)}[normalised (N_wk+η)(N_kj+α)/(N_k+Wη)].
pub fn callen_oracle(corpus: &Corpus, topics: usize, h: &Hyperparams) -> Result<CallenReport> {
    h.validate()?;
    let tokens = corpus.tokens();
    let n = tokens.len();
    let configs = (topics as u64).checked_pow(n as u32);
    let configs = match configs {
        Some(c) if c <= ENUMERATION_LIMIT => c as usize,
        _ => {
            return Err(Error::EnumerationTooLarge {
                topics,
                tokens: n,
                limit: ENUMERATION_LIMIT,
            })
        }
    };
    let (k_, w_) = (topics, corpus.vocab_size());
    let w_eta = w_ as f64 * h.eta;
    let k_alpha = k_ as f64 * h.alpha;

    let mut marg = vec![vec![0.0; k_]; n];
    let mut expect = vec![vec![0.0; k_]; n];
    let mut co = vec![vec![0.0; n]; n];
    let mut z = vec![0usize; n];
    let mut cm = CountMatrices::zeros(k_, w_, corpus.num_docs());
    let mut cond = vec![0.0; k_];
    let mut norm = 0.0;

    for _ in 0..configs {
        // joint by the sequential urn scheme
        cm.n_wk.iter_mut().for_each(|x| *x = 0.0);
        cm.n_kj.iter_mut().for_each(|x| *x = 0.0);
        cm.n_k.iter_mut().for_each(|x| *x = 0.0);
        cm.n_j.iter_mut().for_each(|x| *x = 0.0);
        let mut p = 1.0;
        for i in 0..n {
            let (w, j, k) = (tokens.words[i] as usize, tokens.docs[i] as usize, z[i]);
            p *= (cm.n_wk[w * k_ + k] + h.eta) / (cm.n_k[k] + w_eta)
                * (cm.n_kj[j * k_ + k] + h.alpha)
                / (cm.n_j[j] + k_alpha);
            cm.n_wk[w * k_ + k] += 1.0;
            cm.n_kj[j * k_ + k] += 1.0;
            cm.n_k[k] += 1.0;
            cm.n_j[j] += 1.0;
        }
        norm += p;
        for i in 0..n {
            marg[i][z[i]] += p;
            for i2 in 0..n {
                if z[i] == z[i2] {
                    co[i][i2] += p;
                }
            }
            // conditional of token i given the rest of this configuration
            let (w, j, k) = (tokens.words[i] as usize, tokens.docs[i] as usize, z[i]);
            cm.n_wk[w * k_ + k] -= 1.0;
            cm.n_kj[j * k_ + k] -= 1.0;
            cm.n_k[k] -= 1.0;
            cgs_conditional(w, j, &cm, h, &mut cond);
            let s: f64 = cond.iter().sum();
            for kk in 0..k_ {
                expect[i][kk] += p * cond[kk] / s;
            }
            cm.n_wk[w * k_ + k] += 1.0;
            cm.n_kj[j * k_ + k] += 1.0;
            cm.n_k[k] += 1.0;
        }
        // next configuration (mixed radix)
        for zi in z.iter_mut() {
            *zi += 1;
            if *zi < k_ {
                break;
            }
            *zi = 0;
        }
    }

    let mut residual: f64 = 0.0;
    for i in 0..n {
        for k in 0..k_ {
            marg[i][k] /= norm;
            expect[i][k] /= norm;
            residual = residual.max((marg[i][k] - expect[i][k]).abs());
        }
        co[i].iter_mut().for_each(|x| *x /= norm);
    }
    Ok(CallenReport {
        marginals: marg,
        coassignment: co,
        identity_residual: residual,
    })
}

/// Long-run CGS frequencies of token topics and token-pair co-assignment,
/// the sampling counterpart of [`callen_oracle`].
pub fn cgs_empirical_marginals(
    corpus: &Corpus,
    topics: usize,
    h: &Hyperparams,
    burn_in: usize,
    samples: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut state = CollapsedState::init(CollapsedAlgorithm::Cgs, corpus, topics, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    for _ in 0..burn_in {
        collapsed_sweep(&mut state, h, &mut rng, true);
    }
    let n = state.tokens.len();
    let mut marg = vec![vec![0.0; topics]; n];
    let mut co = vec![vec![0.0; n]; n];
    for _ in 0..samples {
        collapsed_sweep(&mut state, h, &mut rng, true);
        let Latent::Hard(z) = &state.latent else {
            unreachable!()
        };
        for i in 0..n {
            marg[i][z.z[i] as usize] += 1.0;
            for i2 in 0..n {
                if z.z[i] == z.z[i2] {
                    co[i][i2] += 1.0;
                }
            }
        }
    }
    let s = samples as f64;
    marg.iter_mut().flatten().for_each(|x| *x /= s);
    co.iter_mut().flatten().for_each(|x| *x /= s);
    Ok((marg, co))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Entry;
    use crate::synth::{generate_lda, SynthSpec};

    fn h(alpha: f64, eta: f64) -> Hyperparams {
        Hyperparams::new(alpha, eta).unwrap()
    }

    fn random_counts(k: usize, w: usize, d: usize, seed: u64) -> CountMatrices {
        let mut rng = rng_from_seed(seed);
        let mut cm = CountMatrices::zeros(k, w, d);
        cm.n_wk.iter_mut().for_each(|x| *x = rng.random_range(0.0..20.0));
        cm.n_kj.iter_mut().for_each(|x| *x = rng.random_range(0.0..20.0));
        cm.recompute_marginals();
        cm
    }

    fn synthetic(seed: u64, docs: usize) -> Corpus {
        generate_lda(&SynthSpec {
            num_docs: docs,
            vocab_size: 60,
            topics: 3,
            doc_length: 30,
            alpha: 0.3,
            eta: 0.1,
            seed,
        })
        .corpus
    }

    #[test]
    fn single_topic_trivial() {
        let c = synthetic(1, 5);
        let hp = h(0.1, 0.1);
        let mut rng = rng_from_seed(0);
        for alg in [CollapsedAlgorithm::Cgs, CollapsedAlgorithm::Cvb, CollapsedAlgorithm::Cvb0] {
            let mut s = CollapsedState::init(alg, &c, 1, 3).unwrap();
            collapsed_sweep(&mut s, &hp, &mut rng, true);
            match &s.latent {
                Latent::Hard(z) => assert!(z.z.iter().all(|&k| k == 0)),
                Latent::Soft(r) | Latent::SoftWithVariance(r, _) => {
                    assert!(r.data.iter().all(|&g| g == 1.0))
                }
            }
        }
    }

    #[test]
    fn cgs_and_cvb0_conditionals_agree() {
        let hp = h(0.37, 0.05);
        for seed in 0..20 {
            let cm = random_counts(5, 9, 4, seed);
            for (w, j) in [(0, 0), (8, 3), (4, 1)] {
                let (mut a, mut b) = ([0.0; 5], [0.0; 5]);
                cgs_conditional(w, j, &cm, &hp, &mut a);
                cvb0_conditional(w, j, &cm, &hp, &mut b);
                for k in 0..5 {
                    assert!((a[k] - b[k]).abs() <= 1e-14 * a[k].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn cvb_with_zero_variance_is_cvb0() {
        let hp = h(0.2, 0.3);
        let cm = random_counts(4, 6, 3, 2);
        let var = VarianceCounts {
            v_wk: vec![0.0; 24],
            v_kj: vec![0.0; 12],
            v_k: vec![0.0; 4],
        };
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        assert_eq!(cvb_conditional(2, 1, &cm, &var, &hp, &mut a), 0);
        cvb0_conditional(2, 1, &cm, &hp, &mut b);
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() <= 1e-14 * b[k]);
        }
    }

    #[test]
    fn cvb_hard_responsibilities_reduce_to_cvb0() {
        // gamma in {0, 1} everywhere -> all variances vanish
        let c = synthetic(4, 6);
        let tokens = c.tokens();
        let mut resp = Responsibilities::uniform(Layout::Token, tokens.len(), 3);
        for t in 0..tokens.len() {
            let g = resp.get_mut(t);
            g.iter_mut().for_each(|x| *x = 0.0);
            g[t % 3] = 1.0;
        }
        let var = VarianceCounts::from_token_responsibilities(&tokens, &resp, c.vocab_size());
        assert!(var.v_wk.iter().chain(&var.v_kj).chain(&var.v_k).all(|&v| v == 0.0));
        let cm = CountMatrices::from_token_responsibilities(&tokens, &resp, c.vocab_size());
        let hp = h(0.5, 0.1);
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        cvb_conditional(3, 2, &cm, &var, &hp, &mut a);
        cvb0_conditional(3, 2, &cm, &hp, &mut b);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-14 * b[k]);
        }
    }

    #[test]
    fn cvb_multiplier_direct_substitution() {
        // N_kj + alpha = 2 and V_kj = 1 on topic 0 -> factor exp(-1/8)
        let mut cm = CountMatrices::zeros(2, 2, 1);
        cm.n_kj = vec![1.0, 1.0];
        cm.n_wk = vec![1.0, 1.0, 0.0, 0.0];
        cm.recompute_marginals();
        let mut var = VarianceCounts {
            v_wk: vec![0.0; 4],
            v_kj: vec![0.0; 2],
            v_k: vec![0.0; 2],
        };
        var.v_kj[0] = 1.0;
        let hp = h(1.0, 0.5);
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        cvb_conditional(0, 0, &cm, &var, &hp, &mut a);
        cvb0_conditional(0, 0, &cm, &hp, &mut b);
        assert!((a[0] / b[0] - (-1.0f64 / 8.0).exp()).abs() < 1e-15);
        assert!((a[1] / b[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cvb_exponent_cap_counts() {
        let mut cm = CountMatrices::zeros(2, 2, 1);
        cm.n_kj = vec![0.0, 0.0];
        cm.recompute_marginals();
        let var = VarianceCounts {
            v_wk: vec![0.0; 4],
            v_kj: vec![1e6, 0.0],
            v_k: vec![0.0; 2],
        };
        let mut a = [0.0; 2];
        assert_eq!(cvb_conditional(0, 0, &cm, &var, &h(1.0, 1.0), &mut a), 1);
        assert!(a.iter().all(|x| x.is_finite() && *x > 0.0));
    }

    #[test]
    fn sweeps_conserve_mass_and_stay_consistent() {
        let c = synthetic(2, 20);
        let n = c.total_tokens() as f64;
        let hp = h(0.3, 0.05);
        let mut rng = rng_from_seed(1);
        for alg in [CollapsedAlgorithm::Cgs, CollapsedAlgorithm::Cvb, CollapsedAlgorithm::Cvb0] {
            let mut s = CollapsedState::init(alg, &c, 4, 9).unwrap();
            for _ in 0..10 {
                collapsed_sweep(&mut s, &hp, &mut rng, true);
                assert!((s.counts.total_mass() - n).abs() < 1e-8, "{alg:?}");
                assert!(s.counts.marginal_inconsistency() < 1e-6);
                let rebuilt = s.rebuilt_counts();
                match alg {
                    CollapsedAlgorithm::Cgs => assert_eq!(rebuilt, s.counts),
                    _ => assert!(rebuilt.max_abs_diff(&s.counts) < 1e-6),
                }
                if let Latent::SoftWithVariance(r, v) = &s.latent {
                    let fresh = VarianceCounts::from_token_responsibilities(&s.tokens, r, c.vocab_size());
                    assert!(fresh.max_abs_diff(v) < 1e-6);
                    assert!(r.normalization_error() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn cgs_is_reproducible() {
        let c = synthetic(3, 10);
        let hp = h(0.1, 0.1);
        let run = || {
            let mut s = CollapsedState::init(CollapsedAlgorithm::Cgs, &c, 3, 5).unwrap();
            let mut rng = rng_from_seed(77);
            for _ in 0..5 {
                collapsed_sweep(&mut s, &hp, &mut rng, true);
            }
            s.latent
        };
        assert_eq!(run(), run());
    }

    fn six_token_corpus() -> Corpus {
        Corpus::new(
            2,
            3,
            vec![
                Entry { doc: 0, word: 0, count: 2 },
                Entry { doc: 0, word: 1, count: 1 },
                Entry { doc: 1, word: 1, count: 1 },
                Entry { doc: 1, word: 2, count: 2 },
            ],
        )
        .unwrap()
    }

    fn converge_cvb0(c: &Corpus, seed: u64, hp: &Hyperparams) -> CollapsedState {
        let mut s = CollapsedState::init(CollapsedAlgorithm::Cvb0, c, 2, seed).unwrap();
        let mut rng = rng_from_seed(0);
        for _ in 0..20_000 {
            if collapsed_sweep(&mut s, hp, &mut rng, true).max_change < 1e-13 {
                break;
            }
        }
        s
    }

    #[test]
    fn cvb0_fixed_point_is_self_consistent() {
        let c = six_token_corpus();
        let hp = h(0.5, 0.3);
        let mut s = converge_cvb0(&c, 1, &hp);
        let mut rng = rng_from_seed(0);
        let stats = collapsed_sweep(&mut s, &hp, &mut rng, true);
        assert!(stats.max_change < 1e-10, "{}", stats.max_change);
    }

    #[test]
    fn cvb0_same_fixed_point_from_many_seeds() {
        let c = six_token_corpus();
        let hp = h(0.5, 0.3);
        let reference = converge_cvb0(&c, 0, &hp);
        let r0 = reference.responsibilities().unwrap().clone();
        for seed in 1..5 {
            let s = converge_cvb0(&c, seed, &hp);
            let r = s.responsibilities().unwrap();
            // align topic labels by the better of the two permutations
            let diff = |perm: [usize; 2]| {
                (0..r.units())
                    .flat_map(|t| (0..2).map(move |k| (t, k)))
                    .map(|(t, k)| (r.get(t)[perm[k]] - r0.get(t)[k]).abs())
                    .fold(0.0, f64::max)
            };
            let best = diff([0, 1]).min(diff([1, 0]));
            assert!(best < 1e-6, "seed {seed}: {best}");
        }
    }

    #[test]
    fn parallel_single_worker_matches_sequential_without_removal() {
        let c = synthetic(5, 30);
        let hp = h(0.2, 0.05);
        let mut a = CollapsedState::init(CollapsedAlgorithm::Cvb0, &c, 4, 2).unwrap();
        let mut b = a.clone();
        let mut rng = rng_from_seed(0);
        for _ in 0..5 {
            collapsed_sweep(&mut a, &hp, &mut rng, false);
            parallel_cvb0_sweep(&mut b, &hp, 1, 97, Exec::Parallel).unwrap();
        }
        let (ra, rb) = (a.responsibilities().unwrap(), b.responsibilities().unwrap());
        let d = ra
            .data
            .iter()
            .zip(&rb.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-10, "{d}");
        assert!(a.counts.max_abs_diff(&b.counts) < 1e-9);
    }

    #[test]
    fn parallel_sweep_conserves_and_rebuilds() {
        let c = synthetic(6, 40);
        let hp = h(0.2, 0.05);
        let mut s = CollapsedState::init(CollapsedAlgorithm::Cvb0, &c, 4, 3).unwrap();
        for _ in 0..5 {
            let st = parallel_cvb0_sweep(&mut s, &hp, 4, 50, Exec::Parallel).unwrap();
            assert!(st.merges >= 1);
            assert!(st.max_mass_error < 1e-10);
            assert!(s.rebuilt_counts().max_abs_diff(&s.counts) < 1e-6);
        }
    }

    #[test]
    fn parallel_sweep_independent_of_execution_policy() {
        let c = synthetic(7, 40);
        let hp = h(0.2, 0.05);
        let mut a = CollapsedState::init(CollapsedAlgorithm::Cvb0, &c, 3, 3).unwrap();
        let mut b = a.clone();
        for _ in 0..3 {
            parallel_cvb0_sweep(&mut a, &hp, 3, 40, Exec::Sequential).unwrap();
            parallel_cvb0_sweep(&mut b, &hp, 3, 40, Exec::Parallel).unwrap();
        }
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn parallel_rejects_bad_config() {
        let c = synthetic(8, 5);
        let hp = h(0.2, 0.05);
        let mut s = CollapsedState::init(CollapsedAlgorithm::Cvb0, &c, 2, 3).unwrap();
        assert!(parallel_cvb0_sweep(&mut s, &hp, 0, 10, Exec::Parallel).is_err());
        assert!(parallel_cvb0_sweep(&mut s, &hp, 2, 0, Exec::Parallel).is_err());
        let mut s = CollapsedState::init(CollapsedAlgorithm::Cgs, &c, 2, 3).unwrap();
        assert!(parallel_cvb0_sweep(&mut s, &hp, 2, 10, Exec::Parallel).is_err());
    }

    #[test]
    fn shards_cover_all_documents() {
        let c = synthetic(9, 17);
        let t = c.tokens();
        for workers in 1..6 {
            let s = shard_docs(&t, workers);
            assert_eq!(s.len(), workers);
            assert_eq!(s[0].0, 0);
            assert_eq!(s.last().unwrap().1, 17);
            assert!(s.windows(2).all(|p| p[0].1 == p[1].0));
        }
    }

    #[test]
    fn oracle_single_token_is_uniform() {
        let c = Corpus::new(1, 2, vec![Entry { doc: 0, word: 1, count: 1 }]).unwrap();
        let r = callen_oracle(&c, 3, &h(0.4, 0.2)).unwrap();
        assert!(r.marginals[0].iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-14));
        assert!(r.identity_residual < 1e-14);
    }

    #[test]
    fn oracle_identity_and_size_guard() {
        let c = Corpus::new(
            1,
            2,
            vec![Entry { doc: 0, word: 0, count: 2 }, Entry { doc: 0, word: 1, count: 1 }],
        )
        .unwrap();
        let r = callen_oracle(&c, 2, &h(0.3, 0.2)).unwrap();
        assert!(r.identity_residual < 1e-10);
        // tokens of the same word are more likely to share a topic
        assert!(r.coassignment[0][1] > r.coassignment[0][2]);
        assert!((r.coassignment[0][0] - 1.0).abs() < 1e-14);

        let big = Corpus::new(1, 2, vec![Entry { doc: 0, word: 0, count: 30 }]).unwrap();
        assert!(matches!(
            callen_oracle(&big, 2, &h(0.3, 0.2)),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn cgs_long_run_matches_enumeration() {
        let c = Corpus::new(
            1,
            2,
            vec![Entry { doc: 0, word: 0, count: 2 }, Entry { doc: 0, word: 1, count: 1 }],
        )
        .unwrap();
        let hp = h(0.3, 0.2);
        let exact = callen_oracle(&c, 2, &hp).unwrap();
        let (marg, co) = cgs_empirical_marginals(&c, 2, &hp, 100, 100_000, 3).unwrap();
        for i in 0..3 {
            for k in 0..2 {
                assert!((marg[i][k] - exact.marginals[i][k]).abs() < 0.01);
            }
            for i2 in 0..3 {
                assert!((co[i][i2] - exact.coassignment[i][i2]).abs() < 0.01);
            }
        }
    }
}
