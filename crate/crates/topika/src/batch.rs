//! Batch learners: ML (PLSA EM), MAP and VB.
//!
//! Each sweep recomputes one responsibility per unique (word, document)
//! entry against the counts of the previous sweep, then rebuilds the counts.
//! Because the counts are frozen during a sweep the entry updates are
//! independent and run data-parallel under [`Exec::Parallel`].

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::Result;
use crate::exec::Exec;
use crate::model_state::{
    estimate_collapsed, init_random, CountMatrices, Hyperparams, Layout, Responsibilities,
    TopicEstimates,
};
use crate::special::digamma;

const CHUNK_ENTRIES: usize = 1024;
const APPROX_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchAlgorithm {
    Ml,
    Map,
    Vb,
}

/// Normalise `out` in place. Returns false (leaving `out` untouched) when the
/// sum is zero or not finite.
fn normalize(out: &mut [f64]) -> bool {
    let s: f64 = out.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return false;
    }
    out.iter_mut().for_each(|x| *x /= s);
    true
}

/// γ_wjk ∝ N_wk N_kj / N_k. Topics with N_k = 0 get zero weight. Returns
/// false if every topic has zero weight.
pub fn ml_update(w: usize, j: usize, cm: &CountMatrices, out: &mut [f64]) -> bool {
    let (wr, dr) = (cm.word_row(w), cm.doc_row(j));
    for k in 0..out.len() {
        out[k] = if cm.n_k[k] > 0.0 {
            wr[k] * dr[k] / cm.n_k[k]
        } else {
            0.0
        };
    }
    normalize(out)
}

/// γ_wjk ∝ (N_wk + η − 1)(N_kj + α − 1)/(N_k + Wη − W). Callers guarantee
/// α, η > 1.
pub fn map_update(w: usize, j: usize, cm: &CountMatrices, h: &Hyperparams, out: &mut [f64]) {
    let (wr, dr) = (cm.word_row(w), cm.doc_row(j));
    let wf = cm.vocab_size() as f64;
    for k in 0..out.len() {
        out[k] = (wr[k] + h.eta - 1.0) * (dr[k] + h.alpha - 1.0) / (cm.n_k[k] + wf * h.eta - wf);
    }
    normalize(out);
}

fn vb_update_with(
    w: usize,
    j: usize,
    cm: &CountMatrices,
    h: &Hyperparams,
    psi_topic: &[f64],
    out: &mut [f64],
) {
    let (wr, dr) = (cm.word_row(w), cm.doc_row(j));
    let mut max = f64::NEG_INFINITY;
    for k in 0..out.len() {
        let l = digamma(wr[k] + h.eta) - psi_topic[k] + digamma(dr[k] + h.alpha);
        out[k] = l;
        max = max.max(l);
    }
    out.iter_mut().for_each(|x| *x = (*x - max).exp());
    normalize(out);
}

fn psi_topic_totals(cm: &CountMatrices, h: &Hyperparams) -> Vec<f64> {
    let wf = cm.vocab_size() as f64;
    cm.n_k.iter().map(|n| digamma(n + wf * h.eta)).collect()
}

/// γ_wjk ∝ exp(ψ(N_wk + η)) exp(ψ(N_kj + α)) / exp(ψ(N_k + Wη)).
pub fn vb_update(w: usize, j: usize, cm: &CountMatrices, h: &Hyperparams, out: &mut [f64]) {
    let psi = psi_topic_totals(cm, h);
    vb_update_with(w, j, cm, h, &psi, out);
}

/// The first-order approximation of [`vb_update`] obtained from
/// exp(ψ(n)) ≈ n − 0.5:
/// γ_wjk ∝ (N_wk + η − 0.5)(N_kj + α − 0.5)/(N_k + Wη − 0.5).
/// Factors are floored at 1e-12. Diagnostic use only.
pub fn vb_approx_update(
    w: usize,
    j: usize,
    cm: &CountMatrices,
    h: &Hyperparams,
    out: &mut [f64],
) {
    let (wr, dr) = (cm.word_row(w), cm.doc_row(j));
    let wf = cm.vocab_size() as f64;
    for k in 0..out.len() {
        let a = (wr[k] + h.eta - 0.5).max(APPROX_FLOOR);
        let b = (dr[k] + h.alpha - 0.5).max(APPROX_FLOOR);
        let c = (cm.n_k[k] + wf * h.eta - 0.5).max(APPROX_FLOOR);
        out[k] = a * b / c;
    }
    normalize(out);
}

/// Entry-level responsibilities and the counts built from them.
#[derive(Debug, Clone)]
pub struct BatchState {
    pub resp: Responsibilities,
    pub counts: CountMatrices,
}

impl BatchState {
    pub fn init(corpus: &Corpus, topics: usize, seed: u64) -> Result<Self> {
        let (resp, counts) = init_random(corpus, topics, Layout::Entry, seed)?;
        Ok(Self { resp, counts })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    /// ML: log-likelihood. MAP: log joint. VB: log-likelihood under the
    /// smoothed estimates (a convergence proxy, not the free energy).
    pub objective: f64,
    /// Largest absolute change of any responsibility.
    pub max_change: f64,
}

/// One synchronous sweep: all entry distributions recomputed against the
/// frozen counts, then counts rebuilt.
pub fn batch_sweep(
    algorithm: BatchAlgorithm,
    corpus: &Corpus,
    state: &mut BatchState,
    h: &Hyperparams,
    exec: Exec,
) -> Result<SweepStats> {
    match algorithm {
        BatchAlgorithm::Map => h.validate_map()?,
        _ => h.validate()?,
    }
    let k_ = state.resp.topics();
    let cm = &state.counts;
    let psi = match algorithm {
        BatchAlgorithm::Vb => psi_topic_totals(cm, h),
        _ => Vec::new(),
    };
    let entries = corpus.entries();
    let old = &state.resp;
    let mut fresh = old.data.clone();
    let degenerate = std::sync::atomic::AtomicUsize::new(0);

    exec.for_each_chunk_mut(&mut fresh, CHUNK_ENTRIES * k_, |ci, chunk| {
        let base = ci * CHUNK_ENTRIES;
        for (o, out) in chunk.chunks_exact_mut(k_).enumerate() {
            let e = &entries[base + o];
            let (w, j) = (e.word as usize, e.doc as usize);
            match algorithm {
                BatchAlgorithm::Ml => {
                    if !ml_update(w, j, cm, out) {
                        // no live topic explains this entry: keep the old one
                        out.copy_from_slice(old.get(base + o));
                        degenerate.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    }
                }
                BatchAlgorithm::Map => map_update(w, j, cm, h, out),
                BatchAlgorithm::Vb => vb_update_with(w, j, cm, h, &psi, out),
            }
        }
    });
    let degenerate = degenerate.into_inner();
    if degenerate > 0 {
        log::warn!("{degenerate} entries had no live topic; responsibilities kept");
    }

    let max_change = fresh
        .iter()
        .zip(&old.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    state.resp.data = fresh;
    state.counts = CountMatrices::from_entry_responsibilities(corpus, &state.resp);

    let objective = match algorithm {
        BatchAlgorithm::Ml => ml_log_likelihood(corpus, &state.counts, exec),
        BatchAlgorithm::Map => map_log_joint(corpus, &state.counts, h, exec),
        BatchAlgorithm::Vb => log_likelihood(corpus, &estimate_collapsed(&state.counts, h), exec),
    };
    Ok(SweepStats {
        objective,
        max_change,
    })
}

/// Σ_jw N_wj log Σ_k φ_wk θ_kj for raw `W x K` / `D x K` tables.
fn log_likelihood_tables(corpus: &Corpus, phi: &[f64], theta: &[f64], k_: usize, exec: Exec) -> f64 {
    let per_doc = exec.map_range(corpus.num_docs(), |j| {
        let t = &theta[j * k_..(j + 1) * k_];
        corpus
            .doc_entries(j)
            .iter()
            .map(|e| {
                let p = &phi[e.word as usize * k_..(e.word as usize + 1) * k_];
                let s: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
                e.count as f64 * s.ln()
            })
            .sum::<f64>()
    });
    per_doc.iter().sum()
}

/// Log-likelihood of a corpus under point estimates:
/// Σ_jw N_wj log Σ_k φ̂_wk θ̂_kj. The estimates must cover the corpus'
/// documents.
pub fn log_likelihood(corpus: &Corpus, est: &TopicEstimates, exec: Exec) -> f64 {
    log_likelihood_tables(corpus, &est.phi, &est.theta, est.topics(), exec)
}

/// ML parameters φ = N_wk/N_k, θ = N_kj/N_j; dead topics get zero.
fn ml_tables(cm: &CountMatrices) -> (Vec<f64>, Vec<f64>) {
    let k_ = cm.topics();
    let mut phi = cm.n_wk.clone();
    for row in phi.chunks_exact_mut(k_) {
        for k in 0..k_ {
            row[k] = if cm.n_k[k] > 0.0 { row[k] / cm.n_k[k] } else { 0.0 };
        }
    }
    let mut theta = cm.n_kj.clone();
    for (j, row) in theta.chunks_exact_mut(k_).enumerate() {
        row.iter_mut().for_each(|x| *x /= cm.n_j[j]);
    }
    (phi, theta)
}

/// PLSA log-likelihood at the ML parameters implied by `cm`.
pub fn ml_log_likelihood(corpus: &Corpus, cm: &CountMatrices, exec: Exec) -> f64 {
    let (phi, theta) = ml_tables(cm);
    log_likelihood_tables(corpus, &phi, &theta, cm.topics(), exec)
}

/// Log joint at the MAP parameters implied by `cm`: the log-likelihood plus
/// Σ_wk (η − 1) log φ_wk + Σ_kj (α − 1) log θ_kj.
pub fn map_log_joint(corpus: &Corpus, cm: &CountMatrices, h: &Hyperparams, exec: Exec) -> f64 {
    let wf = cm.vocab_size() as f64;
    let kf = cm.topics() as f64;
    let k_ = cm.topics();
    let mut phi = cm.n_wk.clone();
    for row in phi.chunks_exact_mut(k_) {
        for k in 0..k_ {
            row[k] = (row[k] + h.eta - 1.0) / (cm.n_k[k] + wf * h.eta - wf);
        }
    }
    let mut theta = cm.n_kj.clone();
    for (j, row) in theta.chunks_exact_mut(k_).enumerate() {
        let denom = cm.n_j[j] + kf * h.alpha - kf;
        row.iter_mut().for_each(|x| *x = (*x + h.alpha - 1.0) / denom);
    }
    let ll = log_likelihood_tables(corpus, &phi, &theta, k_, exec);
    let prior_phi: f64 = phi.iter().map(|p| p.ln()).sum::<f64>() * (h.eta - 1.0);
    let prior_theta: f64 = theta.iter().map(|t| t.ln()).sum::<f64>() * (h.alpha - 1.0);
    ll + prior_phi + prior_theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Entry;
    use crate::rng::rng_from_seed;
    use crate::synth::{generate_lda, SynthSpec};
    use rand::Rng;

    fn counts(k: usize, w: usize, d: usize, seed: u64, lo: f64, hi: f64) -> CountMatrices {
        let mut rng = rng_from_seed(seed);
        let mut cm = CountMatrices::zeros(k, w, d);
        cm.n_wk.iter_mut().for_each(|x| *x = rng.random_range(lo..hi));
        cm.n_kj.iter_mut().for_each(|x| *x = rng.random_range(lo..hi));
        cm.recompute_marginals();
        cm
    }

    fn two_doc_corpus() -> Corpus {
        Corpus::new(
            2,
            3,
            vec![
                Entry { doc: 0, word: 0, count: 2 },
                Entry { doc: 0, word: 1, count: 1 },
                Entry { doc: 1, word: 1, count: 1 },
                Entry { doc: 1, word: 2, count: 3 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_topic_is_trivial() {
        let cm = counts(1, 4, 2, 1, 0.5, 5.0);
        let h = Hyperparams::new(2.0, 2.0).unwrap();
        let mut out = [0.0];
        assert!(ml_update(1, 1, &cm, &mut out));
        assert_eq!(out, [1.0]);
        map_update(1, 1, &cm, &h, &mut out);
        assert_eq!(out, [1.0]);
        vb_update(1, 1, &cm, &h, &mut out);
        assert_eq!(out, [1.0]);
    }

    #[test]
    fn ml_symmetric_counts() {
        let mut cm = CountMatrices::zeros(2, 1, 1);
        cm.n_wk = vec![2.0, 2.0];
        cm.n_kj = vec![3.0, 3.0];
        cm.n_k = vec![5.0, 5.0];
        cm.n_j = vec![6.0];
        let mut out = [0.0; 2];
        ml_update(0, 0, &cm, &mut out);
        assert_eq!(out, [0.5, 0.5]);
    }

    #[test]
    fn ml_dead_topics_are_absorbing() {
        let mut cm = CountMatrices::zeros(2, 1, 1);
        cm.n_wk = vec![2.0, 0.0];
        cm.n_kj = vec![2.0, 0.0];
        cm.recompute_marginals();
        let mut out = [0.0; 2];
        assert!(ml_update(0, 0, &cm, &mut out));
        assert_eq!(out, [1.0, 0.0]);
        let cm = CountMatrices::zeros(2, 1, 1);
        assert!(!ml_update(0, 0, &cm, &mut out));
    }

    #[test]
    fn map_direct_substitution() {
        let mut cm = CountMatrices::zeros(2, 2, 1);
        cm.n_wk = vec![1.0, 0.0, 0.0, 1.0];
        cm.n_kj = vec![0.0, 1.0];
        cm.n_k = vec![1.0, 1.0];
        cm.n_j = vec![1.0];
        let mut out = [0.0; 2];
        map_update(0, 0, &cm, &Hyperparams::new(2.0, 2.0).unwrap(), &mut out);
        assert!((out[0] - 0.5).abs() < 1e-15 && (out[1] - 0.5).abs() < 1e-15);
        let zero = CountMatrices::zeros(3, 2, 1);
        let mut out = [0.0; 3];
        map_update(1, 0, &zero, &Hyperparams::new(1.7, 3.0).unwrap(), &mut out);
        assert!(out.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn map_approaches_ml_at_unit_prior() {
        let h = Hyperparams::new(1.000001, 1.000001).unwrap();
        for seed in 0..5 {
            let cm = counts(4, 6, 3, seed, 0.5, 30.0);
            for (w, j) in [(0, 0), (3, 2), (5, 1)] {
                let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
                ml_update(w, j, &cm, &mut a);
                map_update(w, j, &cm, &h, &mut b);
                for k in 0..4 {
                    assert!((a[k] - b[k]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn vb_zero_counts_uniform() {
        let cm = CountMatrices::zeros(4, 3, 2);
        let mut out = [0.0; 4];
        vb_update(2, 1, &cm, &Hyperparams::new(0.1, 0.1).unwrap(), &mut out);
        assert!(out.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn vb_matches_first_order_approximation_on_large_counts() {
        let h = Hyperparams::new(0.3, 0.2).unwrap();
        for seed in 0..10 {
            let cm = counts(5, 8, 4, seed, 10.0, 200.0);
            for w in 0..8 {
                for j in 0..4 {
                    let (mut a, mut b) = ([0.0; 5], [0.0; 5]);
                    vb_update(w, j, &cm, &h, &mut a);
                    vb_approx_update(w, j, &cm, &h, &mut b);
                    for k in 0..5 {
                        assert!((a[k] - b[k]).abs() < 0.02, "{a:?} vs {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn vb_approx_floor_keeps_distribution_valid() {
        let cm = CountMatrices::zeros(3, 2, 1);
        let mut out = [0.0; 3];
        vb_approx_update(0, 0, &cm, &Hyperparams::new(0.5, 0.5).unwrap(), &mut out);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn vb_approx_numerators_match_shifted_map() {
        // equal topic totals so the denominators cancel under normalisation
        let mut cm = CountMatrices::zeros(3, 2, 1);
        cm.n_wk = vec![4.0, 1.0, 3.0, 2.0, 5.0, 3.0];
        cm.n_kj = vec![3.0, 9.0, 2.0];
        cm.n_k = vec![6.0, 6.0, 6.0];
        cm.n_j = vec![14.0];
        let h = Hyperparams::new(0.75, 0.625).unwrap();
        let hs = Hyperparams::new(1.25, 1.125).unwrap();
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        vb_approx_update(0, 0, &cm, &h, &mut a);
        map_update(0, 0, &cm, &hs, &mut b);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn one_em_sweep_matches_straight_line_evaluation() {
        let c = two_doc_corpus();
        let k_ = 2;
        // asymmetric start so the sweep moves
        let mut resp = Responsibilities::uniform(Layout::Entry, c.nnz(), k_);
        let start = [[0.7, 0.3], [0.4, 0.6], [0.5, 0.5], [0.2, 0.8]];
        for (i, g) in start.iter().enumerate() {
            resp.get_mut(i).copy_from_slice(g);
        }
        let counts = CountMatrices::from_entry_responsibilities(&c, &resp);
        let mut state = BatchState { resp, counts };
        batch_sweep(BatchAlgorithm::Ml, &c, &mut state, &Hyperparams::new(1.0, 1.0).unwrap(), Exec::Sequential)
            .unwrap();

        // M-step: phi_wk = sum_j N_wj g_wjk / sum_wj N_wj g_wjk, theta likewise
        let ent: Vec<(usize, usize, f64)> = c
            .entries()
            .iter()
            .map(|e| (e.word as usize, e.doc as usize, e.count as f64))
            .collect();
        let mut phi = [[0.0; 2]; 3];
        let mut theta = [[0.0; 2]; 2];
        for (i, &(w, j, n)) in ent.iter().enumerate() {
            for k in 0..2 {
                phi[w][k] += n * start[i][k];
                theta[j][k] += n * start[i][k];
            }
        }
        for k in 0..2 {
            let s: f64 = (0..3).map(|w| phi[w][k]).sum();
            (0..3).for_each(|w| phi[w][k] /= s);
        }
        for row in theta.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|t| *t /= s);
        }
        // E-step: P(z | x, d) proportional to phi theta
        for (i, &(w, j, _)) in ent.iter().enumerate() {
            let p: Vec<f64> = (0..2).map(|k| phi[w][k] * theta[j][k]).collect();
            let s: f64 = p.iter().sum();
            for k in 0..2 {
                assert!((state.resp.get(i)[k] - p[k] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_likelihood_closed_forms() {
        let c = two_doc_corpus();
        let cm = CountMatrices::zeros(2, 3, 2);
        let est = estimate_collapsed(&cm, &Hyperparams::new(1.0, 1.0).unwrap());
        let ll = log_likelihood(&c, &est, Exec::Sequential);
        assert!((ll - 7.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);

        // brute force over the dense count matrix
        let mut rng = rng_from_seed(1);
        let mut cm = CountMatrices::zeros(2, 3, 2);
        cm.n_wk.iter_mut().for_each(|x| *x = rng.random_range(0.0..4.0));
        cm.n_kj.iter_mut().for_each(|x| *x = rng.random_range(0.0..4.0));
        cm.recompute_marginals();
        let est = estimate_collapsed(&cm, &Hyperparams::new(0.3, 0.2).unwrap());
        let dense = [[2.0, 1.0, 0.0], [0.0, 1.0, 3.0]];
        let mut want = 0.0;
        for (j, row) in dense.iter().enumerate() {
            for (w, &n) in row.iter().enumerate() {
                if n > 0.0 {
                    let p: f64 = (0..2).map(|k| est.phi(w, k) * est.theta(k, j)).sum();
                    want += n * p.ln();
                }
            }
        }
        assert!((log_likelihood(&c, &est, Exec::Sequential) - want).abs() < 1e-12);
    }

    #[test]
    fn concentrated_estimates_approach_zero_loglik() {
        let c = Corpus::new(1, 3, vec![Entry { doc: 0, word: 1, count: 1 }]).unwrap();
        let mut cm = CountMatrices::zeros(1, 3, 1);
        cm.n_wk = vec![0.0, 1e9, 0.0];
        cm.n_kj = vec![1e9];
        cm.recompute_marginals();
        let ll = log_likelihood(&c, &estimate_collapsed(&cm, &Hyperparams::new(1.0, 1e-3).unwrap()), Exec::Sequential);
        assert!(ll < 0.0 && ll > -1e-9);
    }

    fn synthetic(seed: u64) -> Corpus {
        generate_lda(&SynthSpec {
            num_docs: 50,
            vocab_size: 40,
            topics: 4,
            doc_length: 30,
            alpha: 0.3,
            eta: 0.1,
            seed,
        })
        .corpus
    }

    #[test]
    fn em_objectives_are_monotone() {
        let c = synthetic(3);
        for (alg, h) in [
            (BatchAlgorithm::Ml, Hyperparams::new(1.0, 1.0).unwrap()),
            (BatchAlgorithm::Map, Hyperparams::new(1.5, 1.1).unwrap()),
        ] {
            let mut state = BatchState::init(&c, 4, 8).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for _ in 0..40 {
                let s = batch_sweep(alg, &c, &mut state, &h, Exec::Parallel).unwrap();
                assert!(s.objective >= prev - 1e-9 * prev.abs(), "{alg:?}: {} < {prev}", s.objective);
                prev = s.objective;
            }
        }
    }

    #[test]
    fn map_rejects_small_hyperparameters() {
        let c = synthetic(1);
        let mut state = BatchState::init(&c, 2, 0).unwrap();
        assert!(batch_sweep(BatchAlgorithm::Map, &c, &mut state, &Hyperparams::new(0.5, 1.5).unwrap(), Exec::Sequential).is_err());
    }

    #[test]
    fn parallel_and_sequential_sweeps_identical() {
        let c = synthetic(5);
        let h = Hyperparams::new(0.4, 0.2).unwrap();
        let mut a = BatchState::init(&c, 3, 1).unwrap();
        let mut b = a.clone();
        for _ in 0..5 {
            let sa = batch_sweep(BatchAlgorithm::Vb, &c, &mut a, &h, Exec::Sequential).unwrap();
            let sb = batch_sweep(BatchAlgorithm::Vb, &c, &mut b, &h, Exec::Parallel).unwrap();
            assert_eq!(sa, sb);
        }
        assert_eq!(a.resp, b.resp);
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let c = synthetic(2);
        let h = Hyperparams::new(1.2, 1.1).unwrap();
        let mut state = BatchState::init(&c, 3, 4).unwrap();
        for _ in 0..3000 {
            if batch_sweep(BatchAlgorithm::Map, &c, &mut state, &h, Exec::Parallel).unwrap().max_change < 1e-14 {
                break;
            }
        }
        let before = state.resp.clone();
        batch_sweep(BatchAlgorithm::Map, &c, &mut state, &h, Exec::Parallel).unwrap();
        batch_sweep(BatchAlgorithm::Map, &c, &mut state, &h, Exec::Parallel).unwrap();
        let diff = before
            .data
            .iter()
            .zip(&state.resp.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn counts_stay_consistent() {
        let c = synthetic(7);
        let h = Hyperparams::new(0.2, 0.3).unwrap();
        let mut state = BatchState::init(&c, 4, 2).unwrap();
        for _ in 0..5 {
            batch_sweep(BatchAlgorithm::Vb, &c, &mut state, &h, Exec::Parallel).unwrap();
            assert!(state.counts.marginal_inconsistency() < 1e-10);
            assert!(state.resp.normalization_error() < 1e-10);
            assert!((state.counts.total_mass() - c.total_tokens() as f64).abs() < 1e-8);
        }
    }
}
