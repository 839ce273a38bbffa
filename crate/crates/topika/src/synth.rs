//! Corpora sampled from the LDA generative process, for tests, benchmarks
//! and experiments where real data is not at hand.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::corpus::{Corpus, Entry};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub topics: usize,
    /// Mean document length; lengths are uniform on [L/2, 3L/2].
    pub doc_length: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// True topics, `K` rows of `W` probabilities.
    pub topics: Vec<Vec<f64>>,
    /// True document proportions, `D` rows of `K`.
    pub proportions: Vec<Vec<f64>>,
    /// Topic with the largest true proportion in each document.
    pub labels: Vec<usize>,
}

/// Draw from a symmetric Dirichlet of the given dimension.
pub fn sample_dirichlet(rng: &mut Rng, dim: usize, conc: f64) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive concentration");
    let mut v: Vec<f64> = (0..dim).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        // every gamma draw underflowed: all mass on one component
        v.iter_mut().for_each(|x| *x = 0.0);
        v[rng.random_range(0..dim)] = 1.0;
    }
    v
}

fn sample_categorical(rng: &mut Rng, cdf: &[f64]) -> usize {
    let u = rng.random::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Sample a corpus: φ_k ~ Dir(η), θ_j ~ Dir(α), one topic and word per token.
pub fn generate_lda(spec: &SynthSpec) -> SynthCorpus {
    let mut rng = rng_from_seed(derive_seed(spec.seed, "synth"));
    let topics: Vec<Vec<f64>> = (0..spec.topics)
        .map(|_| sample_dirichlet(&mut rng, spec.vocab_size, spec.eta))
        .collect();
    let topic_cdfs: Vec<Vec<f64>> = topics.iter().map(|t| cumulative(t)).collect();
    let lo = (spec.doc_length / 2).max(1);
    let hi = (spec.doc_length + spec.doc_length / 2).max(lo);

    let mut proportions = Vec::with_capacity(spec.num_docs);
    let mut labels = Vec::with_capacity(spec.num_docs);
    let mut entries = Vec::new();
    let mut counts = vec![0u32; spec.vocab_size];
    for j in 0..spec.num_docs {
        let theta = sample_dirichlet(&mut rng, spec.topics, spec.alpha);
        let cdf = cumulative(&theta);
        let len = rng.random_range(lo..=hi);
        for _ in 0..len {
            let k = sample_categorical(&mut rng, &cdf);
            let w = sample_categorical(&mut rng, &topic_cdfs[k]);
            counts[w] += 1;
        }
        for (w, c) in counts.iter_mut().enumerate() {
            if *c > 0 {
                entries.push(Entry {
                    doc: j as u32,
                    word: w as u32,
                    count: *c,
                });
                *c = 0;
            }
        }
        let label = theta
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        labels.push(label);
        proportions.push(theta);
    }
    let corpus = Corpus::new(spec.num_docs, spec.vocab_size, entries)
        .expect("generated documents are non-empty");
    SynthCorpus {
        corpus,
        topics,
        proportions,
        labels,
    }
}
