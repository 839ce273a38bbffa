use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use topika::batch::{batch_sweep, BatchAlgorithm, BatchState};
use topika::collapsed::{parallel_cvb0_sweep, CollapsedAlgorithm, CollapsedState};
use topika::evaluation::{fold_in, FoldInConfig};
use topika::synth::{generate_lda, SynthSpec};
use topika::{Algorithm, Exec, Hyperparams};

fn corpus() -> topika::Corpus {
    generate_lda(&SynthSpec {
        num_docs: 400,
        vocab_size: 2000,
        topics: 10,
        doc_length: 120,
        alpha: 0.1,
        eta: 0.01,
        seed: 7,
    })
    .corpus
}

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn batch(c: &mut Criterion) {
    let corpus = corpus();
    let h = Hyperparams::new(0.1, 0.01).unwrap();
    let mut g = c.benchmark_group("batch_sweep");
    g.sample_size(10);
    for alg in [BatchAlgorithm::Ml, BatchAlgorithm::Vb] {
        for (name, exec) in POLICIES {
            let mut state = BatchState::init(&corpus, 10, 1).unwrap();
            g.bench_function(BenchmarkId::new(format!("{alg:?}"), name), |b| {
                b.iter(|| batch_sweep(alg, &corpus, &mut state, &h, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn pcvb0(c: &mut Criterion) {
    let corpus = corpus();
    let h = Hyperparams::new(0.1, 0.01).unwrap();
    let mut g = c.benchmark_group("parallel_cvb0_sweep");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        let mut state = CollapsedState::init(CollapsedAlgorithm::Cvb0, &corpus, 10, 1).unwrap();
        g.bench_function(BenchmarkId::new("4 workers", name), |b| {
            b.iter(|| parallel_cvb0_sweep(&mut state, &h, 4, 4096, exec).unwrap())
        });
    }
    g.finish();
}

fn folding(c: &mut Criterion) {
    let corpus = corpus();
    let h = Hyperparams::new(0.1, 0.01).unwrap();
    let state = BatchState::init(&corpus, 10, 1).unwrap();
    let est = topika::model_state::estimate_collapsed(&state.counts, &h);
    let mut g = c.benchmark_group("fold_in");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::new("cvb0", name), |b| {
            b.iter(|| fold_in(&corpus, &est, Algorithm::Cvb0, &h, &FoldInConfig::default(), 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, batch, pcvb0, folding);
criterion_main!(benches);
