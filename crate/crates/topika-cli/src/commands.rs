use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::Serialize;
use topika::collapsed::{callen_oracle, cgs_empirical_marginals};
use topika::corpus::{load_uci, split_corpus, SplitCorpus};
use topika::evaluation::{
    classify_and_score, fold_in, heldout_perplexity, theta_rows, timing_benchmark, FoldInConfig, RunMetrics,
};
use topika::hyperopt::{run_cell, select_best, write_grid_csv, GridCell, GridSpec, MinkaConfig};
use topika::model_state::{write_top_words, ModelDump, ModelHeader};
use topika::rng::{derive_indexed, derive_seed, rng_from_seed};
use topika::trace::write_trace_csv;
use topika::train::train;
use topika::{Algorithm, Corpus, Entry, Exec, Hyperparams, TrainConfig};

use crate::config::Resolved;
use crate::manifest::{hash_inputs, hash_str, Manifest};

fn load_corpus(r: &Resolved) -> anyhow::Result<Corpus> {
    let path = r.docword.as_ref().context("--docword is required")?;
    let docword = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let vocab = match &r.vocab {
        Some(v) => Some(BufReader::new(File::open(v).with_context(|| format!("opening {}", v.display()))?)),
        None => None,
    };
    load_uci(docword, vocab).with_context(|| format!("loading {}", path.display()))
}

fn make_split(r: &Resolved, corpus: &Corpus) -> anyhow::Result<SplitCorpus> {
    let default = (corpus.num_docs() / 16).max(1);
    let test = r.test_docs.unwrap_or(default);
    let val = r.validation_docs.unwrap_or(default);
    Ok(split_corpus(corpus, test, val, derive_seed(r.seed, "split"))?)
}

fn read_labels(path: &Path, docs: usize) -> anyhow::Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let labels = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .with_context(|| format!("{}:{}: bad label '{l}'", path.display(), i + 1))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if labels.len() != docs {
        bail!("{} has {} labels for {docs} documents", path.display(), labels.len());
    }
    Ok(labels)
}

fn train_config(r: &Resolved, algorithm: Algorithm, alpha: f64, eta: f64) -> anyhow::Result<TrainConfig> {
    let h = Hyperparams {
        alpha,
        eta,
        gamma_prior: Default::default(),
    };
    let mut cfg = TrainConfig::new(algorithm, r.topics, h);
    cfg.max_iterations = r.iters;
    cfg.seed = r.seed;
    cfg.workers = r.workers;
    cfg.sync_every = r.sync_every;
    if r.minka {
        cfg.minka = Some(MinkaConfig {
            start_iteration: r.minka_start,
            ..MinkaConfig::default()
        });
    }
    Ok(cfg)
}

fn input_paths(r: &Resolved) -> Vec<&Path> {
    [&r.docword, &r.vocab, &r.labels]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .chain(r.models.iter().map(PathBuf::as_path))
        .collect()
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_manifest(r: &Resolved, command: &str, outputs: Vec<PathBuf>, seconds: f64) -> anyhow::Result<PathBuf> {
    let (inputs, input_hash) = hash_inputs(&input_paths(r))?;
    let path = r.out.join(format!("{command}-manifest.json"));
    Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: r.clone(),
        inputs,
        input_hash,
        outputs,
        seconds,
    }
    .write(&path)?;
    Ok(path)
}

fn sample_seed(seed: u64, s: usize, samples: usize) -> u64 {
    if samples <= 1 {
        seed
    } else {
        derive_indexed(seed, "sample", s as u64)
    }
}

pub fn train_cmd(r: &Resolved) -> anyhow::Result<()> {
    let algorithm = r.algorithm()?;
    let cfg = train_config(r, algorithm, r.alpha, r.eta)?;
    cfg.validate()?;
    let corpus = load_corpus(r)?;
    let split = make_split(r, &corpus)?;
    fs::create_dir_all(&r.out)?;
    let mut outputs = Vec::new();
    let mut seconds = 0.0;
    for s in 0..r.samples.max(1) {
        let mut c = cfg.clone();
        c.seed = sample_seed(r.seed, s, r.samples);
        let m = train(&split.train, Some(&split.validation), &c)?;
        seconds += m.seconds;
        let suffix = if r.samples <= 1 { String::new() } else { format!("-{s}") };
        let header = ModelHeader {
            vocab_size: m.estimates.vocab_size(),
            topics: m.estimates.topics(),
            num_docs: m.estimates.num_docs(),
            alpha: m.hyperparams.alpha,
            eta: m.hyperparams.eta,
            estimator_tag: m.estimates.tag,
            algorithm: algorithm.name().into(),
            iterations: m.iterations_run,
            seed: c.seed,
        };
        let model_path = r.out.join(format!("model{suffix}.json"));
        ModelDump::new(header, &m.estimates).write(create(&model_path)?)?;
        let trace_path = r.out.join(format!("trace{suffix}.csv"));
        write_trace_csv(&m.trace, m.parallel, create(&trace_path)?)?;
        let top_path = r.out.join(format!("top_words{suffix}.csv"));
        let vocab = split.train.vocab().map(|v| v.as_slice());
        write_top_words(&m.estimates, vocab, r.top_words, create(&top_path)?)?;
        println!(
            "{algorithm} run {s}: {} iterations, best validation perplexity {}, {:.2}s",
            m.iterations_run,
            m.best_validation_perplexity.map_or("n/a".into(), |p| format!("{p:.3}")),
            m.seconds
        );
        outputs.extend([model_path, trace_path, top_path]);
    }
    write_manifest(r, "train", outputs, seconds)?;
    Ok(())
}

fn load_dumps(r: &Resolved) -> anyhow::Result<Vec<ModelDump>> {
    if r.models.is_empty() {
        bail!("--model is required");
    }
    let dumps = r
        .models
        .iter()
        .map(|p| {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            ModelDump::read(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let h0 = &dumps[0].header;
    for d in &dumps[1..] {
        let h = &d.header;
        if (h.vocab_size, h.topics, h.estimator_tag, &h.algorithm) != (h0.vocab_size, h0.topics, h0.estimator_tag, &h0.algorithm) {
            bail!("model dumps disagree on algorithm, estimator, K or W");
        }
    }
    Ok(dumps)
}

/// Training seconds from the manifest next to a model dump, if there is one.
fn training_seconds(model: &Path) -> f64 {
    let dir = model.parent().unwrap_or(Path::new("."));
    Manifest::read(&dir.join("train-manifest.json")).map_or(0.0, |m| m.seconds)
}

pub fn evaluate_cmd(r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    let dumps = load_dumps(r)?;
    let header = &dumps[0].header;
    let algorithm: Algorithm = header.algorithm.parse()?;
    let corpus = load_corpus(r)?;
    if corpus.vocab_size() != header.vocab_size {
        bail!(
            "vocabulary size mismatch: corpus has {} words, model has {}",
            corpus.vocab_size(),
            header.vocab_size
        );
    }
    let split = if r.whole { None } else { Some(make_split(r, &corpus)?) };
    let test = split.as_ref().map_or(&corpus, |s| &s.test);
    let estimates = dumps.iter().map(ModelDump::estimates).collect::<Result<Vec<_>, _>>()?;
    let pairs = dumps
        .iter()
        .zip(&estimates)
        .map(|(d, e)| Ok((e, Hyperparams::new(d.header.alpha, d.header.eta)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fold_cfg = FoldInConfig::default();
    let report = heldout_perplexity(
        test,
        &pairs,
        algorithm,
        &fold_cfg,
        derive_seed(r.seed, "heldout-eval"),
        Exec::Parallel,
    )?;

    let mut auc = None;
    let mut map = None;
    match (&r.labels, &split) {
        (Some(path), Some(split)) => {
            let labels = read_labels(path, corpus.num_docs())?;
            let (est, h) = (&pairs[0].0, pairs[0].1);
            if est.num_docs() != split.train.num_docs() {
                bail!("model covers {} documents but the training split has {}", est.num_docs(), split.train.num_docs());
            }
            let folded = fold_in(&split.test, est, algorithm, &h, &fold_cfg, derive_seed(r.seed, "classify-fold-in"), Exec::Parallel)?;
            let train_labels: Vec<usize> = split.train_ids.iter().map(|&i| labels[i]).collect();
            let test_labels: Vec<usize> = split.test_ids.iter().map(|&i| labels[i]).collect();
            let c = classify_and_score(&theta_rows(est), &train_labels, &theta_rows(&folded), &test_labels)?;
            auc = Some(c.mean_auc);
            map = Some(c.mean_average_precision);
        }
        (Some(_), None) => log::warn!("labels ignored with --whole: no training split to learn classes from"),
        _ => {}
    }

    let metrics = RunMetrics {
        algorithm,
        topics: header.topics,
        alpha: header.alpha,
        eta: header.eta,
        seed: header.seed,
        perplexity: report.perplexity,
        auc,
        map,
        seconds: training_seconds(&r.models[0]),
    };
    fs::create_dir_all(&r.out)?;
    let json_path = r.out.join("metrics.json");
    metrics.write_json(create(&json_path)?)?;
    let csv_path = r.out.join("metrics.csv");
    let fresh = !csv_path.exists();
    let f = fs::OpenOptions::new().create(true).append(true).open(&csv_path)?;
    metrics.append_csv(f, fresh)?;
    println!(
        "perplexity {:.4} over {} held-out tokens ({} model{})",
        report.perplexity,
        report.heldout_tokens,
        report.samples_averaged,
        if report.samples_averaged == 1 { "" } else { "s" }
    );
    if let (Some(a), Some(m)) = (auc, map) {
        println!("mean AUC {a:.4}, mean average precision {m:.4}");
    }
    write_manifest(r, "evaluate", vec![json_path, csv_path], start.elapsed().as_secs_f64())?;
    Ok(())
}

#[derive(Serialize)]
struct CellKey<'a> {
    inputs: &'a str,
    config: &'a TrainConfig,
    test_docs: Option<usize>,
    validation_docs: Option<usize>,
}

pub fn grid_cmd(r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    let algorithm = r.algorithm()?;
    let grid = GridSpec {
        alpha_values: r.grid_alpha.clone(),
        eta_values: r.grid_eta.clone(),
        map_shift: 1.0,
    };
    let cells = grid.cells(algorithm)?;
    let base = train_config(r, algorithm, cells[0].0, cells[0].1)?;
    base.validate()?;
    let corpus = load_corpus(r)?;
    let split = make_split(r, &corpus)?;
    let (_, input_hash) = hash_inputs(&input_paths(r))?;
    let cell_dir = r.out.join("cells");
    fs::create_dir_all(&cell_dir)?;

    let mut inner = base.clone();
    inner.exec = Exec::Sequential;
    let keys: Vec<PathBuf> = cells
        .iter()
        .map(|&(alpha, eta)| {
            let mut c = inner.clone();
            c.hyperparams.alpha = alpha;
            c.hyperparams.eta = eta;
            let key = serde_json::to_string(&CellKey {
                inputs: &input_hash,
                config: &c,
                test_docs: r.test_docs,
                validation_docs: r.validation_docs,
            })?;
            Ok(cell_dir.join(format!("{}.json", hash_str(&key))))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut results: Vec<Option<GridCell>> = keys
        .iter()
        .map(|k| {
            let f = File::open(k).ok()?;
            serde_json::from_reader::<_, GridCell>(BufReader::new(f))
                .ok()
                .filter(GridCell::is_valid)
        })
        .collect();
    let resumed = results.iter().filter(|c| c.is_some()).count();
    let pending: Vec<usize> = (0..cells.len()).filter(|&i| results[i].is_none()).collect();
    let fresh = Exec::Parallel.map_range(pending.len(), |p| {
        let (alpha, eta) = cells[pending[p]];
        run_cell(&split, &inner, alpha, eta)
    });
    for (p, cell) in pending.into_iter().zip(fresh) {
        if cell.is_valid() {
            serde_json::to_writer(create(&keys[p])?, &cell)?;
        }
        results[p] = Some(cell);
    }
    let results: Vec<GridCell> = results.into_iter().map(Option::unwrap).collect();
    let best = select_best(&results);

    let csv_path = r.out.join("grid.csv");
    write_grid_csv(&results, create(&csv_path)?)?;
    let mut outputs = vec![csv_path];
    println!("{} cells, {resumed} resumed", results.len());
    match best {
        Some(b) => {
            let c = &results[b];
            let metrics = RunMetrics {
                algorithm,
                topics: r.topics,
                alpha: c.alpha,
                eta: c.eta,
                seed: r.seed,
                perplexity: c.test_perplexity.unwrap_or(f64::NAN),
                auc: None,
                map: None,
                seconds: c.seconds,
            };
            let best_path = r.out.join("best.json");
            metrics.write_json(create(&best_path)?)?;
            outputs.push(best_path);
            println!(
                "best alpha {} eta {}: validation perplexity {:.4}, test perplexity {:.4}",
                c.alpha,
                c.eta,
                c.validation_perplexity.unwrap_or(f64::NAN),
                c.test_perplexity.unwrap_or(f64::NAN)
            );
        }
        None => bail!("no grid cell trained successfully"),
    }
    write_manifest(r, "grid", outputs, start.elapsed().as_secs_f64())?;
    Ok(())
}

pub fn bench_cmd(r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    let corpus = load_corpus(r)?;
    let split = make_split(r, &corpus)?;
    let configs = r
        .algorithms
        .iter()
        .map(|&a| {
            let shift = if a == Algorithm::Map && (r.alpha <= 1.0 || r.eta <= 1.0) { 1.0 } else { 0.0 };
            let c = train_config(r, a, r.alpha + shift, r.eta + shift)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let threshold = match r.threshold {
        Some(t) => t,
        None => {
            // loosest of the best perplexities each learner reaches
            let mut worst: f64 = 0.0;
            for c in &configs {
                let m = train(&split.train, Some(&split.validation), c)?;
                let p = m.best_validation_perplexity.unwrap_or(f64::INFINITY);
                println!("probe {}: best validation perplexity {p:.3}", c.algorithm);
                worst = worst.max(p);
            }
            worst * 1.01
        }
    };
    println!("threshold {threshold:.3}");
    let results = timing_benchmark(&configs, &split.train, &split.validation, threshold, r.runs)?;
    fs::create_dir_all(&r.out)?;
    let path = r.out.join("timing.csv");
    let mut w = create(&path)?;
    writeln!(w, "algorithm,threshold,seconds,sweeps,seconds_per_sweep,runs")?;
    println!("{:<8} {:>12} {:>8} {:>14}", "algo", "seconds", "sweeps", "s/sweep");
    for t in &results {
        let secs = t.seconds.map_or("timeout".to_string(), |s| format!("{s:.4}"));
        let sweeps = t.sweeps.map_or("timeout".to_string(), |s| s.to_string());
        writeln!(w, "{},{threshold},{secs},{sweeps},{:.6},{}", t.algorithm, t.seconds_per_sweep, t.runs)?;
        println!("{:<8} {secs:>12} {sweeps:>8} {:>14.6}", t.algorithm.name(), t.seconds_per_sweep);
    }
    w.flush()?;
    write_manifest(r, "bench", vec![path], start.elapsed().as_secs_f64())?;
    Ok(())
}

#[derive(Serialize)]
struct OracleInstance {
    tokens: usize,
    identity_residual: f64,
    max_marginal_gap: f64,
    max_coassignment_gap: f64,
}

#[derive(Serialize)]
struct OracleReport {
    topics: usize,
    alpha: f64,
    eta: f64,
    samples: usize,
    instances: Vec<OracleInstance>,
    pass: bool,
}

fn random_tiny_corpus(seed: u64) -> Corpus {
    use rand::Rng as _;
    let mut rng = rng_from_seed(seed);
    let docs = rng.random_range(1..=2usize);
    let words = rng.random_range(2..=4usize);
    let tokens = rng.random_range(docs.max(3)..=8usize);
    let mut counts = vec![vec![0u32; words]; docs];
    for t in 0..tokens {
        // every document gets at least one token
        let j = if t < docs { t } else { rng.random_range(0..docs) };
        counts[j][rng.random_range(0..words)] += 1;
    }
    let entries = counts
        .iter()
        .enumerate()
        .flat_map(|(j, row)| {
            row.iter().enumerate().filter(|(_, &c)| c > 0).map(move |(w, &c)| Entry {
                doc: j as u32,
                word: w as u32,
                count: c,
            })
        })
        .collect();
    Corpus::new(docs, words, entries).expect("non-empty documents")
}

fn max_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn oracle_cmd(r: &Resolved) -> anyhow::Result<()> {
    let start = Instant::now();
    let h = Hyperparams::new(r.alpha, r.eta)?;
    let corpora: Vec<Corpus> = match &r.docword {
        Some(_) => vec![load_corpus(r)?],
        None => (0..20).map(|i| random_tiny_corpus(derive_indexed(r.seed, "oracle-instance", i))).collect(),
    };
    let mut instances = Vec::new();
    for (i, c) in corpora.iter().enumerate() {
        let exact = callen_oracle(c, r.topics, &h)?;
        let (marg, co) = cgs_empirical_marginals(c, r.topics, &h, 1000, r.samples, derive_indexed(r.seed, "oracle-chain", i as u64))?;
        instances.push(OracleInstance {
            tokens: c.total_tokens() as usize,
            identity_residual: exact.identity_residual,
            max_marginal_gap: max_gap(&marg, &exact.marginals),
            max_coassignment_gap: max_gap(&co, &exact.coassignment),
        });
    }
    let pass = instances
        .iter()
        .all(|i| i.identity_residual < 1e-10 && i.max_marginal_gap < 0.01);
    for (n, i) in instances.iter().enumerate() {
        println!(
            "instance {n}: {} tokens, identity residual {:.2e}, marginal gap {:.4}, co-assignment gap {:.4}",
            i.tokens, i.identity_residual, i.max_marginal_gap, i.max_coassignment_gap
        );
    }
    println!("{}", if pass { "oracle check passed" } else { "oracle check FAILED" });
    fs::create_dir_all(&r.out)?;
    let path = r.out.join("oracle.json");
    serde_json::to_writer_pretty(
        create(&path)?,
        &OracleReport {
            topics: r.topics,
            alpha: r.alpha,
            eta: r.eta,
            samples: r.samples,
            instances,
            pass,
        },
    )?;
    write_manifest(r, "oracle-check", vec![path], start.elapsed().as_secs_f64())?;
    Ok(())
}
