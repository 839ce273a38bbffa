use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topika::model_state::{ModelDump, ModelHeader};
use topika::synth::{generate_lda, SynthSpec};
use topika::{EstimatorTag, TopicEstimates};

const W: usize = 50;

struct Fixture {
    dir: tempfile::TempDir,
    docword: PathBuf,
    labels: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_lda(&SynthSpec {
        num_docs: 160,
        vocab_size: W,
        topics: 3,
        doc_length: 40,
        alpha: 0.1,
        eta: 0.1,
        seed: 9,
    });
    let docword = dir.path().join("docword.txt");
    s.corpus.write_uci(fs::File::create(&docword).unwrap()).unwrap();
    let labels = dir.path().join("labels.txt");
    let text: Vec<String> = s.labels.iter().map(|l| l.to_string()).collect();
    fs::write(&labels, text.join("\n") + "\n").unwrap();
    Fixture { dir, docword, labels }
}

impl Fixture {
    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn topika(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topika"))
        .args(args)
        .output()
        .expect("run topika")
}

fn ok(args: &[&str]) -> String {
    let o = topika(args);
    assert!(
        o.status.success(),
        "topika {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Trace CSV without the wall-clock column.
fn trace_without_seconds(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let secs = header.iter().position(|h| *h == "seconds").unwrap();
    text.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(secs);
            f.join(",")
        })
        .collect()
}

#[test]
fn train_is_reproducible_from_the_seed() {
    let f = fixture();
    let (a, b, c) = (f.out("a"), f.out("b"), f.out("c"));
    for out in [&a, &b] {
        ok(&["train", "--docword", p(&f.docword), "--algo", "cgs", "--topics", "3", "--iters", "30", "--seed", "4", "--out", p(out)]);
    }
    ok(&["train", "--docword", p(&f.docword), "--algo", "cgs", "--topics", "3", "--iters", "30", "--seed", "5", "--out", p(&c)]);
    let model = |d: &Path| fs::read(d.join("model.json")).unwrap();
    assert_eq!(model(&a), model(&b));
    assert_ne!(model(&a), model(&c));
    assert_eq!(trace_without_seconds(&a.join("trace.csv")), trace_without_seconds(&b.join("trace.csv")));
    for name in ["top_words.csv", "train-manifest.json"] {
        assert!(a.join(name).exists(), "{name} missing");
    }
}

#[test]
fn map_with_small_eta_exits_with_an_error() {
    let f = fixture();
    let o = topika(&["train", "--docword", p(&f.docword), "--algo", "map", "--alpha", "1.5", "--eta", "0.5", "--out", p(&f.out("m"))]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("eta > 1"), "{err}");
    assert!(!f.out("m").join("model.json").exists());
}

#[test]
fn missing_input_exits_with_an_error() {
    let f = fixture();
    let o = topika(&["train", "--docword", p(&f.out("nope.txt")), "--out", p(&f.out("x"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn uniform_topics_have_perplexity_w() {
    let f = fixture();
    let k = 3;
    let est = TopicEstimates::from_parts(
        k,
        W,
        1,
        vec![1.0 / W as f64; W * k],
        vec![1.0 / k as f64; k],
        EstimatorTag::Collapsed,
    )
    .unwrap();
    let header = ModelHeader {
        vocab_size: W,
        topics: k,
        num_docs: 1,
        alpha: 0.1,
        eta: 0.1,
        estimator_tag: EstimatorTag::Collapsed,
        algorithm: "cvb0".into(),
        iterations: 0,
        seed: 0,
    };
    let model = f.out("uniform.json");
    ModelDump::new(header, &est).write(fs::File::create(&model).unwrap()).unwrap();
    let out = f.out("u");
    ok(&["evaluate", "--docword", p(&f.docword), "--model", p(&model), "--whole", "--out", p(&out)]);
    let perplexity = json(&out.join("metrics.json"))["perplexity"].as_f64().unwrap();
    assert!((perplexity - W as f64).abs() < 1e-9, "{perplexity}");
}

#[test]
fn evaluate_twice_gives_identical_metrics() {
    let f = fixture();
    let out = f.out("e");
    ok(&["train", "--docword", p(&f.docword), "--algo", "cvb0", "--topics", "3", "--iters", "40", "--out", p(&out)]);
    let model = out.join("model.json");
    let eval = || {
        ok(&["evaluate", "--docword", p(&f.docword), "--model", p(&model), "--labels", p(&f.labels), "--out", p(&out)]);
        fs::read(out.join("metrics.json")).unwrap()
    };
    let first = eval();
    assert_eq!(first, eval());
    let m = json(&out.join("metrics.json"));
    assert!(m["auc"].as_f64().unwrap() > 0.8, "{m}");
    let train_secs = json(&out.join("train-manifest.json"))["seconds"].as_f64().unwrap();
    assert_eq!(m["seconds"].as_f64().unwrap(), train_secs);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn one_cell_grid_matches_train_then_evaluate() {
    let f = fixture();
    let (t, g) = (f.out("t"), f.out("g"));
    let common = ["--docword", p(&f.docword), "--algo", "cvb0", "--topics", "3", "--iters", "40", "--seed", "2"];
    let mut train = vec!["train"];
    train.extend(common);
    train.extend(["--alpha", "0.3", "--eta", "0.05", "--out", p(&t)]);
    ok(&train);
    ok(&["evaluate", "--docword", p(&f.docword), "--model", p(&t.join("model.json")), "--seed", "2", "--out", p(&t)]);
    let mut grid = vec!["grid"];
    grid.extend(common);
    grid.extend(["--grid-alpha", "0.3", "--grid-eta", "0.05", "--out", p(&g)]);
    ok(&grid);
    let evaluated = json(&t.join("metrics.json"))["perplexity"].as_f64().unwrap();
    let best = json(&g.join("best.json"))["perplexity"].as_f64().unwrap();
    assert_eq!(evaluated, best);
}

#[test]
fn grid_resumes_completed_cells() {
    let f = fixture();
    let g = f.out("g");
    let args = [
        "grid", "--docword", p(&f.docword), "--algo", "cvb0", "--topics", "3", "--iters", "30",
        "--grid-alpha", "0.1,0.5", "--grid-eta", "0.05,0.1", "--out", p(&g),
    ];
    assert!(ok(&args).contains("4 cells, 0 resumed"));
    let first = fs::read_to_string(g.join("grid.csv")).unwrap();
    let cells: Vec<PathBuf> = fs::read_dir(g.join("cells")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(cells.len(), 4);
    fs::remove_file(&cells[0]).unwrap();
    assert!(ok(&args).contains("4 cells, 3 resumed"));
    let second = fs::read_to_string(g.join("grid.csv")).unwrap();
    // every column but the wall clock is unchanged
    let strip = |s: &str| -> Vec<String> {
        s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn bench_reports_timeouts_for_unreachable_thresholds() {
    let f = fixture();
    let b = f.out("b");
    let out = ok(&[
        "bench", "--docword", p(&f.docword), "--algo", "cvb0,vb", "--topics", "3", "--iters", "10",
        "--threshold", "1.0", "--runs", "1", "--out", p(&b),
    ]);
    assert!(out.contains("timeout"), "{out}");
    let csv = fs::read_to_string(b.join("timing.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.contains("timeout")), "{csv}");
}

#[test]
fn config_file_is_layered_under_flags() {
    let f = fixture();
    let out = f.out("cfg");
    let cfg = f.out("run.toml");
    fs::write(&cfg, format!("docword = {:?}\nalgo = [\"vb\"]\ntopics = 4\niters = 6\n", p(&f.docword))).unwrap();
    ok(&["train", "--config", p(&cfg), "--topics", "2", "--out", p(&out)]);
    let m = json(&out.join("train-manifest.json"));
    assert_eq!(m["config"]["topics"], 2);
    assert_eq!(m["config"]["iters"], 6);
    assert_eq!(m["config"]["algorithms"][0], "vb");
    let hash = m["inputs"][0]["hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn manifest_reproduces_the_run() {
    let f = fixture();
    let (a, b) = (f.out("a"), f.out("b"));
    ok(&["train", "--docword", p(&f.docword), "--algo", "cgs", "--topics", "3", "--iters", "25", "--seed", "11", "--out", p(&a)]);
    ok(&["train", "--config", p(&a.join("train-manifest.json")), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());
    let m = json(&b.join("train-manifest.json"));
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["config"]["algorithms"][0], "cgs");
}
