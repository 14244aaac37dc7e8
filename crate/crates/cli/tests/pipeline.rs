use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gctm::synth::{planted_corpus, SynthConfig};

const SETTINGS: &str = "\
# small pipeline fixture
corpus.vocab_size = 100
corpus.window = 10
model.k = 5
model.encoder_hidden = 16
augment.hidden_dim = 8
train.epochs = 2
train.batch_size = 64
train.eval_every = 1
train.seeds = 1,2
";

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus.jsonl");
        let mut f = std::fs::File::create(&corpus).unwrap();
        for doc in planted_corpus(&SynthConfig { n_docs: 500, seed: 4, ..Default::default() }) {
            writeln!(f, "{}", serde_json::to_string(&doc).unwrap()).unwrap();
        }
        let config = root.join("gctm.conf");
        std::fs::write(&config, format!("{SETTINGS}data.input = {}\n", corpus.display())).unwrap();
        Self { _dir: dir, root, config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gctm"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(self.out(out))
            .args(args)
            .env("RUST_LOG", "info")
            .env_remove("GCTM_CACHE_DIR")
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> Output {
        let o = self.run(out, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const STAGES: [&str; 6] = ["preprocess", "build-graphs", "train", "eval", "ablate", "report"];

#[test]
fn preprocess_writes_artifacts_and_hits_cache() {
    let ws = Workspace::new();
    ws.ok("a", &["preprocess"]);
    for f in ["corpus.json", "tfidf.tsv", "cooccurrence.tsv", "cooccurrence.json"] {
        assert!(ws.out("a/preprocess").join(f).is_file(), "missing {f}");
    }
    assert!(ws.out("a/manifest.json").is_file());
    let before = snapshot(&ws.out("a"));
    let again = ws.ok("a", &["preprocess"]);
    assert!(stderr(&again).contains("preprocess: cache hit"), "{}", stderr(&again));
    assert_eq!(snapshot(&ws.out("a")), before);
}

#[test]
fn missing_input_is_an_input_error() {
    let ws = Workspace::new();
    let o = ws.run("a", &["preprocess", "--override", "data.input=/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = ws.run("a", &["preprocess", "--override", "model.k=zero"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stages_require_their_upstream() {
    let ws = Workspace::new();
    assert_eq!(ws.run("a", &["build-graphs"]).status.code(), Some(3));
    ws.ok("a", &["preprocess"]);
    ws.ok("a", &["build-graphs"]);
    let o = ws.run("a", &["eval"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("train"));
    assert_eq!(ws.run("a", &["report"]).status.code(), Some(3));

    // a changed graph threshold makes the stored graphs stale
    let o = ws.run("a", &["train", "--override", "graph.mu_pos=0.3"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn numeric_fault_exit_code() {
    let ws = Workspace::new();
    ws.ok("a", &["preprocess"]);
    ws.ok("a", &["build-graphs"]);
    let o = ws.run("a", &["train", "--seed", "1", "--override", "train.lr=1e250", "--override", "train.clip_norm=0"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(ws.out("a/train/seed-1/last_good.json").is_file());
}

#[test]
fn full_pipeline_is_reproducible() {
    let ws = Workspace::new();
    for stage in STAGES {
        ws.ok("a", &[stage]);
    }
    let report = std::fs::read_to_string(ws.out("a/report/report.txt")).unwrap();
    assert!(report.contains("NPMI") && report.contains(" ± "), "{report}");
    for f in ["eval/report.json", "eval/seed-1/topics.txt", "eval/seed-2/representations/test/theta.tsv", "report/report.json"] {
        assert!(ws.out("a").join(f).is_file(), "missing {f}");
    }

    let results: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(ws.out("a/ablate/results.json")).unwrap()).unwrap();
    assert_eq!(results.len(), 4);
    let table = std::fs::read_to_string(ws.out("a/ablate/table.txt")).unwrap();
    for label in ["Full", "w/o cl", "w/o neg", "w/o pos"] {
        assert_eq!(table.lines().filter(|l| l.starts_with(label)).count(), 1, "{table}");
    }

    let first = snapshot(&ws.out("a"));
    for stage in &STAGES[..5] {
        let o = ws.ok("a", &[stage]);
        assert!(stderr(&o).contains("cache hit"), "{stage}: {}", stderr(&o));
    }
    ws.ok("a", &["report"]);
    assert_eq!(snapshot(&ws.out("a")), first);

    for stage in STAGES {
        ws.ok("b", &[stage]);
    }
    let second = snapshot(&ws.out("b"));
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (path, bytes) in &first {
        assert!(second[path] == *bytes, "{} differs between runs", path.display());
    }
}
