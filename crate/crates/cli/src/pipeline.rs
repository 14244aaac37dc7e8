//! Stage implementations. Every stage hashes its configuration keys together
//! with its upstream hash and skips work when the manifest already holds a
//! matching entry.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use gctm::augment::GraphPair;
use gctm::config::{Ablation, GctmConfig};
use gctm::corpus::{
    compute_tfidf, count_cooccurrence, load_embeddings, read_jsonl, write_embeddings, CooccurrenceStats, Corpus,
    DocEmbeddingTable, PreprocessConfig, Split,
};
use gctm::eval::{
    export_representations, format_table, similarity_diagnostic, MetricReport, SimilarityReport,
};
use gctm::graphs::{build_word_graph, compute_npmi, Polarity, WordGraph, WordGraphMeta};
use gctm::ntm::{Features, Gctm};
use gctm::params::Checkpoint;
use gctm::trainer::{
    self, ablate, evaluate, model_spec, training_documents, AblationResult, MultiSeedReport, RunRecord,
    SeedFailure, SeedRun, TrainData,
};
use gctm::SparseMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::{hash_file, hash_parts, PipelineManifest};
use crate::Failure;

const STAGE_FORMAT: &str = "gctm-stages-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CooccurrenceMeta {
    window_length: usize,
    total_windows: u64,
    word_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainSummary {
    seeds: Vec<u64>,
    completed: Vec<u64>,
    failures: Vec<SeedFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EvalReport {
    results: MultiSeedReport,
    similarity: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FinalReport {
    npmi: Option<MetricReport>,
    accuracy: Option<MetricReport>,
    similarity: Option<SimilarityReport>,
    ablation: Vec<(Ablation, MetricReport)>,
}

pub struct Pipeline {
    root: PathBuf,
    cfg: GctmConfig,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::input(format!("{}: {e}", path.display()))
}

impl Pipeline {
    pub fn new(root: PathBuf, cfg: GctmConfig) -> Result<Self, Failure> {
        std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self { root, cfg })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn create_parent(&self, rel: &str) -> Result<PathBuf, Failure> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), Failure> {
        let path = self.create_parent(rel)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<(), Failure> {
        let path = self.create_parent(rel)?;
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn write_sparse(&self, rel: &str, m: &SparseMatrix) -> Result<(), Failure> {
        let path = self.create_parent(rel)?;
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        m.write_tsv(BufWriter::new(file)).map_err(|e| io_err(&path, e))
    }

    fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T, Failure> {
        let path = self.path(rel);
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| io_err(&path, e))
    }

    fn read_sparse(&self, rel: &str) -> Result<SparseMatrix, Failure> {
        let path = self.path(rel);
        let file = File::open(&path).map_err(|e| io_err(&path, e))?;
        Ok(SparseMatrix::read_tsv(BufReader::new(file))?)
    }

    fn record_stage(&self, stage: &str, hash: &str, upstream: Option<&str>, artifacts: Vec<String>) -> Result<(), Failure> {
        let mut m = PipelineManifest::load(&self.root)?;
        m.stages.insert(
            stage.to_string(),
            crate::manifest::StageEntry {
                hash: hash.to_string(),
                upstream: upstream.map(str::to_string),
                artifacts,
            },
        );
        m.config = self
            .cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        m.save(&self.root)
    }

    // ---- hashes ----

    fn preprocess_hash(&self) -> Result<String, Failure> {
        let input = self
            .cfg
            .data
            .input
            .as_ref()
            .ok_or_else(|| Failure::input("data.input is not set"))?;
        let input_hash = hash_file(input)?;
        let emb_hash = match (&self.cfg.data.embeddings, self.cfg.contextual_enabled()) {
            (Some(p), true) => hash_file(p)?,
            (None, true) => return Err(Failure::input("train.contextual is on but data.embeddings is not set")),
            (_, false) => String::new(),
        };
        let keys = self.cfg.hash_keys(&["corpus."]);
        Ok(hash_parts(&[
            STAGE_FORMAT,
            "preprocess",
            &keys,
            &input_hash,
            &emb_hash,
        ]))
    }

    fn graphs_hash(&self, pre: &str) -> String {
        hash_parts(&[STAGE_FORMAT, "graphs", pre, &self.cfg.hash_keys(&["graph."])])
    }

    fn model_keys(&self) -> String {
        self.cfg.hash_keys(&["augment.", "model.", "train."])
    }

    fn train_hash(&self, graphs: &str) -> String {
        hash_parts(&[STAGE_FORMAT, "train", graphs, &self.model_keys()])
    }

    fn eval_hash(&self, train: &str) -> String {
        hash_parts(&[STAGE_FORMAT, "eval", train])
    }

    fn ablate_hash(&self, graphs: &str) -> String {
        hash_parts(&[STAGE_FORMAT, "ablate", graphs, &self.model_keys()])
    }

    /// Hashes of preprocess and graphs, requiring both to be fresh.
    fn graph_chain(&self, m: &PipelineManifest) -> Result<(String, String), Failure> {
        let pre = self.preprocess_hash()?;
        m.require(&self.root, "preprocess", &pre, "preprocess")?;
        let graphs = self.graphs_hash(&pre);
        m.require(&self.root, "graphs", &graphs, "build-graphs")?;
        Ok((pre, graphs))
    }

    // ---- artifact loading ----

    fn load_corpus(&self) -> Result<Corpus, Failure> {
        self.read_json("preprocess/corpus.json")
    }

    fn load_features(&self, corpus: &Corpus) -> Result<Features, Failure> {
        let table = if self.cfg.contextual_enabled() {
            let path = self.path("preprocess/embeddings.tsv");
            Some(load_embeddings(&path)?)
        } else {
            None
        };
        Ok(Features::build(corpus, self.cfg.model.recon_target, table.as_ref())?)
    }

    fn load_graph(&self, polarity: Polarity) -> Result<WordGraph, Failure> {
        let tag = polarity.as_str();
        let meta: WordGraphMeta = self.read_json(&format!("graphs/{tag}.json"))?;
        let adjacency = self.read_sparse(&format!("graphs/{tag}.adjacency.tsv"))?;
        Ok(WordGraph::from_adjacency(&meta, adjacency)?)
    }

    fn load_graphs(&self) -> Result<GraphPair, Failure> {
        Ok(GraphPair {
            positive: self.load_graph(Polarity::Positive)?,
            negative: self.load_graph(Polarity::Negative)?,
        })
    }

    // ---- stages ----

    pub fn preprocess(&self) -> Result<(), Failure> {
        let hash = self.preprocess_hash()?;
        let m = PipelineManifest::load(&self.root)?;
        if m.fresh(&self.root, "preprocess", &hash).is_some() {
            log::info!("preprocess: cache hit");
            return Ok(());
        }
        let input = self.cfg.data.input.as_ref().expect("checked by preprocess_hash");
        let file = File::open(input).map_err(|e| io_err(input, e))?;
        let raw = read_jsonl(BufReader::new(file))?;
        let corpus = Corpus::build(raw, &self.cfg.corpus, &PreprocessConfig::default())?;
        let tfidf = compute_tfidf(&corpus);
        let stats = count_cooccurrence(&corpus, self.cfg.corpus.window_length)?;
        log::info!(
            "preprocess: {} documents, {} words, {} windows",
            corpus.len(),
            corpus.vocab_size(),
            stats.total_windows
        );

        let mut artifacts = vec![
            "preprocess/corpus.json".to_string(),
            "preprocess/tfidf.tsv".to_string(),
            "preprocess/cooccurrence.tsv".to_string(),
            "preprocess/cooccurrence.json".to_string(),
        ];
        if self.cfg.contextual_enabled() {
            let path = self.cfg.data.embeddings.as_ref().expect("checked by preprocess_hash");
            let table = load_embeddings(path)?;
            table.require_coverage(corpus.documents().iter().map(|d| d.id.as_str()))?;
            let kept = DocEmbeddingTable {
                dim: table.dim,
                vectors: corpus
                    .documents()
                    .iter()
                    .map(|d| (d.id.clone(), table.get(&d.id).expect("covered").to_vec()))
                    .collect(),
            };
            let out = self.create_parent("preprocess/embeddings.tsv")?;
            write_embeddings(&kept, &out)?;
            artifacts.push("preprocess/embeddings.tsv".into());
        }
        self.write_json("preprocess/corpus.json", &corpus)?;
        self.write_sparse("preprocess/tfidf.tsv", &tfidf)?;
        self.write_sparse("preprocess/cooccurrence.tsv", &stats.pair_counts)?;
        self.write_json(
            "preprocess/cooccurrence.json",
            &CooccurrenceMeta {
                window_length: stats.window_length,
                total_windows: stats.total_windows,
                word_counts: stats.word_counts.clone(),
            },
        )?;
        self.record_stage("preprocess", &hash, None, artifacts)
    }

    pub fn build_graphs(&self) -> Result<(), Failure> {
        let m = PipelineManifest::load(&self.root)?;
        let pre = self.preprocess_hash()?;
        m.require(&self.root, "preprocess", &pre, "preprocess")?;
        let hash = self.graphs_hash(&pre);
        if m.fresh(&self.root, "graphs", &hash).is_some() {
            log::info!("build-graphs: cache hit");
            return Ok(());
        }
        let meta: CooccurrenceMeta = self.read_json("preprocess/cooccurrence.json")?;
        let stats = CooccurrenceStats {
            window_length: meta.window_length,
            pair_counts: self.read_sparse("preprocess/cooccurrence.tsv")?,
            word_counts: meta.word_counts,
            total_windows: meta.total_windows,
        };
        let npmi = compute_npmi(&stats)?;
        self.write_sparse("graphs/npmi.tsv", npmi.scores())?;
        let mut artifacts = vec!["graphs/npmi.tsv".to_string()];
        for (polarity, mu) in [
            (Polarity::Positive, self.cfg.graph.mu_pos),
            (Polarity::Negative, self.cfg.graph.mu_neg),
        ] {
            let g = build_word_graph(&npmi, polarity, mu)?;
            let tag = polarity.as_str();
            log::info!("build-graphs: {tag} graph has {} edges", g.edges().len());
            for (suffix, m) in [("adjacency", &g.adjacency), ("normalized", &g.normalized)] {
                let rel = format!("graphs/{tag}.{suffix}.tsv");
                self.write_sparse(&rel, m)?;
                artifacts.push(rel);
            }
            let rel = format!("graphs/{tag}.json");
            self.write_json(&rel, &g.meta())?;
            artifacts.push(rel);
        }
        self.record_stage("graphs", &hash, Some(&pre), artifacts)
    }

    pub fn train(&self) -> Result<(), Failure> {
        let m = PipelineManifest::load(&self.root)?;
        let (_, graphs_hash) = self.graph_chain(&m)?;
        let hash = self.train_hash(&graphs_hash);
        if m.fresh(&self.root, "train", &hash).is_some() {
            log::info!("train: cache hit");
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let features = self.load_features(&corpus)?;
        let graphs = self.load_graphs()?;
        let data = TrainData {
            corpus: &corpus,
            features: &features,
            graphs: &graphs,
        };
        let mut artifacts = vec!["train/summary.json".to_string()];
        let mut completed = Vec::new();
        let mut failures = Vec::new();
        let mut last_error = None;
        for &seed in &self.cfg.train.seeds {
            let dir = format!("train/seed-{seed}");
            match trainer::train(&data, &self.cfg, seed, Some(&self.path(&dir))) {
                Ok(mut out) => {
                    if let Some(t) = out.record.wall_time_secs.take() {
                        log::info!("train: seed {seed} finished in {t:.1}s, best epoch {}", out.record.best_epoch);
                    }
                    out.record.best_checkpoint = Some(PathBuf::from(format!("{dir}/best.json")));
                    self.write_json(&format!("{dir}/run_record.json"), &out.record)?;
                    artifacts.push(format!("{dir}/best.json"));
                    artifacts.push(format!("{dir}/run_record.json"));
                    completed.push(seed);
                }
                Err(e) => {
                    log::error!("train: seed {seed} failed: {e}");
                    failures.push(SeedFailure {
                        seed,
                        error: e.to_string(),
                    });
                    last_error = Some(e);
                }
            }
        }
        self.write_json(
            "train/summary.json",
            &TrainSummary {
                seeds: self.cfg.train.seeds.clone(),
                completed: completed.clone(),
                failures,
            },
        )?;
        if completed.is_empty() {
            return Err(last_error.map(Failure::from).unwrap_or_else(|| Failure::input("no seeds")));
        }
        self.record_stage("train", &hash, Some(&graphs_hash), artifacts)
    }

    pub fn eval(&self) -> Result<(), Failure> {
        let m = PipelineManifest::load(&self.root)?;
        let (_, graphs_hash) = self.graph_chain(&m)?;
        let train_hash = self.train_hash(&graphs_hash);
        m.require(&self.root, "train", &train_hash, "train")?;
        let hash = self.eval_hash(&train_hash);
        if m.fresh(&self.root, "eval", &hash).is_some() {
            log::info!("eval: cache hit");
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let features = self.load_features(&corpus)?;
        let graphs = self.load_graphs()?;
        let data = TrainData {
            corpus: &corpus,
            features: &features,
            graphs: &graphs,
        };
        let summary: TrainSummary = self.read_json("train/summary.json")?;
        let spec = model_spec(&data, &self.cfg);
        let mut runs = Vec::new();
        let mut artifacts = vec!["eval/report.json".to_string(), "eval/table.txt".to_string()];
        for &seed in &summary.completed {
            let dir = format!("train/seed-{seed}");
            let record: RunRecord = self.read_json(&format!("{dir}/run_record.json"))?;
            let ckpt = Checkpoint::load(self.path(&format!("{dir}/best.json")))?;
            let model = Gctm::from_params(spec.clone(), ckpt.params()?)?;
            let eval = evaluate(&model, &data, &self.cfg, seed, true)?;
            let out = format!("eval/seed-{seed}");
            self.write_text(&format!("{out}/topics.txt"), &eval.topics.to_text())?;
            artifacts.push(format!("{out}/topics.txt"));
            for split in [Split::Train, Split::Test] {
                let reps = export_representations(&model, &corpus, &features, &corpus.split_indices(split))?;
                let rel = format!("{out}/representations/{}", split.as_str());
                reps.write(&self.path(&rel))?;
                artifacts.push(format!("{rel}/theta.tsv"));
                artifacts.push(format!("{rel}/labels.tsv"));
            }
            log::info!("eval: seed {seed} NPMI {:.4}", eval.coherence.mean);
            runs.push(SeedRun { record, eval });
        }
        let similarity = similarity_diagnostic(&features.tfidf, &training_documents(&corpus), &graphs)?;
        let results = MultiSeedReport::from_runs(runs, summary.failures, &self.cfg.config_hash());
        let mut rows = vec![("NPMI".to_string(), vec![Some(results.npmi.clone())])];
        if let Some(acc) = &results.accuracy {
            rows.push(("Accuracy".to_string(), vec![Some(acc.clone())]));
        }
        let mut table = format_table("Metric", &["GCTM"], &rows);
        table.push_str(&format!(
            "prototype/negative cosine {:.3}, prototype/positive cosine {:.3}\n",
            similarity.mean_negative, similarity.mean_positive
        ));
        self.write_json("eval/report.json", &EvalReport { results, similarity })?;
        self.write_text("eval/table.txt", &table)?;
        print!("{table}");
        self.record_stage("eval", &hash, Some(&train_hash), artifacts)
    }

    pub fn ablate(&self) -> Result<(), Failure> {
        let m = PipelineManifest::load(&self.root)?;
        let (_, graphs_hash) = self.graph_chain(&m)?;
        let hash = self.ablate_hash(&graphs_hash);
        if m.fresh(&self.root, "ablate", &hash).is_some() {
            log::info!("ablate: cache hit");
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let features = self.load_features(&corpus)?;
        let graphs = self.load_graphs()?;
        let data = TrainData {
            corpus: &corpus,
            features: &features,
            graphs: &graphs,
        };
        let mut results = ablate(&data, &self.cfg, false, None)?;
        for r in &mut results {
            for run in &mut r.report.runs {
                run.record.wall_time_secs = None;
            }
        }
        let table = ablation_table(&results);
        self.write_json("ablate/results.json", &results)?;
        self.write_text("ablate/table.txt", &table)?;
        print!("{table}");
        self.record_stage(
            "ablate",
            &hash,
            Some(&graphs_hash),
            vec!["ablate/results.json".into(), "ablate/table.txt".into()],
        )
    }

    pub fn report(&self) -> Result<(), Failure> {
        let eval: Option<EvalReport> = self
            .path("eval/report.json")
            .exists()
            .then(|| self.read_json("eval/report.json"))
            .transpose()?;
        let ablation: Option<Vec<AblationResult>> = self
            .path("ablate/results.json")
            .exists()
            .then(|| self.read_json("ablate/results.json"))
            .transpose()?;
        if eval.is_none() && ablation.is_none() {
            return Err(Failure::stale("nothing to report; run `gctm eval` or `gctm ablate` first"));
        }
        let mut text = String::new();
        if let Some(e) = &eval {
            text.push_str(&format_table(
                "Model",
                &["NPMI", "Accuracy"],
                &[(
                    format!("GCTM (k={})", self.cfg.model.k),
                    vec![Some(e.results.npmi.clone()), e.results.accuracy.clone()],
                )],
            ));
            text.push_str(&format!(
                "\nSample similarity: negatives {:.3}, positives {:.3} ({} documents)\n\n",
                e.similarity.mean_negative, e.similarity.mean_positive, e.similarity.n_docs
            ));
        }
        if let Some(a) = &ablation {
            text.push_str(&ablation_table(a));
        }
        let report = FinalReport {
            npmi: eval.as_ref().map(|e| e.results.npmi.clone()),
            accuracy: eval.as_ref().and_then(|e| e.results.accuracy.clone()),
            similarity: eval.as_ref().map(|e| e.similarity.clone()),
            ablation: ablation
                .unwrap_or_default()
                .into_iter()
                .map(|r| (r.ablation, r.report.npmi))
                .collect(),
        };
        self.write_json("report/report.json", &report)?;
        self.write_text("report/report.txt", &text)?;
        print!("{text}");
        Ok(())
    }
}

fn ablation_table(results: &[AblationResult]) -> String {
    let rows: Vec<(String, Vec<Option<MetricReport>>)> = results
        .iter()
        .map(|r| (r.ablation.label().to_string(), vec![Some(r.report.npmi.clone())]))
        .collect();
    format_table("Ablation", &["NPMI"], &rows)
}
