//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 5 to 7 run on built-in fixtures. Criteria 1 to 4 need the
//! 20 Newsgroups corpus as JSONL in `GCTM_20NG` (optional embeddings in
//! `GCTM_20NG_EMBEDDINGS`, optional second labelled corpus in
//! `GCTM_BINARY_CORPUS`, optional config overrides file in
//! `GCTM_ACCEPTANCE_CONFIG`). Without it they print BLOCKED and do not fail
//! the run unless `GCTM_ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use gctm::augment::GraphPair;
use gctm::config::{Ablation, Contextual, GctmConfig, SampleMode};
use gctm::corpus::{count_cooccurrence, load_embeddings, read_jsonl, Corpus, PreprocessConfig};
use gctm::eval::similarity_diagnostic;
use gctm::graphs::{build_word_graph, compute_npmi, Polarity};
use gctm::ntm::{Features, Gctm, LossSettings, ModelSpec, Noise};
use gctm::tape::Tape;
use gctm::trainer::{ablate, run_multi_seed, training_documents, train, AblationResult, TrainData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NPMI_TOL: f64 = 1e-12;
const DWIP_TOL: f64 = 1e-12;
const SIMPLIFIED_GCN_TOL: f64 = 1e-10;
const KL_TOL: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const SIMPLEX_TOL: f64 = 1e-6;
const KL_FLOOR: f64 = -1e-9;
const SUITE_BUDGET: Duration = Duration::from_secs(60);

const NPMI_FLOOR_CONTEXTUAL: f64 = 0.30;
const NPMI_FLOOR_PLAIN: f64 = 0.26;
const ABLATION_GAP: f64 = 0.005;
const NEGATIVE_SIMILARITY_CEILING: f64 = 0.2;
const ACCURACY_FLOOR: f64 = 0.45;
const BINARY_ACCURACY_FLOOR: f64 = 0.75;
const SEEDS: usize = 5;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let small = small_fixture(None);
    let smoke = smoke_fixture();
    let npmi = npmi_oracle_error(&small.corpus, 8).max(npmi_oracle_error(&smoke.corpus, 10));
    let dwip = dwip_per_edge_error(&small).max(dwip_per_edge_error(&smoke));
    let gcn = (1..=3).map(|l| simplified_gcn_error(&small, l)).fold(0.0, f64::max);
    let coherence = (0..4).all(|s| coherence_matches_exactly(&small, s)) && coherence_matches_exactly(&smoke, 9);
    let kl = kl_quadrature_error();
    let elapsed = start.elapsed();
    let ok = npmi <= NPMI_TOL
        && dwip <= DWIP_TOL
        && gcn <= SIMPLIFIED_GCN_TOL
        && coherence
        && kl <= KL_TOL
        && elapsed < SUITE_BUDGET;
    verdict(
        ok,
        format!(
            "npmi {npmi:.1e}, dwip {dwip:.1e}, simplified gcn {gcn:.1e}, coherence exact {coherence}, kl {kl:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut groups = 0;
    for mode in [SampleMode::Gcn, SampleMode::EdgePerturb] {
        for ablation in Ablation::ALL {
            for (name, rel) in gradient_check(mode, ablation) {
                groups += 1;
                if rel >= worst.0 {
                    worst = (rel, format!("{mode}/{ablation}/{name}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst.0 <= GRAD_TOL && elapsed < SUITE_BUDGET,
        format!(
            "{groups} group checks, worst relative error {:.1e} ({}), {:.1}s",
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Outcome {
    let fx = small_fixture(Some(4));
    let mut simplex_dev = 0.0f64;
    let mut kl_min = f64::INFINITY;
    for seed in 0..20u64 {
        for mode in [SampleMode::Gcn, SampleMode::EdgePerturb] {
            let cfg = gradient_config(mode);
            let spec = ModelSpec::from_config(&cfg, fx.corpus.vocab_size(), Some(4));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Gctm::init(spec, None, &mut rng);
            let docs: Vec<usize> = (0..fx.corpus.len()).filter(|d| (d + seed as usize).is_multiple_of(3)).collect();
            let batch = fx.features.batch(&docs);
            let noise = Noise::sample(docs.len(), cfg.model.k, &mut rng);
            let mut tape = Tape::new();
            let bound = tape.bind(&model.params);
            let pass = model
                .forward(&mut tape, &bound, &batch, &fx.graphs, Some(&noise), LossSettings::from_config(&cfg))
                .unwrap();
            let thetas = [Some(pass.theta), pass.theta_pos, pass.theta_neg];
            for t in thetas.into_iter().flatten() {
                for row in tape.value(t).rows() {
                    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                    simplex_dev = simplex_dev.max((row.sum() - 1.0).abs()).max((-min).max(0.0));
                }
            }
            kl_min = kl_min.min(tape.value(pass.elbo.kl).iter().copied().fold(f64::INFINITY, f64::min));
        }
    }

    let smoke = smoke_fixture();
    let mut symmetric = true;
    let mut nested = true;
    for (corpus, window) in [(&fx.corpus, 8), (&smoke.corpus, 10), (&smoke.corpus, 20)] {
        let stats = count_cooccurrence(corpus, window).unwrap();
        let dense = stats.pair_counts.to_dense();
        symmetric &= dense == dense.t();
        let npmi = compute_npmi(&stats).unwrap();
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let mut previous: Option<BTreeSet<(usize, usize)>> = None;
            for step in 0..=20 {
                let edges: BTreeSet<_> = build_word_graph(&npmi, polarity, step as f64 * 0.05)
                    .unwrap()
                    .edges()
                    .into_iter()
                    .collect();
                if let Some(p) = &previous {
                    nested &= edges.is_subset(p);
                }
                previous = Some(edges);
            }
        }
    }

    let mut cfg = GctmConfig::default();
    cfg.model.k = 5;
    cfg.model.encoder_hidden = 16;
    cfg.augment.hidden_dim = 8;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 32;
    cfg.train.eval_every = 1;
    cfg.train.contextual = Contextual::Off;
    let data = TrainData {
        corpus: &fx.corpus,
        features: &fx.features,
        graphs: &fx.graphs,
    };
    let a = train(&data, &cfg, 11, None).unwrap();
    let b = train(&data, &cfg, 11, None).unwrap();
    let deterministic = a.model.params == b.model.params
        && a.record.validation == b.record.validation
        && a.record.epochs.iter().zip(&b.record.epochs).all(|(x, y)| x.losses == y.losses);

    verdict(
        simplex_dev <= SIMPLEX_TOL && kl_min >= KL_FLOOR && symmetric && nested && deterministic,
        format!(
            "simplex deviation {simplex_dev:.1e}, min KL {kl_min:.3e}, co-occurrence symmetric {symmetric}, thresholds nested {nested}, deterministic {deterministic}; randomized cases in the `properties` target"
        ),
    )
}

struct RealCorpus {
    cfg: GctmConfig,
    corpus: Corpus,
    features: Features,
    graphs: GraphPair,
}

impl RealCorpus {
    fn data(&self) -> TrainData<'_> {
        TrainData {
            corpus: &self.corpus,
            features: &self.features,
            graphs: &self.graphs,
        }
    }
}

fn acceptance_config() -> GctmConfig {
    let mut cfg = GctmConfig::default();
    cfg.model.k = 50;
    if let Ok(path) = std::env::var("GCTM_ACCEPTANCE_CONFIG") {
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"));
        cfg.apply_str(&text).unwrap();
    }
    cfg
}

fn load_corpus(path: PathBuf, embeddings: Option<PathBuf>) -> RealCorpus {
    let mut cfg = acceptance_config();
    cfg.data.input = Some(path.clone());
    cfg.data.embeddings = embeddings.clone();
    let file = std::fs::File::open(&path).unwrap_or_else(|e| panic!("cannot open {}: {e}", path.display()));
    let raw = read_jsonl(std::io::BufReader::new(file)).unwrap();
    let table = match (cfg.contextual_enabled(), &embeddings) {
        (true, Some(p)) => Some(load_embeddings(p).unwrap()),
        _ => None,
    };
    let corpus = Corpus::build(raw, &cfg.corpus, &PreprocessConfig::default()).unwrap();
    let features = Features::build(&corpus, cfg.model.recon_target, table.as_ref()).unwrap();
    let npmi = compute_npmi(&count_cooccurrence(&corpus, cfg.corpus.window_length).unwrap()).unwrap();
    let graphs = GraphPair {
        positive: build_word_graph(&npmi, Polarity::Positive, cfg.graph.mu_pos).unwrap(),
        negative: build_word_graph(&npmi, Polarity::Negative, cfg.graph.mu_neg).unwrap(),
    };
    RealCorpus {
        cfg,
        corpus,
        features,
        graphs,
    }
}

fn report_for(results: &[AblationResult], ablation: Ablation) -> &gctm::trainer::MultiSeedReport {
    &results.iter().find(|r| r.ablation == ablation).expect("all variants run").report
}

fn real_criteria(real: &RealCorpus) -> [Outcome; 4] {
    let started = Instant::now();
    let results = ablate(&real.data(), &real.cfg, true, None).unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let full = report_for(&results, Ablation::Full);
    let contextual = real.cfg.contextual_enabled();
    let floor = if contextual { NPMI_FLOOR_CONTEXTUAL } else { NPMI_FLOOR_PLAIN };
    let c1 = verdict(
        full.npmi.mean >= floor && full.runs.len() == SEEDS,
        format!(
            "full NPMI {} over {} seeds (contextual {contextual}, floor {floor}); ablation suite {minutes:.1} min",
            full.npmi.mean_pm_std(),
            full.runs.len()
        ),
    );

    let means: Vec<f64> = [Ablation::Full, Ablation::NoNeg, Ablation::NoPos, Ablation::NoCl]
        .iter()
        .map(|&a| report_for(&results, a).npmi.mean)
        .collect();
    let c2 = verdict(
        means[0] > means[1] && means[1] > means[2] && means[2] > means[3] && means[0] - means[3] >= ABLATION_GAP,
        format!(
            "full {:.4}, w/o neg {:.4}, w/o pos {:.4}, w/o cl {:.4}",
            means[0], means[1], means[2], means[3]
        ),
    );

    let docs = training_documents(&real.corpus);
    let sim = similarity_diagnostic(&real.features.tfidf, &docs, &real.graphs).unwrap();
    let c3 = verdict(
        sim.mean_negative <= NEGATIVE_SIMILARITY_CEILING && sim.mean_negative < sim.mean_positive,
        format!(
            "negative {:.4}, positive {:.4} over {} documents",
            sim.mean_negative, sim.mean_positive, sim.n_docs
        ),
    );

    let c4 = match &full.accuracy {
        None => Outcome::Fail("corpus carries no labels on the train/test splits".into()),
        Some(acc) => {
            let mut ok = acc.mean >= ACCURACY_FLOOR;
            let mut detail = format!("accuracy {}", acc.mean_pm_std());
            if let Ok(path) = std::env::var("GCTM_BINARY_CORPUS") {
                let binary = load_corpus(path.into(), None);
                let mut cfg = binary.cfg.clone();
                cfg.train.ablation = Ablation::Full;
                let report = run_multi_seed(&binary.data(), &cfg, &cfg.train.seeds, true, None).unwrap();
                match report.accuracy {
                    Some(b) => {
                        ok &= b.mean >= BINARY_ACCURACY_FLOOR;
                        detail.push_str(&format!("; binary corpus {}", b.mean_pm_std()));
                    }
                    None => {
                        ok = false;
                        detail.push_str("; binary corpus has no labels");
                    }
                }
            }
            verdict(ok, detail)
        }
    };
    [c1, c2, c3, c4]
}

fn main() -> ExitCode {
    let strict = std::env::var("GCTM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut outcomes: Vec<(u8, &str, Outcome)> = Vec::new();
    let names = [
        "topic coherence on 20 Newsgroups",
        "ablation ordering",
        "sample similarity diagnostic",
        "downstream classification",
    ];
    match std::env::var_os("GCTM_20NG") {
        Some(path) => {
            let real = load_corpus(path.into(), std::env::var_os("GCTM_20NG_EMBEDDINGS").map(PathBuf::from));
            for (i, o) in real_criteria(&real).into_iter().enumerate() {
                outcomes.push((i as u8 + 1, names[i], o));
            }
        }
        None => {
            for (i, name) in names.iter().enumerate() {
                outcomes.push((i as u8 + 1, name, Outcome::Blocked("corpus not supplied (set GCTM_20NG)".into())));
            }
        }
    }
    outcomes.push((5, "oracle equivalence", criterion_5()));
    outcomes.push((6, "gradient check", criterion_6()));
    outcomes.push((7, "invariants", criterion_7()));

    println!("acceptance summary");
    let mut failed = false;
    for (n, name, outcome) in &outcomes {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed = true;
                ("FAIL", d)
            }
            Outcome::Blocked(d) => {
                failed |= strict;
                ("BLOCKED", d)
            }
        };
        println!("[{tag}] criterion {n}: {name}: {detail}");
    }
    println!(
        "[ADVISORY] sensitivity sweeps (alpha, GCN depth): not run here; use `gctm train --override` grids on the full corpus"
    );
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
