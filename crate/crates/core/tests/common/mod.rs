//! Fixtures and independent reference implementations shared by the
//! integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use gctm::augment::{edge_perturbation, edge_perturbation_per_edge, gcn_forward, GcnStack, GraphPair};
use gctm::config::{Ablation, Activation, GctmConfig, ReconTarget, SampleMode};
use gctm::corpus::{count_cooccurrence, Corpus, CorpusConfig, PreprocessConfig, Split};
use gctm::eval::{extract_topics, topic_coherence_npmi, CoherenceReference};
use gctm::graphs::{build_word_graph, compute_npmi, Polarity};
use gctm::ntm::{Features, Gctm, LossSettings, ModelSpec, Noise};
use gctm::params::ParamStore;
use gctm::synth::{planted_corpus, planted_embeddings, SynthConfig};
use gctm::SparseMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub corpus: Corpus,
    pub features: Features,
    pub graphs: GraphPair,
}

pub fn corpus_config(vocab: usize, window: usize) -> CorpusConfig {
    CorpusConfig {
        vocab_size: vocab,
        window_length: window,
        split_ratios: [0.6, 0.2, 0.2],
        split_seed: 3,
    }
}

pub fn build_fixture(synth: &SynthConfig, corpus_cfg: &CorpusConfig, mu: f64, embedding_dim: Option<usize>) -> Fixture {
    let raw = planted_corpus(synth);
    let table = embedding_dim.map(|d| planted_embeddings(&raw, d, 0.3, synth.seed + 1));
    let corpus = Corpus::build(raw, corpus_cfg, &PreprocessConfig::default()).unwrap();
    let features = Features::build(&corpus, ReconTarget::Tfidf, table.as_ref()).unwrap();
    let stats = count_cooccurrence(&corpus, corpus_cfg.window_length).unwrap();
    let npmi = compute_npmi(&stats).unwrap();
    let graphs = GraphPair {
        positive: build_word_graph(&npmi, Polarity::Positive, mu).unwrap(),
        negative: build_word_graph(&npmi, Polarity::Negative, mu).unwrap(),
    };
    Fixture {
        corpus,
        features,
        graphs,
    }
}

/// 120 documents over a 30-word vocabulary in five planted topics.
pub fn small_fixture(embedding_dim: Option<usize>) -> Fixture {
    let synth = SynthConfig {
        n_docs: 120,
        n_topics: 5,
        words_per_topic: 5,
        common_words: 5,
        doc_len: 25,
        seed: 11,
        ..Default::default()
    };
    build_fixture(&synth, &corpus_config(30, 8), 0.2, embedding_dim)
}

/// 500 documents, the training smoke-test corpus.
pub fn smoke_fixture() -> Fixture {
    let synth = SynthConfig {
        n_docs: 500,
        seed: 5,
        ..Default::default()
    };
    build_fixture(&synth, &corpus_config(2000, 10), 0.2, None)
}

// ---------------------------------------------------------------------------
// Dense brute-force oracles
// ---------------------------------------------------------------------------

/// Window statistics recounted with sets over every window, into dense tables.
pub struct DenseCounts {
    pub windows: f64,
    pub word: Vec<f64>,
    pub pair: Array2<f64>,
}

pub fn dense_window_counts(corpus: &Corpus, window: usize) -> DenseCounts {
    let v = corpus.vocab_size();
    let mut word = vec![0.0; v];
    let mut pair = Array2::zeros((v, v));
    let mut windows = 0.0;
    for d in 0..corpus.len() {
        if corpus.splits()[d] != Split::Train || corpus.token_ids(d).is_empty() {
            continue;
        }
        let t = corpus.token_ids(d);
        let starts = if t.len() <= window { 1 } else { t.len() - window + 1 };
        for s in 0..starts {
            let set: BTreeSet<u32> = t[s..(s + window).min(t.len())].iter().copied().collect();
            windows += 1.0;
            for &a in &set {
                word[a as usize] += 1.0;
                for &b in &set {
                    if a != b {
                        pair[[a as usize, b as usize]] += 1.0;
                    }
                }
            }
        }
    }
    DenseCounts { windows, word, pair }
}

/// Largest deviation of `compute_npmi` from the formula over dense counts;
/// a structural mismatch (stored vs absent) counts as infinity.
pub fn npmi_oracle_error(corpus: &Corpus, window: usize) -> f64 {
    let stats = count_cooccurrence(corpus, window).unwrap();
    let npmi = compute_npmi(&stats).unwrap();
    let dense = dense_window_counts(corpus, window);
    let v = corpus.vocab_size();
    let mut worst = 0.0f64;
    for i in 0..v {
        for j in 0..v {
            let c = dense.pair[[i, j]];
            let stored = npmi.scores().contains(i, j);
            if c == 0.0 {
                if stored {
                    return f64::INFINITY;
                }
                continue;
            }
            if !stored {
                return f64::INFINITY;
            }
            let pij = c / dense.windows;
            let pi = dense.word[i] / dense.windows;
            let pj = dense.word[j] / dense.windows;
            let expected = if pij == 1.0 {
                1.0
            } else {
                ((pij / (pi * pj)).ln() / -pij.ln()).clamp(-1.0, 1.0)
            };
            worst = worst.max((npmi.scores().get(i, j) - expected).abs());
        }
    }
    worst
}

pub fn dense_normalize(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if deg[i] == 0.0 || deg[j] == 0.0 {
            0.0
        } else {
            a[[i, j]] / (deg[i] * deg[j]).sqrt()
        }
    })
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random symmetric nonnegative graph with self-loops on `n` nodes.
pub fn random_graph(n: usize, density: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        a[[i, i]] = 1.0;
        for j in i + 1..n {
            if rng.gen::<f64>() < density {
                let w = rng.gen_range(0.2..1.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Two-layer GCN on a random 6-node graph against dense step-by-step products.
pub fn gcn_oracle_error() -> f64 {
    let a = random_graph(6, 0.5, 21);
    let a_norm = dense_normalize(&a);
    let sparse = gctm::graphs::normalize_adjacency(&SparseMatrix::from_dense(&a).unwrap()).unwrap();
    let stack = GcnStack::new(Polarity::Positive, 6, 4, 3, 2, Activation::Relu, Activation::Relu);
    let w0 = random_matrix(6, 4, 1);
    let w1 = random_matrix(4, 3, 2);
    let mut store = ParamStore::new();
    store.insert(stack.weight_name(0), w0.clone());
    store.insert(stack.weight_name(1), w1.clone());
    let h = gcn_forward(&sparse, &stack, &store).unwrap();
    let relu = |m: Array2<f64>| m.mapv(|x| x.max(0.0));
    let h1 = relu(a_norm.dot(&Array2::eye(6)).dot(&w0));
    let h2 = relu(a_norm.dot(&h1).dot(&w1));
    max_abs_diff(&h, &h2)
}

/// `A_d · Ã±` as a sparse product against the per-edge neighbour sums, over
/// every fixture document and both graphs.
pub fn dwip_per_edge_error(fx: &Fixture) -> f64 {
    let mut worst = 0.0f64;
    for g in [&fx.graphs.positive, &fx.graphs.negative] {
        let x = edge_perturbation(&fx.features.tfidf, &g.normalized).unwrap();
        for d in 0..fx.corpus.len() {
            let doc: Vec<(usize, f64)> = fx.features.tfidf.row(d).iter().map(|&(_, c, w)| (c, w)).collect();
            let p = edge_perturbation_per_edge(&doc, g);
            for (i, pi) in p.iter().enumerate() {
                worst = worst.max((x[[d, i]] - pi).abs());
            }
        }
    }
    worst
}

/// With rectifiers removed, `A_d · H^(L)` equals `(A_d · Ã) · H^(L−1) · W^(L−1)`.
pub fn simplified_gcn_error(fx: &Fixture, layers: usize) -> f64 {
    let v = fx.corpus.vocab_size();
    let mut worst = 0.0f64;
    for (p, g) in [(Polarity::Positive, &fx.graphs.positive), (Polarity::Negative, &fx.graphs.negative)] {
        let stack = GcnStack::new(p, v, 7, 4, layers, Activation::Identity, Activation::Identity);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(layers as u64);
        stack.init_params(&mut store, &mut rng);
        let h_l = gcn_forward(&g.normalized, &stack, &store).unwrap();
        let lhs = fx.features.tfidf.mul_dense(&h_l);
        let prev = if layers == 1 {
            Array2::eye(v)
        } else {
            let shorter = GcnStack {
                dims: stack.dims[..layers].to_vec(),
                ..stack.clone()
            };
            gcn_forward(&g.normalized, &shorter, &store).unwrap()
        };
        let w_last = store.get(&stack.weight_name(layers - 1)).unwrap();
        let perturbed = edge_perturbation(&fx.features.tfidf, &g.normalized).unwrap();
        let rhs = perturbed.dot(&prev).dot(w_last);
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    worst
}

/// Document-level NPMI coherence by scanning every document for every pair.
pub fn brute_force_coherence(corpus: &Corpus, docs: &[usize], topics: &[Vec<usize>]) -> Vec<f64> {
    let sets: Vec<BTreeSet<u32>> = docs.iter().map(|&d| corpus.token_ids(d).iter().copied().collect()).collect();
    let n = docs.len() as f64;
    let df = |w: usize| sets.iter().filter(|s| s.contains(&(w as u32))).count() as f64;
    topics
        .iter()
        .map(|t| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..t.len() {
                for j in i + 1..t.len() {
                    let joint = sets
                        .iter()
                        .filter(|s| s.contains(&(t[i] as u32)) && s.contains(&(t[j] as u32)))
                        .count() as f64;
                    let score = if joint == 0.0 {
                        -1.0
                    } else {
                        let (pij, pi, pj) = (joint / n, df(t[i]) / n, df(t[j]) / n);
                        if pij >= 1.0 {
                            1.0
                        } else {
                            ((pij.ln() - pi.ln() - pj.ln()) / -pij.ln()).clamp(-1.0, 1.0)
                        }
                    };
                    sum += score;
                    pairs += 1;
                }
            }
            sum / pairs as f64
        })
        .collect()
}

/// Whether the library coherence equals the brute-force count bit for bit.
pub fn coherence_matches_exactly(fx: &Fixture, seed: u64) -> bool {
    let k = 6;
    let beta = random_matrix(k, fx.corpus.vocab_size(), seed);
    let topics = extract_topics(&beta, fx.corpus.vocabulary(), 10).unwrap();
    let docs = fx.corpus.split_indices(Split::Train);
    let reference = CoherenceReference::new(&fx.corpus, &docs, "train").unwrap();
    let report = topic_coherence_npmi(&topics, &reference);
    let oracle = brute_force_coherence(&fx.corpus, &docs, &topics.word_ids());
    let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
    report.per_topic == oracle && report.mean == mean
}

/// `KL(N(μ, σ²) ‖ N(0, 1))` per dimension by composite Simpson quadrature.
pub fn kl_quadrature(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| {
            let s = (0.5 * lv).exp();
            let (lo, hi) = (m - 14.0 * s, m + 14.0 * s);
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let f = |z: f64| {
                let log_q = -0.5 * ((z - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                let log_p = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
                log_q.exp() * (log_q - log_p)
            };
            let mut acc = f(lo) + f(hi);
            for i in 1..n {
                let z = lo + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(z);
            }
            acc * h / 3.0
        })
        .sum()
}

/// Largest gap between the closed-form KL and quadrature over random posteriors.
pub fn kl_quadrature_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let mu: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..1.5)).collect();
        let closed: f64 = mu
            .iter()
            .zip(&lv)
            .map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l))
            .sum();
        let mut t = gctm::tape::Tape::new();
        let muv = t.constant(Array2::from_shape_vec((1, 4), mu.clone()).unwrap());
        let lvv = t.constant(Array2::from_shape_vec((1, 4), lv.clone()).unwrap());
        let kl = gctm::ntm::kl_divergence(&mut t, gctm::ntm::Posterior { mu: muv, logvar: lvv });
        let lib = t.value(kl)[[0, 0]];
        assert!((lib - closed).abs() < 1e-12);
        worst = worst.max((lib - kl_quadrature(&mu, &lv)).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

pub fn gradient_config(mode: SampleMode) -> GctmConfig {
    let mut cfg = GctmConfig::default();
    cfg.model.k = 5;
    cfg.model.encoder_hidden = 12;
    cfg.augment.mode = mode;
    cfg.augment.gcn_layers = 2;
    cfg.augment.hidden_dim = 8;
    cfg.train.gamma = 1.0;
    cfg.train.alpha = 0.5f64.exp();
    cfg.train.contextual = gctm::config::Contextual::On;
    cfg
}

/// Per parameter group: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub fn gradient_check(mode: SampleMode, ablation: Ablation) -> BTreeMap<String, f64> {
    let fx = small_fixture(Some(4));
    let mut cfg = gradient_config(mode);
    cfg.train.ablation = ablation;
    let v = fx.corpus.vocab_size();
    assert_eq!(v, 30);
    let spec = ModelSpec::from_config(&cfg, v, Some(4));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let docs: Vec<usize> = (0..fx.corpus.len())
        .filter(|&d| !fx.corpus.token_ids(d).is_empty())
        .take(6)
        .collect();
    let background = fx.features.background_log_frequencies(&docs);
    let model = Gctm::init(spec, Some(&background), &mut rng);
    let batch = fx.features.batch(&docs);
    let noise = Noise::sample(docs.len(), 5, &mut rng);
    let settings = LossSettings::from_config(&cfg);
    let (_, analytic) = model.loss_and_gradients(&batch, &fx.graphs, Some(&noise), settings).unwrap();

    let h = 1e-6;
    let mut out = BTreeMap::new();
    for (name, g) in &analytic {
        let mut probe = model.clone();
        let mut numeric = Array2::zeros(g.raw_dim());
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let base = probe.params.get(name).unwrap()[[r, c]];
            probe.params.get_mut(name).unwrap()[[r, c]] = base + h;
            let up = probe.loss(&batch, &fx.graphs, Some(&noise), settings).unwrap().total;
            probe.params.get_mut(name).unwrap()[[r, c]] = base - h;
            let down = probe.loss(&batch, &fx.graphs, Some(&noise), settings).unwrap().total;
            probe.params.get_mut(name).unwrap()[[r, c]] = base;
            numeric[[r, c]] = (up - down) / (2.0 * h);
        }
        let norm = |m: &Array2<f64>| m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = norm(g).max(norm(&numeric));
        let rel = if denom == 0.0 { 0.0 } else { norm(&(g - &numeric)) / denom };
        out.insert(name.clone(), rel);
    }
    out
}
