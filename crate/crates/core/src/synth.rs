//! Seeded corpora with planted topics, for smoke runs and tests.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{DocEmbeddingTable, RawDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    /// Words shared by every topic.
    pub common_words: usize,
    pub doc_len: usize,
    /// Probability that a token comes from the document's main topic.
    pub main_share: f64,
    /// Probability that a token is a common word.
    pub common_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 500,
            n_topics: 5,
            words_per_topic: 12,
            common_words: 10,
            doc_len: 40,
            main_share: 0.7,
            common_share: 0.1,
            seed: 0,
        }
    }
}

/// A letters-only word that survives tokenization: `q` plus three letters.
pub fn pseudo_word(n: usize) -> String {
    let mut s = String::from("q");
    let mut x = n;
    let mut tail = [b'a'; 3];
    for slot in tail.iter_mut().rev() {
        *slot = b'a' + (x % 26) as u8;
        x /= 26;
    }
    s.push_str(std::str::from_utf8(&tail).expect("ascii"));
    s
}

/// Word ids of topic `t`, then the common block after all topics.
pub fn topic_words(cfg: &SynthConfig, t: usize) -> Vec<String> {
    (0..cfg.words_per_topic)
        .map(|j| pseudo_word(t * cfg.words_per_topic + j))
        .collect()
}

pub fn common_words(cfg: &SynthConfig) -> Vec<String> {
    let base = cfg.n_topics * cfg.words_per_topic;
    (0..cfg.common_words).map(|j| pseudo_word(base + j)).collect()
}

/// Each document draws most tokens from one main topic (its label), a few
/// from a second topic and the rest from the common block.
pub fn planted_corpus(cfg: &SynthConfig) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics: Vec<Vec<String>> = (0..cfg.n_topics).map(|t| topic_words(cfg, t)).collect();
    let common = common_words(cfg);
    (0..cfg.n_docs)
        .map(|d| {
            let main = d % cfg.n_topics;
            let other = (main + 1 + rng.gen_range(0..cfg.n_topics.max(2) - 1)) % cfg.n_topics;
            let tokens: Vec<&str> = (0..cfg.doc_len)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let pool = if u < cfg.main_share {
                        &topics[main]
                    } else if u < cfg.main_share + cfg.common_share && !common.is_empty() {
                        &common
                    } else {
                        &topics[other]
                    };
                    pool[rng.gen_range(0..pool.len())].as_str()
                })
                .collect();
            RawDocument {
                id: format!("doc{d:05}"),
                text: tokens.join(" "),
                label: Some(format!("topic{main}")),
                split: None,
            }
        })
        .collect()
}

/// Embeddings clustered by label: a random centre per label plus noise.
pub fn planted_embeddings(docs: &[RawDocument], dim: usize, noise: f64, seed: u64) -> DocEmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut vectors = BTreeMap::new();
    for doc in docs {
        let label = doc.label.clone().unwrap_or_default();
        let centre = centres
            .entry(label)
            .or_insert_with(|| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .clone();
        let v = centre
            .iter()
            .map(|c| c + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        vectors.insert(doc.id.clone(), v);
    }
    DocEmbeddingTable { dim, vectors }
}
