//! Corpus ingestion: raw documents, vocabulary, splits and per-document features.

mod cooccur;
mod embeddings;
mod tokenize;

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use cooccur::{count_cooccurrence, CooccurrenceStats};
pub use embeddings::{load_embeddings, write_embeddings, DocEmbeddingTable};
pub use tokenize::{tokenize_and_clean, PreprocessConfig};

/// One record of the JSON-lines corpus format.
///
/// `split` is optional; documents that carry it keep that assignment and the
/// rest are distributed by the seeded ratio split. If validation ends up
/// empty, a seeded share of the training documents is moved there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(format!("corpus line {}", i + 1), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("corpus line {}", i + 1), e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Bijective word ↔ id map. Ids follow document-frequency rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Self { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Self::from_words(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

/// Keeps the `max_size` words with the highest document frequency; ties go to
/// the lexicographically smaller word. Fewer distinct words than `max_size`
/// keeps them all.
pub fn build_vocabulary<'a, I>(docs: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size == 0 {
        return Err(Error::Config("vocabulary size must be positive".into()));
    }
    let mut df: HashMap<&str, u64> = HashMap::new();
    for tokens in docs {
        let distinct: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        for w in distinct {
            *df.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = df.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w.to_owned()).collect())
}

/// Seeded random split of `n` documents. Train and validation sizes are
/// rounded from the ratios; test takes the remainder.
pub fn split_corpus(n: usize, ratios: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    validate_ratios(ratios)?;
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (rank, &doc) in order.iter().enumerate() {
        splits[doc] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("split ratios must be nonnegative: {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1 (got {sum}): {ratios:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub window_length: usize,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            window_length: 20,
            split_ratios: [0.48, 0.12, 0.40],
            split_seed: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusRepr {
    vocabulary: Vocabulary,
    documents: Vec<Document>,
    splits: Vec<Split>,
}

/// Preprocessed documents restricted to the vocabulary, with split assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CorpusRepr", into = "CorpusRepr")]
pub struct Corpus {
    documents: Vec<Document>,
    vocabulary: Vocabulary,
    splits: Vec<Split>,
    token_ids: Vec<Vec<u32>>,
}

impl TryFrom<CorpusRepr> for Corpus {
    type Error = Error;

    fn try_from(r: CorpusRepr) -> Result<Self> {
        Corpus::from_parts(r.documents, r.vocabulary, r.splits)
    }
}

impl From<Corpus> for CorpusRepr {
    fn from(c: Corpus) -> Self {
        CorpusRepr {
            vocabulary: c.vocabulary,
            documents: c.documents,
            splits: c.splits,
        }
    }
}

impl Corpus {
    /// Checks that ids are unique, every token is in the vocabulary and the
    /// split table covers every document.
    pub fn from_parts(
        documents: Vec<Document>,
        vocabulary: Vocabulary,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if splits.len() != documents.len() {
            return Err(Error::Dimension(format!(
                "{} split assignments for {} documents",
                splits.len(),
                documents.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut token_ids = Vec::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Data(format!("duplicate document id `{}`", doc.id)));
            }
            let ids = doc
                .tokens
                .iter()
                .map(|t| {
                    vocabulary.id(t).map(|i| i as u32).ok_or_else(|| {
                        Error::Data(format!("token `{t}` of `{}` not in vocabulary", doc.id))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            token_ids.push(ids);
        }
        Ok(Self {
            documents,
            vocabulary,
            splits,
            token_ids,
        })
    }

    /// Tokenizes, splits, builds the vocabulary from the training split and
    /// prunes every document to it. Documents left empty are kept.
    pub fn build(
        raw: Vec<RawDocument>,
        config: &CorpusConfig,
        rules: &PreprocessConfig,
    ) -> Result<Self> {
        validate_ratios(config.split_ratios)?;
        let splits = assign_splits(&raw, config)?;
        let tokenized: Vec<Vec<String>> = raw
            .iter()
            .map(|d| tokenize_and_clean(&d.text, rules))
            .collect();
        let vocabulary = build_vocabulary(
            tokenized
                .iter()
                .zip(&splits)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(t, _)| t.as_slice()),
            config.vocab_size,
        )?;
        if vocabulary.len() < config.vocab_size {
            log::warn!(
                "only {} distinct training words; vocabulary smaller than configured {}",
                vocabulary.len(),
                config.vocab_size
            );
        }
        let documents = raw
            .into_iter()
            .zip(tokenized)
            .map(|(r, tokens)| Document {
                id: r.id,
                tokens: tokens
                    .into_iter()
                    .filter(|t| vocabulary.id(t).is_some())
                    .collect(),
                label: r.label,
            })
            .collect();
        Self::from_parts(documents, vocabulary, splits)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn token_ids(&self, doc: usize) -> &[u32] {
        &self.token_ids[doc]
    }

    pub fn split_of(&self, doc_id: &str) -> Option<Split> {
        self.documents
            .iter()
            .position(|d| d.id == doc_id)
            .map(|i| self.splits[i])
    }

    /// Document indices of `split`, in corpus order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Training-split document frequency of every vocabulary word.
    pub fn train_document_frequencies(&self) -> Vec<u64> {
        let mut df = vec![0u64; self.vocab_size()];
        let mut seen = vec![usize::MAX; self.vocab_size()];
        for d in self.split_indices(Split::Train) {
            for &w in &self.token_ids[d] {
                if seen[w as usize] != d {
                    seen[w as usize] = d;
                    df[w as usize] += 1;
                }
            }
        }
        df
    }
}

fn assign_splits(raw: &[RawDocument], config: &CorpusConfig) -> Result<Vec<Split>> {
    let free: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].split.is_none()).collect();
    let fixed: HashSet<Split> = raw.iter().filter_map(|d| d.split).collect();
    // Free documents only fill the splits the fixed assignments leave open.
    let mut ratios = config.split_ratios;
    if !fixed.is_empty() {
        for (i, s) in Split::ALL.iter().enumerate() {
            if fixed.contains(s) {
                ratios[i] = 0.0;
            }
        }
        let total: f64 = ratios.iter().sum();
        if total > 0.0 {
            ratios.iter_mut().for_each(|r| *r /= total);
        } else {
            ratios = config.split_ratios;
        }
    }
    let drawn = split_corpus(free.len(), ratios, config.split_seed)?;
    let mut splits: Vec<Split> = raw.iter().map(|d| d.split.unwrap_or(Split::Test)).collect();
    for (slot, s) in free.into_iter().zip(drawn) {
        splits[slot] = s;
    }
    carve_validation(&mut splits, config);
    Ok(splits)
}

/// Moves a seeded `r_val / (r_train + r_val)` share of the training documents
/// to validation when fixed assignments left validation empty.
fn carve_validation(splits: &mut [Split], config: &CorpusConfig) {
    let [r_train, r_val, _] = config.split_ratios;
    if r_val <= 0.0 || splits.contains(&Split::Validation) {
        return;
    }
    let mut train: Vec<usize> = (0..splits.len()).filter(|&i| splits[i] == Split::Train).collect();
    let n_val = (train.len() as f64 * r_val / (r_train + r_val)).round() as usize;
    if n_val == 0 || n_val >= train.len() {
        return;
    }
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(config.split_seed));
    for &i in &train[..n_val] {
        splits[i] = Split::Validation;
    }
    log::info!("validation carved from {} fixed training documents: {n_val}", train.len());
}

/// Smoothed inverse document frequency from the training split:
/// `ln((1 + N_train) / (1 + df)) + 1`.
pub fn idf_weights(corpus: &Corpus) -> Vec<f64> {
    let n_train = corpus.split_indices(Split::Train).len() as f64;
    corpus
        .train_document_frequencies()
        .into_iter()
        .map(|df| ((1.0 + n_train) / (1.0 + df as f64)).ln() + 1.0)
        .collect()
}

/// Raw term counts, `N × v`.
pub fn compute_bow(corpus: &Corpus) -> SparseMatrix {
    weighted_counts(corpus, |_| 1.0)
}

/// `tf · idf` with raw counts as tf, `N × v`. Rows of empty documents are zero.
pub fn compute_tfidf(corpus: &Corpus) -> SparseMatrix {
    let idf = idf_weights(corpus);
    weighted_counts(corpus, |w| idf[w])
}

fn weighted_counts(corpus: &Corpus, weight: impl Fn(usize) -> f64) -> SparseMatrix {
    let mut entries = Vec::new();
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for d in 0..corpus.len() {
        counts.clear();
        for &w in corpus.token_ids(d) {
            *counts.entry(w).or_default() += 1;
        }
        entries.extend(
            counts
                .iter()
                .map(|(&w, &c)| (d, w as usize, c as f64 * weight(w as usize))),
        );
    }
    SparseMatrix::new(corpus.len(), corpus.vocab_size(), entries)
        .expect("counts are finite and unique per (doc, word)")
}
