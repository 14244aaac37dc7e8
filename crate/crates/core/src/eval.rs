//! Topic extraction, document-level NPMI coherence, the sample-similarity
//! diagnostic, representation export and random-forest classification.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use smartcore::ensemble::random_forest_classifier::{
    RandomForestClassifier, RandomForestClassifierParameters,
};
use smartcore::linalg::basic::matrix::DenseMatrix;

use crate::augment::{edge_perturbation, GraphPair};
use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::graphs::npmi;
use crate::ntm::{Features, Gctm};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWord {
    pub id: usize,
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicList {
    pub topics: Vec<Vec<TopicWord>>,
}

impl TopicList {
    pub fn word_ids(&self) -> Vec<Vec<usize>> {
        self.topics
            .iter()
            .map(|t| t.iter().map(|w| w.id).collect())
            .collect()
    }

    /// One line per topic: `index: w1 w2 ...`.
    pub fn to_text(&self) -> String {
        self.topics
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let words: Vec<&str> = t.iter().map(|w| w.word.as_str()).collect();
                format!("{i}: {}\n", words.join(" "))
            })
            .collect()
    }
}

/// Top `n` words of every row of `beta` (`k × v`), ordered by weight with ties
/// going to the lower word id. `n` is capped at `v`.
pub fn extract_topics(beta: &Array2<f64>, vocab: &Vocabulary, n: usize) -> Result<TopicList> {
    if beta.ncols() != vocab.len() {
        return Err(Error::Dimension(format!(
            "topic-word matrix has {} columns, vocabulary has {} words",
            beta.ncols(),
            vocab.len()
        )));
    }
    let n = n.min(vocab.len());
    let topics = beta
        .rows()
        .into_iter()
        .map(|row| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids.truncate(n);
            ids.into_iter()
                .map(|id| TopicWord {
                    id,
                    word: vocab.word(id).to_owned(),
                    weight: row[id],
                })
                .collect()
        })
        .collect();
    Ok(TopicList { topics })
}

/// Document incidence lists of a reference corpus for document-level NPMI.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReference {
    pub description: String,
    pub n_docs: usize,
    /// Sorted positions (within the reference) of the documents containing each word.
    postings: Vec<Vec<u32>>,
}

impl CoherenceReference {
    pub fn new(corpus: &Corpus, docs: &[usize], description: impl Into<String>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Data("coherence reference corpus is empty".into()));
        }
        let mut postings = vec![Vec::new(); corpus.vocab_size()];
        for (pos, &d) in docs.iter().enumerate() {
            let mut ids: Vec<u32> = corpus.token_ids(d).to_vec();
            ids.sort_unstable();
            ids.dedup();
            for w in ids {
                postings[w as usize].push(pos as u32);
            }
        }
        Ok(Self {
            description: description.into(),
            n_docs: docs.len(),
            postings,
        })
    }

    pub fn document_frequency(&self, w: usize) -> usize {
        self.postings[w].len()
    }

    pub fn co_document_frequency(&self, a: usize, b: usize) -> usize {
        let (x, y) = (&self.postings[a], &self.postings[b]);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// Document-level NPMI of a word pair; never co-occurring pairs score −1.
    pub fn pair_npmi(&self, a: usize, b: usize) -> f64 {
        let joint = self.co_document_frequency(a, b);
        if joint == 0 {
            return -1.0;
        }
        let n = self.n_docs as f64;
        npmi(
            joint as f64 / n,
            self.document_frequency(a) as f64 / n,
            self.document_frequency(b) as f64 / n,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    pub reference: String,
}

/// Mean pairwise NPMI of each topic's words, then the mean over topics.
pub fn topic_coherence_npmi(topics: &TopicList, reference: &CoherenceReference) -> CoherenceReport {
    let per_topic: Vec<f64> = topics
        .word_ids()
        .iter()
        .map(|ids| {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    sum += reference.pair_npmi(ids[i], ids[j]);
                    pairs += 1;
                }
            }
            if pairs == 0 {
                0.0
            } else {
                sum / pairs as f64
            }
        })
        .collect();
    let mean = if per_topic.is_empty() {
        0.0
    } else {
        per_topic.iter().sum::<f64>() / per_topic.len() as f64
    };
    CoherenceReport {
        per_topic,
        mean,
        reference: reference.description.clone(),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub n_docs: usize,
    pub mean_negative: f64,
    pub mean_positive: f64,
    /// Share of documents whose positive sample is closer than the negative one.
    pub fraction_positive_closer: f64,
}

/// Cosine similarity between each TF-IDF prototype and its perturbed samples
/// `A_d · Ã±`. A zero vector on either side counts as similarity 0.
pub fn similarity_diagnostic(tfidf: &SparseMatrix, docs: &[usize], graphs: &GraphPair) -> Result<SimilarityReport> {
    const CHUNK: usize = 256;
    let (mut neg_sum, mut pos_sum, mut closer) = (0.0, 0.0, 0usize);
    for chunk in docs.chunks(CHUNK) {
        let a = tfidf.select_rows(chunk);
        let pos = edge_perturbation(&a, &graphs.positive.normalized)?;
        let neg = edge_perturbation(&a, &graphs.negative.normalized)?;
        for r in 0..chunk.len() {
            let proto = a.dense_row(r);
            let cp = cosine(&proto, pos.row(r).as_slice().expect("standard layout"));
            let cn = cosine(&proto, neg.row(r).as_slice().expect("standard layout"));
            pos_sum += cp;
            neg_sum += cn;
            if cp > cn {
                closer += 1;
            }
        }
    }
    let n = docs.len().max(1) as f64;
    Ok(SimilarityReport {
        n_docs: docs.len(),
        mean_negative: neg_sum / n,
        mean_positive: pos_sum / n,
        fraction_positive_closer: closer as f64 / n,
    })
}

/// Evaluation-mode `θ` for a set of documents with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub doc_ids: Vec<String>,
    pub theta: Array2<f64>,
    pub labels: Option<Vec<String>>,
}

pub fn export_representations(model: &Gctm, corpus: &Corpus, features: &Features, docs: &[usize]) -> Result<Representations> {
    const CHUNK: usize = 512;
    let k = model.spec.topics;
    let mut theta = Array2::zeros((docs.len(), k));
    for (c, chunk) in docs.chunks(CHUNK).enumerate() {
        let t = model.infer_theta(&features.batch(chunk))?;
        theta
            .slice_mut(ndarray::s![c * CHUNK..c * CHUNK + chunk.len(), ..])
            .assign(&t);
    }
    let documents = corpus.documents();
    let labels: Option<Vec<String>> = docs.iter().map(|&d| documents[d].label.clone()).collect();
    if labels.is_none() {
        log::warn!("some exported documents carry no label; classification is disabled");
    }
    Ok(Representations {
        doc_ids: docs.iter().map(|&d| documents[d].id.clone()).collect(),
        theta,
        labels,
    })
}

impl Representations {
    /// `theta.tsv` in the sparse TSV form and `labels.tsv` with `id\tlabel` lines.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sparse = SparseMatrix::from_dense(&self.theta)?;
        let path = dir.join("theta.tsv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        sparse.write_tsv(BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;

        let path = dir.join("labels.tsv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for (i, id) in self.doc_ids.iter().enumerate() {
            let label = self.labels.as_ref().map_or("", |l| l[i].as_str());
            writeln!(w, "{id}\t{label}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Fits a 500-tree random forest on `train` and returns accuracy on `test`.
pub fn classify(
    train: &Array2<f64>,
    train_labels: &[String],
    test: &Array2<f64>,
    test_labels: &[String],
    seed: u64,
) -> Result<f64> {
    classify_with_trees(train, train_labels, test, test_labels, seed, 500)
}

pub fn classify_with_trees(
    train: &Array2<f64>,
    train_labels: &[String],
    test: &Array2<f64>,
    test_labels: &[String],
    seed: u64,
    trees: u16,
) -> Result<f64> {
    if train.nrows() != train_labels.len() || test.nrows() != test_labels.len() {
        return Err(Error::Classification("one label per representation row is required".into()));
    }
    if train.ncols() != test.ncols() {
        return Err(Error::Classification("train and test widths differ".into()));
    }
    if test.nrows() == 0 {
        return Err(Error::Classification("empty test set".into()));
    }
    let mut classes: BTreeMap<&str, u32> = BTreeMap::new();
    for l in train_labels {
        let next = classes.len() as u32;
        classes.entry(l.as_str()).or_insert(next);
    }
    if classes.len() < 2 {
        return Err(Error::Classification(format!(
            "training labels contain {} class(es); at least two are needed",
            classes.len()
        )));
    }
    let to_matrix = |m: &Array2<f64>| -> Result<DenseMatrix<f64>> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        DenseMatrix::from_2d_vec(&rows).map_err(|e| Error::Classification(e.to_string()))
    };
    let y: Vec<u32> = train_labels.iter().map(|l| classes[l.as_str()]).collect();
    let params = RandomForestClassifierParameters::default()
        .with_n_trees(trees)
        .with_seed(seed);
    let model = RandomForestClassifier::fit(&to_matrix(train)?, &y, params)
        .map_err(|e| Error::Classification(e.to_string()))?;
    let predicted = model
        .predict(&to_matrix(test)?)
        .map_err(|e| Error::Classification(e.to_string()))?;
    let correct = predicted
        .iter()
        .zip(test_labels)
        .filter(|(p, l)| classes.get(l.as_str()) == Some(*p))
        .count();
    Ok(correct as f64 / test_labels.len() as f64)
}

/// Mean and population standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<SeedValue>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedValue {
    pub seed: u64,
    pub value: f64,
}

impl MetricReport {
    /// Summation happens over seed-sorted values, so the aggregate does not
    /// depend on the order the seeds ran in.
    pub fn new(metric: impl Into<String>, mut per_seed: Vec<SeedValue>, config_hash: impl Into<String>) -> Self {
        per_seed.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.value.total_cmp(&b.value)));
        let n = per_seed.len() as f64;
        let (mean, std) = if per_seed.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean = per_seed.iter().map(|s| s.value).sum::<f64>() / n;
            let var = per_seed.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        Self {
            metric: metric.into(),
            mean,
            std,
            per_seed,
            config_hash: config_hash.into(),
        }
    }

    /// `0.379 ± 0.004`.
    pub fn mean_pm_std(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// A plain-text table: one row label column, then `mean ± std` per column.
pub fn format_table(title: &str, columns: &[&str], rows: &[(String, Vec<Option<MetricReport>>)]) -> String {
    let label_w = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([title.chars().count()])
        .max()
        .unwrap_or(0);
    let cell_w = columns.iter().map(|c| c.chars().count()).max().unwrap_or(0).max(13);
    let mut out = format!("{title:<label_w$}");
    for c in columns {
        out.push_str(&format!("  {c:>cell_w$}"));
    }
    out.push('\n');
    for (label, cells) in rows {
        out.push_str(&format!("{label:<label_w$}"));
        for cell in cells {
            let text = cell.as_ref().map_or_else(|| "-".to_string(), MetricReport::mean_pm_std);
            out.push_str(&format!("  {text:>cell_w$}"));
        }
        out.push('\n');
    }
    out
}
