//! NPMI scores and the thresholded positive/negative word co-occurrence graphs.

use serde::{Deserialize, Serialize};

use crate::corpus::CooccurrenceStats;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Symmetric `v × v` NPMI scores for pairs that co-occur at least once.
/// Absent pairs never co-occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct NpmiMatrix(pub SparseMatrix);

impl NpmiMatrix {
    pub fn scores(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn vocab_size(&self) -> usize {
        self.0.rows()
    }

    /// Score with never-co-occurring pairs mapped to the lower bound −1.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if self.0.contains(i, j) {
            self.0.get(i, j)
        } else {
            -1.0
        }
    }
}

/// NPMI of one pair from probabilities. `p_ij == 1` maps to 1.
pub fn npmi(p_ij: f64, p_i: f64, p_j: f64) -> f64 {
    if p_ij >= 1.0 {
        return 1.0;
    }
    let pmi = p_ij.ln() - p_i.ln() - p_j.ln();
    (pmi / -p_ij.ln()).clamp(-1.0, 1.0)
}

/// Window-relative NPMI for every co-occurring pair, with
/// `p = count / total_windows` and no smoothing.
pub fn compute_npmi(stats: &CooccurrenceStats) -> Result<NpmiMatrix> {
    if stats.total_windows == 0 {
        return Err(Error::Data("co-occurrence statistics contain no windows".into()));
    }
    let total = stats.total_windows as f64;
    let entries = stats
        .pairs()
        .entries()
        .iter()
        .map(|&(i, j, c)| {
            let p_i = stats.word_counts[i] as f64 / total;
            let p_j = stats.word_counts[j] as f64 / total;
            (i, j, npmi(c / total, p_i, p_j))
        })
        .collect();
    let v = stats.vocab_size();
    Ok(NpmiMatrix(SparseMatrix::new(v, v, entries)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// A thresholded word graph and its symmetric normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct WordGraph {
    pub polarity: Polarity,
    pub threshold: f64,
    pub adjacency: SparseMatrix,
    pub normalized: SparseMatrix,
    pub warnings: Vec<String>,
}

/// JSON sidecar stored next to a persisted graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordGraphMeta {
    pub polarity: Polarity,
    pub threshold: f64,
    pub v: usize,
    pub nnz: usize,
}

impl WordGraph {
    pub fn vocab_size(&self) -> usize {
        self.adjacency.rows()
    }

    /// Off-diagonal edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .entries()
            .iter()
            .filter(|&&(i, j, _)| i < j)
            .map(|&(i, j, _)| (i, j))
            .collect()
    }

    pub fn meta(&self) -> WordGraphMeta {
        WordGraphMeta {
            polarity: self.polarity,
            threshold: self.threshold,
            v: self.vocab_size(),
            nnz: self.adjacency.nnz(),
        }
    }

    /// Rebuilds a graph from its persisted adjacency, recomputing the normalization.
    pub fn from_adjacency(meta: &WordGraphMeta, adjacency: SparseMatrix) -> Result<Self> {
        if adjacency.shape() != (meta.v, meta.v) || adjacency.nnz() != meta.nnz {
            return Err(Error::format(
                "word graph",
                "adjacency does not match its sidecar",
            ));
        }
        let normalized = normalize_adjacency(&adjacency)?;
        Ok(Self {
            polarity: meta.polarity,
            threshold: meta.threshold,
            adjacency,
            normalized,
            warnings: Vec::new(),
        })
    }
}

/// Positive graph: off-diagonal pairs with `NPMI ≥ μ⁺` keep their score and
/// every word gets a unit self-loop. Negative graph: pairs with `NPMI ≤ −μ⁻`
/// get weight `|NPMI|`, no self-loops. Zero-weight pairs are not edges.
pub fn build_word_graph(npmi: &NpmiMatrix, polarity: Polarity, threshold: f64) -> Result<WordGraph> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!(
            "graph threshold must be nonnegative (got {threshold})"
        )));
    }
    let v = npmi.vocab_size();
    let mut entries: Vec<(usize, usize, f64)> = npmi
        .scores()
        .entries()
        .iter()
        .filter(|&&(i, j, _)| i != j)
        .filter_map(|&(i, j, s)| match polarity {
            Polarity::Positive if s >= threshold && s > 0.0 => Some((i, j, s)),
            Polarity::Negative if s <= -threshold && s < 0.0 => Some((i, j, s.abs())),
            _ => None,
        })
        .collect();
    let off_diagonal = entries.len();
    if polarity == Polarity::Positive {
        entries.extend((0..v).map(|i| (i, i, 1.0)));
    }
    let adjacency = SparseMatrix::new(v, v, entries)?;
    let mut warnings = Vec::new();
    if off_diagonal == 0 {
        let msg = format!(
            "{} graph has no edges at threshold {threshold}",
            polarity.as_str()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let normalized = normalize_adjacency(&adjacency)?;
    Ok(WordGraph {
        polarity,
        threshold,
        adjacency,
        normalized,
        warnings,
    })
}

/// `D^{-1/2} A D^{-1/2}` with degrees taken as row sums. Zero-degree rows and
/// columns stay zero.
pub fn normalize_adjacency(a: &SparseMatrix) -> Result<SparseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension(format!(
            "adjacency must be square, got {:?}",
            a.shape()
        )));
    }
    if a.entries().iter().any(|e| e.2 < 0.0) {
        return Err(Error::Data("adjacency weights must be nonnegative".into()));
    }
    let inv_sqrt: Vec<f64> = a
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let entries = a
        .entries()
        .iter()
        .map(|&(i, j, w)| (i, j, w * inv_sqrt[i] * inv_sqrt[j]))
        .collect();
    SparseMatrix::new(a.rows(), a.cols(), entries)
}

/// One document's edges in the document-word bipartite graph: its TF-IDF row.
#[derive(Debug, Clone, PartialEq)]
pub struct DocWordGraph {
    pub doc_index: usize,
    pub edges: Vec<(usize, f64)>,
}

pub fn document_word_graph(tfidf: &SparseMatrix, doc_index: usize) -> DocWordGraph {
    DocWordGraph {
        doc_index,
        edges: tfidf.row(doc_index).iter().map(|&(_, w, x)| (w, x)).collect(),
    }
}
