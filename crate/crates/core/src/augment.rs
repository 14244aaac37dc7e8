//! GCN encoding of the word graphs and the two ways of turning a document into
//! positive and negative samples.
//!
//! In `gcn` mode each stack maps the identity input through `L` layers of
//! `ρ(Ã·H·W)`, a per-word softmax gives `β±_v`, and document-word information
//! propagation yields `H±_d = A_d · β±_v` (length `k`). In `edge_perturb` mode
//! the samples are `x±_d = A_d · Ã±` (length `v`).

use ndarray::Array2;
use rand::Rng;

use crate::config::{Activation, SampleMode};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graphs::{Polarity, WordGraph};
use crate::ntm::{Batch, Features, Gctm};
use crate::params::{glorot_uniform, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tape::{self, Bound, Tape, Var};

/// Layer dimensions and activations of one GCN stack. The weights themselves
/// live in a [`ParamStore`] under `gcn.{pos,neg}.w{l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    pub polarity: Polarity,
    /// `dims[0] = v`, `dims[L] = k`.
    pub dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub final_activation: Activation,
}

impl GcnStack {
    pub fn new(
        polarity: Polarity,
        vocab: usize,
        hidden: usize,
        topics: usize,
        layers: usize,
        hidden_activation: Activation,
        final_activation: Activation,
    ) -> Self {
        let mut dims = vec![vocab];
        dims.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        dims.push(topics);
        Self {
            polarity,
            dims,
            hidden_activation,
            final_activation,
        }
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        let tag = match self.polarity {
            Polarity::Positive => "pos",
            Polarity::Negative => "neg",
        };
        format!("gcn.{tag}.w{layer}")
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        for l in 0..self.layers() {
            store.insert(
                self.weight_name(l),
                glorot_uniform(self.dims[l], self.dims[l + 1], rng),
            );
        }
    }

    pub fn check(&self, store: &ParamStore) -> Result<()> {
        for l in 0..self.layers() {
            let name = self.weight_name(l);
            let w = store
                .get(&name)
                .ok_or_else(|| Error::Dimension(format!("missing GCN weight `{name}`")))?;
            if w.dim() != (self.dims[l], self.dims[l + 1]) {
                return Err(Error::Dimension(format!(
                    "`{name}` is {:?}, expected {:?}",
                    w.dim(),
                    (self.dims[l], self.dims[l + 1])
                )));
            }
        }
        Ok(())
    }

    fn activate(&self, tape: &mut Tape<'_>, x: Var, layer: usize) -> Var {
        let act = if layer + 1 == self.layers() {
            self.final_activation
        } else {
            self.hidden_activation
        };
        match act {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }

    /// `H^(L)` (`v × k`) on the tape. Layer 0 is `ρ(Ã·W⁽⁰⁾)`, the identity input
    /// being implicit.
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, bound: &Bound, a_norm: &'a SparseMatrix) -> Var {
        let mut h = {
            let w0 = bound.get(&self.weight_name(0));
            let z = tape.sp_matmul(a_norm, w0);
            self.activate(tape, z, 0)
        };
        for l in 1..self.layers() {
            let w = bound.get(&self.weight_name(l));
            let hw = tape.matmul(h, w);
            let z = tape.sp_matmul(a_norm, hw);
            h = self.activate(tape, z, l);
        }
        h
    }
}

/// Evaluates a stack outside any training step.
pub fn gcn_forward(a_norm: &SparseMatrix, stack: &GcnStack, store: &ParamStore) -> Result<Array2<f64>> {
    stack.check(store)?;
    if a_norm.shape() != (stack.dims[0], stack.dims[0]) {
        return Err(Error::Dimension(format!(
            "adjacency {:?} does not match vocabulary size {}",
            a_norm.shape(),
            stack.dims[0]
        )));
    }
    let mut t = Tape::new();
    let bound = t.bind(store);
    let h = stack.forward(&mut t, &bound, a_norm);
    Ok(t.value(h).clone())
}

/// `β±_v`: softmax over the topic axis of each word's row.
pub fn word_topic_distributions(h: &Array2<f64>) -> Array2<f64> {
    tape::softmax_rows(h)
}

/// `H±_d = A_d · β±_v` for every row of `a_d`.
pub fn dwip(a_d: &SparseMatrix, beta_v: &Array2<f64>) -> Result<Array2<f64>> {
    if a_d.cols() != beta_v.nrows() {
        return Err(Error::Dimension(format!(
            "document rows have {} columns, word-topic matrix has {} rows",
            a_d.cols(),
            beta_v.nrows()
        )));
    }
    Ok(a_d.mul_dense(beta_v))
}

/// `x±_d = A_d · Ã±` for every row of `a_d`, as a dense matrix.
pub fn edge_perturbation(a_d: &SparseMatrix, a_norm: &SparseMatrix) -> Result<Array2<f64>> {
    if a_d.cols() != a_norm.rows() || a_norm.rows() != a_norm.cols() {
        return Err(Error::Dimension(format!(
            "cannot perturb {:?} documents with a {:?} graph",
            a_d.shape(),
            a_norm.shape()
        )));
    }
    Ok(a_d.mul_sparse_dense(a_norm))
}

/// One document's perturbed sample through the neighbour sums: entry `i`
/// collects `A_{d,j} Ã_{j,i}` over the graph neighbours `j ≠ i` of `i`, plus
/// `A_{d,i} Ã_{i,i}` when the graph has a self-loop at `i`.
pub fn edge_perturbation_per_edge(doc: &[(usize, f64)], graph: &WordGraph) -> Vec<f64> {
    let v = graph.vocab_size();
    let mut weight = vec![0.0; v];
    for &(w, x) in doc {
        weight[w] = x;
    }
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); v];
    for (i, j) in graph.edges() {
        neighbours[i].push(j);
        neighbours[j].push(i);
    }
    let a = &graph.normalized;
    (0..v)
        .map(|i| {
            let own = weight[i] * a.get(i, i);
            let spread: f64 = neighbours[i].iter().map(|&j| weight[j] * a.get(j, i)).sum();
            own + spread
        })
        .collect()
}

/// The positive and negative word graphs over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub positive: WordGraph,
    pub negative: WordGraph,
}

impl GraphPair {
    pub fn get(&self, polarity: Polarity) -> &WordGraph {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.positive.vocab_size()
    }

    pub fn check_vocab(&self, v: usize) -> Result<()> {
        for g in [&self.positive, &self.negative] {
            if g.vocab_size() != v {
                return Err(Error::Dimension(format!(
                    "{} graph covers {} words, vocabulary has {v}",
                    g.polarity.as_str(),
                    g.vocab_size()
                )));
            }
        }
        Ok(())
    }
}

/// A prototype with its two generated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTriple {
    pub doc_id: String,
    /// `[TF-IDF row, projected contextual embedding]`, length `2v`.
    pub prototype_feature: Vec<f64>,
    pub positive_repr: Vec<f64>,
    pub negative_repr: Vec<f64>,
    pub mode: SampleMode,
}

/// Sample representations for one batch under the model's sample mode.
pub fn sample_representations(
    model: &Gctm,
    batch: &Batch,
    graphs: &GraphPair,
) -> Result<(Array2<f64>, Array2<f64>)> {
    match model.spec.mode {
        SampleMode::Gcn => {
            let mut out = Vec::with_capacity(2);
            for polarity in [Polarity::Positive, Polarity::Negative] {
                let stack = model.gcn_stack(polarity);
                let h = gcn_forward(&graphs.get(polarity).normalized, &stack, &model.params)?;
                out.push(dwip(&batch.tfidf, &word_topic_distributions(&h))?);
            }
            let neg = out.pop().expect("two polarities");
            let pos = out.pop().expect("two polarities");
            Ok((pos, neg))
        }
        SampleMode::EdgePerturb => Ok((
            edge_perturbation(&batch.tfidf, &graphs.positive.normalized)?,
            edge_perturbation(&batch.tfidf, &graphs.negative.normalized)?,
        )),
    }
}

/// Builds the triples for documents `docs` of `corpus`.
pub fn make_sample_triples(
    model: &Gctm,
    corpus: &Corpus,
    features: &Features,
    graphs: &GraphPair,
    docs: &[usize],
) -> Result<Vec<SampleTriple>> {
    graphs.check_vocab(model.spec.vocab)?;
    let batch = features.batch(docs);
    let v = model.spec.vocab;
    let context = model.project_context(&batch)?;
    let (pos, neg) = sample_representations(model, &batch, graphs)?;
    Ok(docs
        .iter()
        .enumerate()
        .map(|(r, &d)| {
            let mut prototype_feature = batch.tfidf.dense_row(r);
            match &context {
                Some(c) => prototype_feature.extend(c.row(r).iter().copied()),
                None => prototype_feature.extend(std::iter::repeat_n(0.0, v)),
            }
            SampleTriple {
                doc_id: corpus.documents()[d].id.clone(),
                prototype_feature,
                positive_repr: pos.row(r).to_vec(),
                negative_repr: neg.row(r).to_vec(),
                mode: model.spec.mode,
            }
        })
        .collect())
}
