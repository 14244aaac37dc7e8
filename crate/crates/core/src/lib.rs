//! Graph contrastive neural topic modelling.
//!
//! The pipeline runs in stages that mirror the module layout:
//!
//! * [`corpus`]: tokenization, vocabulary, splits, TF-IDF features, sliding-window
//!   co-occurrence counts and precomputed contextual embeddings.
//! * [`graphs`]: NPMI scores and the thresholded positive/negative word graphs.
//! * [`augment`]: GCN encoding of the word graphs and document-word information
//!   propagation, which turns each document into a positive and a negative sample.
//! * [`ntm`]: the logistic-normal topic model and its losses.
//! * [`trainer`]: the joint optimization loop, multi-seed runs and ablations.
//! * [`eval`]: topic extraction, NPMI coherence, sample diagnostics and classification.
//!
//! Differentiation is handled by the small reverse-mode [`tape`] over dense `f64`
//! matrices, with sparse left operands for TF-IDF batches and graph adjacencies.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod ntm;
pub mod optim;
pub mod params;
pub mod sparse;
pub mod synth;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use sparse::SparseMatrix;
