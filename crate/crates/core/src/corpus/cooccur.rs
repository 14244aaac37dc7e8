use std::collections::HashMap;

use super::{Corpus, Split};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Above this vocabulary size pair counts go through a hash map instead of a
/// dense upper triangle.
const DENSE_PAIR_LIMIT: usize = 4096;

/// Sliding-window counts over the training split.
///
/// `pair_counts` stores both triangles and no diagonal. `word_counts[i]` is the
/// number of windows containing word `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceStats {
    pub window_length: usize,
    pub pair_counts: SparseMatrix,
    pub word_counts: Vec<u64>,
    pub total_windows: u64,
}

impl CooccurrenceStats {
    pub fn pairs(&self) -> &SparseMatrix {
        &self.pair_counts
    }

    pub fn vocab_size(&self) -> usize {
        self.word_counts.len()
    }
}

enum PairCounter {
    Dense { v: usize, counts: Vec<u64> },
    Sparse(HashMap<(u32, u32), u64>),
}

impl PairCounter {
    fn new(v: usize) -> Self {
        if v <= DENSE_PAIR_LIMIT {
            PairCounter::Dense {
                v,
                counts: vec![0; v * v],
            }
        } else {
            PairCounter::Sparse(HashMap::new())
        }
    }

    /// `a < b`
    fn bump(&mut self, a: u32, b: u32) {
        match self {
            PairCounter::Dense { v, counts } => counts[a as usize * *v + b as usize] += 1,
            PairCounter::Sparse(map) => *map.entry((a, b)).or_default() += 1,
        }
    }

    fn into_symmetric(self, v: usize) -> SparseMatrix {
        let upper: Vec<(usize, usize, u64)> = match self {
            PairCounter::Dense { counts, .. } => counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(k, &c)| (k / v, k % v, c))
                .collect(),
            PairCounter::Sparse(map) => map
                .into_iter()
                .map(|((a, b), c)| (a as usize, b as usize, c))
                .collect(),
        };
        let entries = upper
            .into_iter()
            .flat_map(|(a, b, c)| [(a, b, c as f64), (b, a, c as f64)])
            .collect();
        SparseMatrix::new(v, v, entries).expect("pair counts are unique off-diagonal entries")
    }
}

/// Counts every window of `window_length` consecutive tokens (stride 1) in each
/// training document. A document shorter than the window contributes a single
/// truncated window; windows never span documents. Each pair is counted at
/// most once per window.
pub fn count_cooccurrence(corpus: &Corpus, window_length: usize) -> Result<CooccurrenceStats> {
    if window_length < 2 {
        return Err(Error::Config(format!(
            "window length must be at least 2 (got {window_length})"
        )));
    }
    let v = corpus.vocab_size();
    let mut word_counts = vec![0u64; v];
    let mut pairs = PairCounter::new(v);
    let mut total_windows = 0u64;
    let mut distinct: Vec<u32> = Vec::with_capacity(window_length);

    for d in corpus.split_indices(Split::Train) {
        let tokens = corpus.token_ids(d);
        if tokens.is_empty() {
            continue;
        }
        let n_windows = tokens.len().saturating_sub(window_length) + 1;
        for start in 0..n_windows {
            let end = (start + window_length).min(tokens.len());
            distinct.clear();
            distinct.extend_from_slice(&tokens[start..end]);
            distinct.sort_unstable();
            distinct.dedup();
            for (i, &a) in distinct.iter().enumerate() {
                word_counts[a as usize] += 1;
                for &b in &distinct[i + 1..] {
                    pairs.bump(a, b);
                }
            }
            total_windows += 1;
        }
    }

    Ok(CooccurrenceStats {
        window_length,
        pair_counts: pairs.into_symmetric(v),
        word_counts,
        total_windows,
    })
}
