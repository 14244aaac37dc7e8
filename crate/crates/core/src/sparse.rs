//! Coordinate-form sparse matrices.
//!
//! Entries are kept sorted in row-major order with a row offset table, so the
//! same structure serves as a COO container for persistence and as a CSR
//! operand for products.

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
}

impl SparseMatrix {
    /// Builds a matrix from unordered triplets.
    ///
    /// Rejects out-of-range indices, non-finite weights and duplicate
    /// `(row, col)` pairs.
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, w) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Dimension(format!(
                    "entry ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Data(format!("non-finite weight at ({r}, {c})")));
            }
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::Data(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self::from_sorted(rows, cols, entries))
    }

    /// Assumes `entries` are sorted, unique and in range.
    fn from_sorted(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            entries,
            row_ptr,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_sorted(rows, cols, Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_sorted(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// Keeps every nonzero entry of a dense matrix.
    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        let (rows, cols) = dense.dim();
        let entries = dense
            .indexed_iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|((r, c), &w)| (r, c, w))
            .collect();
        Self::new(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Entries of row `r`, sorted by column.
    pub fn row(&self, r: usize) -> &[(usize, usize, f64)] {
        &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = self.row(r);
        match row.binary_search_by_key(&c, |&(_, col, _)| col) {
            Ok(i) => row[i].2,
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r)
            .binary_search_by_key(&c, |&(_, col, _)| col)
            .is_ok()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|e| e.2).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for &(r, c, w) in &self.entries {
            out[[r, c]] = w;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, w)| (c, r, w)).collect();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        Self::from_sorted(self.cols, self.rows, entries)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && self
                .entries
                .iter()
                .all(|&(r, c, w)| (self.get(c, r) - w).abs() <= tol && self.contains(c, r))
    }

    /// Rows `indices` stacked in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let entries = indices
            .iter()
            .enumerate()
            .flat_map(|(new_r, &r)| self.row(r).iter().map(move |&(_, c, w)| (new_r, c, w)))
            .collect();
        Self::from_sorted(indices.len(), self.cols, entries)
    }

    /// Dense row `r`.
    pub fn dense_row(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for &(_, c, w) in self.row(r) {
            out[c] = w;
        }
        out
    }

    /// `self · rhs` with a dense right operand.
    pub fn mul_dense(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, rhs.nrows(), "sparse·dense inner dimension");
        let mut out = Array2::zeros((self.rows, rhs.ncols()));
        for &(r, c, w) in &self.entries {
            let src = rhs.row(c);
            let mut dst = out.row_mut(r);
            dst.scaled_add(w, &src);
        }
        out
    }

    /// `selfᵀ · rhs` accumulated without materializing the transpose.
    pub fn t_mul_dense(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, rhs.nrows(), "sparseᵀ·dense inner dimension");
        let mut out = Array2::zeros((self.cols, rhs.ncols()));
        for &(r, c, w) in &self.entries {
            let src = rhs.row(r);
            let mut dst = out.row_mut(c);
            dst.scaled_add(w, &src);
        }
        out
    }

    /// `self · rhs` for two sparse operands, returned dense.
    pub fn mul_sparse_dense(&self, rhs: &SparseMatrix) -> Array2<f64> {
        assert_eq!(self.cols, rhs.rows, "sparse·sparse inner dimension");
        let mut out = Array2::zeros((self.rows, rhs.cols));
        for &(r, k, a) in &self.entries {
            for &(_, c, b) in rhs.row(k) {
                out[[r, c]] += a * b;
            }
        }
        out
    }

    /// Writes the TSV form: a `rows cols nnz` header followed by one
    /// `row\tcol\tweight` line per entry, weights with 17 significant digits.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{r}\t{c}\t{v:.16e}")?;
        }
        w.flush()
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("sparse matrix", "empty file"))?
            .map_err(|e| Error::format("sparse matrix", e.to_string()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("sparse matrix header", e.to_string()))?;
        let [rows, cols, nnz] = dims[..] else {
            return Err(Error::format(
                "sparse matrix header",
                format!("expected `rows cols nnz`, got `{header}`"),
            ));
        };
        let mut entries = Vec::with_capacity(nnz);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::format("sparse matrix", e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format(format!("sparse matrix line {}", lineno + 2), msg);
            let mut fields = line.split('\t');
            let (Some(r), Some(c), Some(v), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected three tab-separated fields"));
            };
            let r = r.parse().map_err(|_| bad("bad row index"))?;
            let c = c.parse().map_err(|_| bad("bad column index"))?;
            let v: f64 = v.parse().map_err(|_| bad("bad weight"))?;
            entries.push((r, c, v));
        }
        if entries.len() != nnz {
            return Err(Error::format(
                "sparse matrix",
                format!("header declares {nnz} entries, found {}", entries.len()),
            ));
        }
        Self::new(rows, cols, entries)
    }
}
