use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Precomputed contextual document embeddings keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct DocEmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl DocEmbeddingTable {
    pub fn get(&self, doc_id: &str) -> Option<&[f64]> {
        self.vectors.get(doc_id).map(Vec::as_slice)
    }

    /// Ids from `required` that have no vector.
    pub fn missing<'a, I>(&self, required: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        required
            .into_iter()
            .filter(|id| !self.vectors.contains_key(*id))
            .map(str::to_owned)
            .collect()
    }

    pub fn require_coverage<'a, I>(&self, required: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let missing = self.missing(required);
        match missing.first() {
            None => Ok(()),
            Some(first) => Err(Error::Coverage {
                count: missing.len(),
                first: first.clone(),
            }),
        }
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("embeddings", "empty file"))?
            .map_err(|e| Error::format("embeddings", e.to_string()))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::format("embeddings header", format!("expected `dim=<int>`, got `{header}`")))?;
        let mut vectors = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| Error::format("embeddings", e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_owned();
            let values = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::format(format!("embeddings line {lineno}"), e.to_string()))?;
            if values.len() != dim {
                return Err(Error::format(
                    format!("embeddings line {lineno}"),
                    format!("row `{id}` has {} values, header declares dim={dim}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(
                    format!("embeddings line {lineno}"),
                    "non-finite value",
                ));
            }
            if vectors.insert(id.clone(), values).is_some() {
                return Err(Error::format(
                    format!("embeddings line {lineno}"),
                    format!("duplicate document id `{id}`"),
                ));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dim={}", self.dim)?;
        for (id, values) in &self.vectors {
            write!(w, "{id}")?;
            for v in values {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<DocEmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    DocEmbeddingTable::read(BufReader::new(file))
}

pub fn write_embeddings(table: &DocEmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    table
        .write(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}
