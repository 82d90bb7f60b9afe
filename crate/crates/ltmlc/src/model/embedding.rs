//! Frozen class embeddings.
//!
//! Deterministic synthetic vectors stand in for pretrained text-encoder
//! outputs; alternatively a table can be loaded from an embedding CSV and is
//! used as-is, without re-normalization.

use std::path::Path;

use ndarray::Array2;

use crate::core::ClassVocabulary;
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, SplitMix64};

/// Deterministic unit vector for a class name: the name's FNV-1a 64-bit hash
/// seeds a SplitMix64 stream, Box-Muller normals fill the first `d` values,
/// and the result is L2-normalized.
pub fn synthetic_class_embedding(name: &str, d: usize) -> Result<Vec<f64>> {
    if name.is_empty() {
        return Err(Error::Validation("empty class name".into()));
    }
    if d < 1 {
        return Err(Error::Validation("embedding dimension must be >= 1".into()));
    }
    let mut rng = SplitMix64::new(fnv1a64(name.as_bytes()));
    let mut values: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut values {
        *v /= norm;
    }
    Ok(values)
}

/// One frozen d-dimensional vector per class, row order matching the
/// vocabulary. The table is never touched by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    vectors: Array2<f64>,
    frozen: bool,
}

impl ClassEmbeddingTable {
    pub fn new(vectors: Array2<f64>) -> Self {
        ClassEmbeddingTable {
            vectors,
            frozen: true,
        }
    }

    pub fn synthetic(vocab: &ClassVocabulary, d: usize) -> Result<Self> {
        let mut vectors = Array2::zeros((vocab.len(), d));
        for (c, name) in vocab.names().iter().enumerate() {
            let v = synthetic_class_embedding(name, d)?;
            for (j, &x) in v.iter().enumerate() {
                vectors[(c, j)] = x;
            }
        }
        Ok(ClassEmbeddingTable::new(vectors))
    }

    /// Loads `class,v0,...,v{d-1}` rows. Every vocabulary class must appear;
    /// vectors are taken verbatim.
    pub fn from_csv(path: &Path, vocab: &ClassVocabulary, d: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::csv(1, e.to_string()))?;
        let header = reader.headers().map_err(|e| Error::csv(1, e.to_string()))?;
        if header.is_empty() || &header[0] != "class" {
            return Err(Error::csv(1, "embedding header must start with 'class'"));
        }
        if header.len() != d + 1 {
            return Err(Error::csv(
                1,
                format!(
                    "embedding header has {} value columns, model dimension is {d}",
                    header.len() - 1
                ),
            ));
        }
        let mut vectors = Array2::zeros((vocab.len(), d));
        let mut found = vec![false; vocab.len()];
        for (row_idx, record) in reader.records().enumerate() {
            let line = row_idx + 2;
            let record = record.map_err(|e| Error::csv(line, e.to_string()))?;
            if record.len() != d + 1 {
                return Err(Error::csv(
                    line,
                    format!("expected {} fields, found {}", d + 1, record.len()),
                ));
            }
            let Some(c) = vocab.index_of(&record[0]) else {
                continue; // classes outside the vocabulary are ignored
            };
            for (j, field) in record.iter().skip(1).enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::csv(line, format!("invalid value '{field}'")))?;
                if !v.is_finite() {
                    return Err(Error::csv(line, format!("non-finite value '{field}'")));
                }
                vectors[(c, j)] = v;
            }
            found[c] = true;
        }
        if let Some(missing) = found.iter().position(|&f| !f) {
            return Err(Error::Validation(format!(
                "embedding csv is missing class '{}'",
                vocab.name(missing)
            )));
        }
        Ok(ClassEmbeddingTable::new(vectors))
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}
