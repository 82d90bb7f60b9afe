//! Prediction matrix CSV serialization.
//!
//! Header is `image_id,<class names...>` with columns in vocabulary order.
//! Scores are written in decimal with the shortest representation that
//! parses back to the same f64 (at most 17 significant digits), so a
//! write/read cycle is lossless.

use std::path::Path;

use ndarray::Array2;

use super::{ClassVocabulary, PredictionMatrix};
use crate::error::{Error, Result};

pub fn write_predictions(pm: &PredictionMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = Vec::with_capacity(1 + pm.vocabulary.len());
    header.push("image_id".to_string());
    header.extend(pm.vocabulary.names().iter().cloned());
    writer.write_record(&header).map_err(|e| csv_io(path, e))?;

    let mut record = Vec::with_capacity(header.len());
    for (i, id) in pm.image_ids.iter().enumerate() {
        record.clear();
        record.push(id.clone());
        for j in 0..pm.vocabulary.len() {
            record.push(format!("{}", pm.scores[(i, j)]));
        }
        writer.write_record(&record).map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads predictions, requiring the header to match `vocab` exactly.
pub fn read_predictions(path: &Path, vocab: &ClassVocabulary) -> Result<PredictionMatrix> {
    let (ids, scores, header_vocab) = read_rows(path)?;
    check_header(vocab, &header_vocab)?;
    PredictionMatrix::new(ids, scores, vocab.clone())
}

/// Reads predictions, taking the vocabulary from the CSV header.
pub fn read_predictions_with_header_vocab(path: &Path) -> Result<PredictionMatrix> {
    let (ids, scores, vocab) = read_rows(path)?;
    PredictionMatrix::new(ids, scores, vocab)
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Array2<f64>, ClassVocabulary)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = reader.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.is_empty() || &header[0] != "image_id" {
        return Err(Error::csv(1, "header must start with 'image_id'"));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let vocab = ClassVocabulary::new(names)?;

    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::csv(line, e.to_string()))?;
        if record.len() != vocab.len() + 1 {
            return Err(Error::csv(
                line,
                format!("expected {} fields, found {}", vocab.len() + 1, record.len()),
            ));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::csv(line, format!("invalid score '{field}'")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::csv(line, format!("score out of range: {field}")));
            }
            values.push(v);
        }
    }
    let scores = Array2::from_shape_vec((ids.len(), vocab.len()), values)
        .expect("row-major score buffer matches dimensions");
    Ok((ids, scores, vocab))
}

/// Compares an expected vocabulary against CSV header columns, listing
/// missing and extra names, or the first order mismatch.
fn check_header(expected: &ClassVocabulary, found: &ClassVocabulary) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    let missing: Vec<&str> = expected
        .names()
        .iter()
        .filter(|n| found.index_of(n).is_none())
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = found
        .names()
        .iter()
        .filter(|n| expected.index_of(n).is_none())
        .map(String::as_str)
        .collect();
    if missing.is_empty() && extra.is_empty() {
        let first = expected
            .names()
            .iter()
            .zip(found.names())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Err(Error::Validation(format!(
            "prediction columns reordered against vocabulary, first mismatch at column {} (expected '{}', found '{}')",
            first,
            expected.name(first),
            found.name(first),
        )));
    }
    Err(Error::Validation(format!(
        "prediction header does not match vocabulary: missing [{}], extra [{}]",
        missing.join(", "),
        extra.join(", ")
    )))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::csv(0, format!("{other:?}")),
    }
}
