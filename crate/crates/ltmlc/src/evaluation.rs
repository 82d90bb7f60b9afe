//! Per-class average precision, mean average precision, and the prevalence
//! baseline used as a chance reference.
//!
//! AP is threshold-grouped step integration: distinct scores are visited in
//! descending order, tied scores enter together, and no interpolation is
//! applied. Classes without a single positive have undefined AP and are
//! excluded from the mean.

use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::core::{LabelSet, LabeledDataset, PredictionMatrix};
use crate::error::{Error, Result};

/// Evaluation summary over one prediction matrix.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// AP per class; `None` marks a class with zero positives.
    pub per_class_ap: Vec<Option<f64>>,
    /// Unweighted mean of the defined APs.
    pub map: f64,
    /// Positive count per class.
    pub positive_counts: Vec<usize>,
}

impl EvalReport {
    /// Indices of classes excluded from the mean (zero positives).
    pub fn excluded_classes(&self) -> Vec<usize> {
        self.per_class_ap
            .iter()
            .enumerate()
            .filter_map(|(i, ap)| ap.is_none().then_some(i))
            .collect()
    }
}

/// Average precision of one class. Returns `None` when there is no positive.
///
/// Labels must be binary 0/1.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<Option<f64>> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "average_precision over {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(Error::Validation(format!(
                "label {y} at index {i} is not binary"
            )));
        }
    }
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite score at index {i}"
            )));
        }
    }
    let total_pos = labels.iter().filter(|&&y| y == 1.0).count();
    if total_pos == 0 {
        return Ok(None);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        // All items tied at this score enter the threshold together.
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(Some(ap))
}

/// Per-column AP over aligned score and binary label matrices.
pub fn per_class_ap(scores: &Array2<f64>, labels: &Array2<f64>) -> Result<Vec<Option<f64>>> {
    if scores.dim() != labels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "scores {:?} vs labels {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    (0..scores.ncols())
        .map(|c| {
            let s = column_vec(scores.column(c));
            let y = column_vec(labels.column(c));
            average_precision(&s, &y)
        })
        .collect()
}

fn column_vec(col: ArrayView1<'_, f64>) -> Vec<f64> {
    col.iter().copied().collect()
}

/// Mean AP of a prediction matrix against dataset labels.
///
/// Requires identical image id order and vocabulary. Classes with zero
/// positives are excluded from the mean and surfaced in the report.
pub fn mean_average_precision(pm: &PredictionMatrix, labels: &LabeledDataset) -> Result<EvalReport> {
    evaluate_predictions(pm, &labels.label_set())
}

/// Mean AP against a detached label set, with alignment checks.
pub fn evaluate_predictions(pm: &PredictionMatrix, labels: &LabelSet) -> Result<EvalReport> {
    if pm.vocabulary != labels.vocabulary {
        return Err(Error::Validation(
            "prediction and label vocabularies differ".into(),
        ));
    }
    if pm.image_ids != labels.image_ids {
        return Err(Error::Validation(
            "prediction and label image ids are not aligned".into(),
        ));
    }
    report_from_matrices(&pm.scores, &labels.labels)
}

/// Builds an [`EvalReport`] from aligned score and label matrices.
pub fn report_from_matrices(scores: &Array2<f64>, labels: &Array2<f64>) -> Result<EvalReport> {
    let aps = per_class_ap(scores, labels)?;
    let positive_counts: Vec<usize> = (0..labels.ncols())
        .map(|c| labels.column(c).iter().filter(|&&y| y == 1.0).count())
        .collect();
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Validation(
            "no class has a positive example; mAP undefined".into(),
        ));
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(EvalReport {
        per_class_ap: aps,
        map,
        positive_counts,
    })
}

/// Expected AP of an uninformative constant predictor: the class prevalence.
pub fn prevalence_baseline(labels: &LabeledDataset) -> Result<EvalReport> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Validation("empty dataset".into()));
    }
    let matrix = labels.label_matrix();
    let positive_counts: Vec<usize> = (0..matrix.ncols())
        .map(|c| matrix.column(c).iter().filter(|&&y| y == 1.0).count())
        .collect();
    let per_class_ap: Vec<Option<f64>> = positive_counts
        .iter()
        .map(|&p| (p > 0).then(|| p as f64 / n as f64))
        .collect();
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Validation(
            "no class has a positive example; baseline undefined".into(),
        ));
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(EvalReport {
        per_class_ap,
        map,
        positive_counts,
    })
}

/// Writes a report CSV `class,ap,positives` with a final `mAP,<value>` line.
pub fn write_report(report: &EvalReport, vocab: &crate::core::ClassVocabulary, path: &Path) -> Result<()> {
    let mut out = String::from("class,ap,positives\n");
    for (i, name) in vocab.names().iter().enumerate() {
        let ap = match report.per_class_ap[i] {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        out.push_str(&format!("{name},{ap},{}\n", report.positive_counts[i]));
    }
    out.push_str(&format!("mAP,{}\n", report.map));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
