//! Test-time augmentation with geometric-mean merging, and model-wise /
//! class-wise ensembling over prediction matrices.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::core::{ImageTensor, LabelSet, LabeledDataset, PredictionMatrix};
use crate::datapipe::{flip_horizontal, resize_window};
use crate::error::{Error, Result};
use crate::evaluation::per_class_ap;
use crate::model::Model;
use crate::rng::SplitMix64;

/// Probability floor before the geometric product; a single exact zero
/// would otherwise annihilate the merged score.
pub const TTA_FLOOR: f64 = 1e-12;

/// One deterministic image transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageTransform {
    Identity,
    HorizontalFlip,
    /// Central window of side fraction `fraction`, resized back.
    CenterCrop { fraction: f64 },
    /// Fixed window of side fraction `fraction` at a seeded position,
    /// resized back. The same window is used for every image.
    RandomCrop { fraction: f64, seed: u64 },
}

/// A bank entry is a chain of transforms applied left to right.
pub type TransformChain = Vec<ImageTransform>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    Geometric,
    Arithmetic,
}

/// Ordered list of deterministic transform chains plus the merge rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformBank {
    pub merge: MergeMode,
    pub transforms: Vec<TransformChain>,
}

impl Default for TransformBank {
    /// Identity, horizontal flip, center-crop 0.9, and center-crop 0.9
    /// followed by a flip.
    fn default() -> Self {
        TransformBank {
            merge: MergeMode::Geometric,
            transforms: vec![
                vec![ImageTransform::Identity],
                vec![ImageTransform::HorizontalFlip],
                vec![ImageTransform::CenterCrop { fraction: 0.9 }],
                vec![
                    ImageTransform::CenterCrop { fraction: 0.9 },
                    ImageTransform::HorizontalFlip,
                ],
            ],
        }
    }
}

impl TransformBank {
    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::Validation("transform bank is empty".into()));
        }
        for chain in &self.transforms {
            for t in chain {
                if let ImageTransform::CenterCrop { fraction }
                | ImageTransform::RandomCrop { fraction, .. } = t
                {
                    if !fraction.is_finite() || *fraction <= 0.0 || *fraction > 1.0 {
                        return Err(Error::Validation(format!(
                            "crop fraction {fraction} outside (0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Applies one transform; output keeps the input size.
pub fn apply_transform(img: &ImageTensor, t: &ImageTransform) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    match t {
        ImageTransform::Identity => img.clone(),
        ImageTransform::HorizontalFlip => flip_horizontal(img),
        ImageTransform::CenterCrop { fraction } => {
            let win_h = fraction * h as f64;
            let win_w = fraction * w as f64;
            resize_window(
                img,
                (h as f64 - win_h) / 2.0,
                (w as f64 - win_w) / 2.0,
                win_h,
                win_w,
                h,
                w,
            )
        }
        ImageTransform::RandomCrop { fraction, seed } => {
            let win_h = fraction * h as f64;
            let win_w = fraction * w as f64;
            let mut rng = SplitMix64::new(*seed);
            let top = rng.next_f64() * (h as f64 - win_h);
            let left = rng.next_f64() * (w as f64 - win_w);
            resize_window(img, top, left, win_h, win_w, h, w)
        }
    }
}

pub fn apply_chain(img: &ImageTensor, chain: &TransformChain) -> ImageTensor {
    let mut out = img.clone();
    for t in chain {
        out = apply_transform(&out, t);
    }
    out
}

/// Merges per-transform score matrices into one matrix.
pub fn merge_scores(per_transform: &[Array2<f64>], mode: MergeMode) -> Result<Array2<f64>> {
    let first = per_transform
        .first()
        .ok_or_else(|| Error::Validation("no score matrices to merge".into()))?;
    let dim = first.dim();
    for m in per_transform {
        if m.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "score matrix {:?} differs from {:?}",
                m.dim(),
                dim
            )));
        }
    }
    let t = per_transform.len() as f64;
    let mut out = Array2::zeros(dim);
    match mode {
        MergeMode::Geometric => {
            for ((i, j), v) in out.indexed_iter_mut() {
                let mut product = 1.0;
                for m in per_transform {
                    product *= m[(i, j)].max(TTA_FLOOR);
                }
                *v = product.powf(1.0 / t).clamp(0.0, 1.0);
            }
        }
        MergeMode::Arithmetic => {
            for ((i, j), v) in out.indexed_iter_mut() {
                let mut sum = 0.0;
                for m in per_transform {
                    sum += m[(i, j)];
                }
                *v = (sum / t).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Raw merged scores for a list of images under the bank's transforms.
pub fn tta_scores(model: &Model, images: &[ImageTensor], bank: &TransformBank) -> Result<Array2<f64>> {
    bank.validate()?;
    let mut per_transform = Vec::with_capacity(bank.transforms.len());
    for chain in &bank.transforms {
        let transformed: Vec<ImageTensor> = images.iter().map(|im| apply_chain(im, chain)).collect();
        per_transform.push(model.score_images(&transformed)?);
    }
    merge_scores(&per_transform, bank.merge)
}

/// Prediction with test-time augmentation over a dataset.
pub fn tta_predict(
    model: &Model,
    dataset: &LabeledDataset,
    bank: &TransformBank,
) -> Result<PredictionMatrix> {
    if dataset.vocabulary() != model.vocabulary() {
        return Err(Error::Validation(
            "model and dataset vocabularies differ".into(),
        ));
    }
    let images: Vec<ImageTensor> = dataset.examples().iter().map(|e| e.image.clone()).collect();
    let scores = tta_scores(model, &images, bank)?;
    PredictionMatrix::new(dataset.image_ids(), scores, model.vocabulary().clone())
}

// ---------------------------------------------------------------------------
// Ensembling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    ModelWise,
    ClassWise,
}

/// Ensemble configuration: the mode plus `k`, the number of models averaged
/// per class (class-wise, default 3) or the number of top models kept
/// (model-wise, `None` = all).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub mode: EnsembleMode,
    #[serde(default)]
    pub k: Option<usize>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            mode: EnsembleMode::ClassWise,
            k: Some(3),
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.k {
            if k == 0 {
                return Err(Error::Validation("ensemble k must be >= 1".into()));
            }
        }
        Ok(())
    }
}

fn check_aligned(preds: &[PredictionMatrix]) -> Result<()> {
    let first = preds
        .first()
        .ok_or_else(|| Error::Validation("ensemble of zero models".into()))?;
    for p in preds.iter().skip(1) {
        if p.vocabulary != first.vocabulary {
            return Err(Error::Validation(
                "ensemble inputs have different vocabularies".into(),
            ));
        }
        if p.image_ids != first.image_ids {
            return Err(Error::Validation(
                "ensemble inputs have different image ids".into(),
            ));
        }
    }
    Ok(())
}

/// Entry-wise arithmetic mean of aligned prediction matrices, averaged in
/// model-index order.
pub fn model_wise_ensemble(preds: &[PredictionMatrix]) -> Result<PredictionMatrix> {
    check_aligned(preds)?;
    let first = &preds[0];
    let mut scores = Array2::zeros(first.scores.dim());
    for p in preds {
        scores += &p.scores;
    }
    scores.mapv_inplace(|v| v / preds.len() as f64);
    PredictionMatrix::new(
        first.image_ids.clone(),
        scores,
        first.vocabulary.clone(),
    )
}

/// Per-model mean dev AP, used to rank models globally.
fn global_dev_maps(dev_aps: &[Vec<Option<f64>>]) -> Vec<f64> {
    dev_aps
        .iter()
        .map(|aps| {
            let defined: Vec<f64> = aps.iter().flatten().copied().collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        })
        .collect()
}

/// Model indices ranked by global dev mAP descending, ties toward the lower
/// model index.
pub fn rank_models_by_dev_map(
    dev_preds: &[PredictionMatrix],
    dev_labels: &LabelSet,
) -> Result<Vec<usize>> {
    let mut dev_aps = Vec::with_capacity(dev_preds.len());
    for p in dev_preds {
        check_dev_alignment(p, dev_labels)?;
        dev_aps.push(per_class_ap(&p.scores, &dev_labels.labels)?);
    }
    let maps = global_dev_maps(&dev_aps);
    let mut order: Vec<usize> = (0..maps.len()).collect();
    order.sort_by(|&a, &b| maps[b].partial_cmp(&maps[a]).expect("finite mAP").then(a.cmp(&b)));
    Ok(order)
}

fn check_dev_alignment(pred: &PredictionMatrix, labels: &LabelSet) -> Result<()> {
    if pred.vocabulary != labels.vocabulary {
        return Err(Error::Validation(
            "dev prediction and label vocabularies differ".into(),
        ));
    }
    if pred.image_ids != labels.image_ids {
        return Err(Error::Validation(
            "dev prediction and label image ids are not aligned".into(),
        ));
    }
    Ok(())
}

/// For each class, averages the test columns of the `k` models with the
/// best dev AP on that class (ties toward the lower model index; selected
/// models averaged in index order). A class with zero dev positives falls
/// back to the global dev-mAP ranking, with a warning.
pub fn class_wise_ensemble(
    dev_preds: &[PredictionMatrix],
    dev_labels: &LabelSet,
    test_preds: &[PredictionMatrix],
    k: usize,
) -> Result<PredictionMatrix> {
    if dev_preds.len() != test_preds.len() {
        return Err(Error::Validation(format!(
            "{} dev matrices for {} test matrices",
            dev_preds.len(),
            test_preds.len()
        )));
    }
    check_aligned(test_preds)?;
    let num_models = test_preds.len();
    if k == 0 || k > num_models {
        return Err(Error::Validation(format!(
            "k {k} outside 1..={num_models}"
        )));
    }
    let mut dev_aps = Vec::with_capacity(num_models);
    for p in dev_preds {
        check_dev_alignment(p, dev_labels)?;
        if p.vocabulary != test_preds[0].vocabulary {
            return Err(Error::Validation(
                "dev and test vocabularies differ".into(),
            ));
        }
        dev_aps.push(per_class_ap(&p.scores, &dev_labels.labels)?);
    }
    let global_order = {
        let maps = global_dev_maps(&dev_aps);
        let mut order: Vec<usize> = (0..num_models).collect();
        order.sort_by(|&a, &b| maps[b].partial_cmp(&maps[a]).expect("finite mAP").then(a.cmp(&b)));
        order
    };

    let first = &test_preds[0];
    let num_classes = first.vocabulary.len();
    let mut scores = Array2::zeros(first.scores.dim());
    for c in 0..num_classes {
        let mut selected: Vec<usize> = if dev_aps.iter().all(|aps| aps[c].is_none()) {
            log::warn!(
                "class '{}' has no dev positives; falling back to global dev-mAP ranking",
                first.vocabulary.name(c)
            );
            global_order.iter().take(k).copied().collect()
        } else {
            let mut ranked: Vec<(usize, f64)> = dev_aps
                .iter()
                .enumerate()
                .map(|(m, aps)| (m, aps[c].unwrap_or(0.0)))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite AP").then(a.0.cmp(&b.0)));
            ranked.into_iter().take(k).map(|(m, _)| m).collect()
        };
        selected.sort_unstable();
        for i in 0..scores.nrows() {
            let mut sum = 0.0;
            for &m in &selected {
                sum += test_preds[m].scores[(i, c)];
            }
            scores[(i, c)] = sum / selected.len() as f64;
        }
    }
    PredictionMatrix::new(first.image_ids.clone(), scores, first.vocabulary.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{build_vocabulary, ClassVocabulary, Example, LabelVector};
    use crate::evaluation::report_from_matrices;
    use crate::model::{ClassEmbeddingTable, ModelConfig};

    fn pm(vocab: &ClassVocabulary, ids: &[&str], rows: &[Vec<f64>]) -> PredictionMatrix {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let scores = Array2::from_shape_vec((rows.len(), vocab.len()), flat).unwrap();
        PredictionMatrix::new(
            ids.iter().map(|s| s.to_string()).collect(),
            scores,
            vocab.clone(),
        )
        .unwrap()
    }

    fn toy_model(classes: usize) -> Model {
        let names: Vec<String> = (0..classes).map(|c| format!("class_{c:02}")).collect();
        let vocab = build_vocabulary(names).unwrap();
        let config = ModelConfig {
            feature_dim: 8,
            num_decoder_layers: 1,
            num_heads: 2,
            encoder_widths: vec![4, 4, 8],
            input_height: 8,
            input_width: 8,
            ..ModelConfig::default()
        };
        let emb = ClassEmbeddingTable::synthetic(&vocab, 8).unwrap();
        Model::new(config, vocab, emb, 3).unwrap()
    }

    fn random_images(n: usize, seed: u64) -> Vec<ImageTensor> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| {
                let data: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.next_f64() as f32).collect();
                ImageTensor::new(data, 8, 8).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_bank_reproduces_predict() {
        let model = toy_model(3);
        let images = random_images(4, 5);
        let bank = TransformBank {
            merge: MergeMode::Geometric,
            transforms: vec![vec![ImageTransform::Identity]],
        };
        let direct = model.score_images(&images).unwrap();
        let tta = tta_scores(&model, &images, &bank).unwrap();
        assert_eq!(direct, tta);
    }

    #[test]
    fn geometric_merge_of_two_scores() {
        let a = Array2::from_shape_vec((1, 1), vec![0.4]).unwrap();
        let b = Array2::from_shape_vec((1, 1), vec![0.9]).unwrap();
        let merged = merge_scores(&[a, b], MergeMode::Geometric).unwrap();
        assert!((merged[(0, 0)] - 0.6).abs() <= 1e-12, "{}", merged[(0, 0)]);
    }

    #[test]
    fn merged_score_within_per_transform_bounds() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..50 {
            let mats: Vec<Array2<f64>> = (0..3)
                .map(|_| Array2::from_shape_fn((2, 3), |_| rng.next_f64()))
                .collect();
            for mode in [MergeMode::Geometric, MergeMode::Arithmetic] {
                let merged = merge_scores(&mats, mode).unwrap();
                for idx in [(0, 0), (1, 2)] {
                    let values: Vec<f64> = mats.iter().map(|m| m[idx]).collect();
                    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    assert!(merged[idx] >= lo - 1e-12 && merged[idx] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn geometric_never_exceeds_arithmetic() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..50 {
            let mats: Vec<Array2<f64>> = (0..4)
                .map(|_| Array2::from_shape_fn((2, 2), |_| rng.next_f64()))
                .collect();
            let geo = merge_scores(&mats, MergeMode::Geometric).unwrap();
            let ari = merge_scores(&mats, MergeMode::Arithmetic).unwrap();
            for (g, a) in geo.iter().zip(ari.iter()) {
                assert!(g <= &(a + 1e-12), "{g} > {a}");
            }
        }
    }

    #[test]
    fn zero_score_floored_not_annihilating() {
        let a = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let b = Array2::from_shape_vec((1, 1), vec![0.9]).unwrap();
        let merged = merge_scores(&[a, b], MergeMode::Geometric).unwrap();
        assert!(merged[(0, 0)] > 0.0);
        assert!((merged[(0, 0)] - (TTA_FLOOR * 0.9f64).sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn transforms_preserve_shape_and_range() {
        let images = random_images(1, 11);
        for t in [
            ImageTransform::Identity,
            ImageTransform::HorizontalFlip,
            ImageTransform::CenterCrop { fraction: 0.9 },
            ImageTransform::RandomCrop {
                fraction: 0.75,
                seed: 4,
            },
        ] {
            let out = apply_transform(&images[0], &t);
            assert_eq!((out.height(), out.width()), (8, 8));
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn random_crop_is_deterministic() {
        let images = random_images(1, 13);
        let t = ImageTransform::RandomCrop {
            fraction: 0.8,
            seed: 21,
        };
        assert_eq!(apply_transform(&images[0], &t), apply_transform(&images[0], &t));
    }

    #[test]
    fn empty_bank_rejected() {
        let bank = TransformBank {
            merge: MergeMode::Geometric,
            transforms: vec![],
        };
        assert!(bank.validate().is_err());
        assert!(TransformBank::default().validate().is_ok());
    }

    #[test]
    fn bank_json_round_trip() {
        let bank = TransformBank::default();
        let json = serde_json::to_string(&bank).unwrap();
        let back: TransformBank = serde_json::from_str(&json).unwrap();
        assert_eq!(bank, back);
    }

    #[test]
    fn model_wise_mean_and_identity() {
        let vocab = build_vocabulary(["a", "b"]).unwrap();
        let p1 = pm(&vocab, &["x"], &[vec![0.2, 0.8]]);
        let p2 = pm(&vocab, &["x"], &[vec![0.4, 0.6]]);
        let merged = model_wise_ensemble(&[p1.clone(), p2]).unwrap();
        assert!((merged.scores[(0, 0)] - 0.3).abs() <= 1e-15);
        assert!((merged.scores[(0, 1)] - 0.7).abs() <= 1e-15);
        let single = model_wise_ensemble(std::slice::from_ref(&p1)).unwrap();
        assert_eq!(single.scores, p1.scores);
    }

    #[test]
    fn model_wise_rejects_misaligned_inputs() {
        let vocab = build_vocabulary(["a"]).unwrap();
        let p1 = pm(&vocab, &["x"], &[vec![0.2]]);
        let p2 = pm(&vocab, &["y"], &[vec![0.4]]);
        assert!(model_wise_ensemble(&[p1, p2]).is_err());
    }

    fn labels_dataset(vocab: &ClassVocabulary, ids: &[&str], rows: &[Vec<f64>]) -> LabeledDataset {
        let img = ImageTensor::new(vec![0.0; 12], 2, 2).unwrap();
        let examples = ids
            .iter()
            .zip(rows)
            .map(|(id, row)| Example {
                image_id: id.to_string(),
                image: img.clone(),
                labels: LabelVector::new(row.clone()).unwrap(),
            })
            .collect();
        LabeledDataset::new(vocab.clone(), examples).unwrap()
    }

    #[test]
    fn class_wise_k1_picks_best_model_per_class() {
        let vocab = build_vocabulary(["a", "b"]).unwrap();
        let ids = ["i0", "i1", "i2"];
        // Model 0 ranks class a perfectly, model 1 ranks class b perfectly.
        let dev_labels = labels_dataset(
            &vocab,
            &ids,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
        );
        let dev0 = pm(
            &vocab,
            &ids,
            &[vec![0.9, 0.1], vec![0.5, 0.2], vec![0.1, 0.9]],
        );
        let dev1 = pm(
            &vocab,
            &ids,
            &[vec![0.2, 0.1], vec![0.9, 0.8], vec![0.5, 0.2]],
        );
        let test0 = pm(&vocab, &["t0"], &[vec![0.11, 0.22]]);
        let test1 = pm(&vocab, &["t0"], &[vec![0.33, 0.44]]);
        let out = class_wise_ensemble(
            &[dev0, dev1],
            &dev_labels.label_set(),
            &[test0, test1],
            1,
        )
        .unwrap();
        assert_eq!(out.scores[(0, 0)], 0.11); // class a from model 0
        assert_eq!(out.scores[(0, 1)], 0.44); // class b from model 1
    }

    #[test]
    fn class_wise_with_all_models_equals_model_wise() {
        let mut rng = SplitMix64::new(33);
        let vocab = build_vocabulary(["a", "b", "c"]).unwrap();
        let ids: Vec<String> = (0..6).map(|i| format!("i{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let label_rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.next_below(2) as f64).collect())
            .collect();
        let dev_labels = labels_dataset(&vocab, &id_refs, &label_rows);
        let rand_pm = |rng: &mut SplitMix64, ids: &[&str]| {
            let rows: Vec<Vec<f64>> = (0..ids.len())
                .map(|_| (0..3).map(|_| rng.next_f64()).collect())
                .collect();
            pm(&vocab, ids, &rows)
        };
        let dev_preds: Vec<_> = (0..3).map(|_| rand_pm(&mut rng, &id_refs)).collect();
        let test_ids = ["t0", "t1"];
        let test_preds: Vec<_> = (0..3).map(|_| rand_pm(&mut rng, &test_ids)).collect();
        let cw = class_wise_ensemble(&dev_preds, &dev_labels.label_set(), &test_preds, 3).unwrap();
        let mw = model_wise_ensemble(&test_preds).unwrap();
        assert_eq!(cw.scores, mw.scores);
    }

    #[test]
    fn class_wise_k1_dev_map_dominates_every_model() {
        let mut rng = SplitMix64::new(35);
        for trial in 0..10 {
            let vocab = build_vocabulary(["a", "b", "c", "d"]).unwrap();
            let n = 10;
            let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let label_rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..4)
                        .map(|c| if i % (c + 2) == 0 { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            let dev_labels = labels_dataset(&vocab, &id_refs, &label_rows);
            let dev_preds: Vec<_> = (0..3)
                .map(|_| {
                    let rows: Vec<Vec<f64>> = (0..n)
                        .map(|_| (0..4).map(|_| rng.next_f64()).collect())
                        .collect();
                    pm(&vocab, &id_refs, &rows)
                })
                .collect();
            // Selecting on dev and applying to dev: per-class AP of the
            // ensemble equals the max per-class dev AP.
            let ensembled =
                class_wise_ensemble(&dev_preds, &dev_labels.label_set(), &dev_preds, 1).unwrap();
            let report = report_from_matrices(&ensembled.scores, &dev_labels.label_matrix()).unwrap();
            for p in &dev_preds {
                let single = report_from_matrices(&p.scores, &dev_labels.label_matrix()).unwrap();
                assert!(
                    report.map >= single.map - 1e-15,
                    "trial {trial}: {} < {}",
                    report.map,
                    single.map
                );
            }
        }
    }

    #[test]
    fn class_with_zero_dev_positives_uses_global_ranking() {
        let vocab = build_vocabulary(["a", "b"]).unwrap();
        let ids = ["i0", "i1"];
        // Class b has no dev positives anywhere.
        let dev_labels = labels_dataset(&vocab, &ids, &[vec![1.0, 0.0], vec![0.0, 0.0]]);
        // Model 1 is globally better (class a AP 1 vs 0.5).
        let dev0 = pm(&vocab, &ids, &[vec![0.1, 0.5], vec![0.9, 0.5]]);
        let dev1 = pm(&vocab, &ids, &[vec![0.9, 0.5], vec![0.1, 0.5]]);
        let test0 = pm(&vocab, &["t"], &[vec![0.2, 0.25]]);
        let test1 = pm(&vocab, &["t"], &[vec![0.8, 0.75]]);
        let out = class_wise_ensemble(&[dev0, dev1], &dev_labels.label_set(), &[test0, test1], 1).unwrap();
        // Both columns come from model 1: class a by AP, class b by fallback.
        assert_eq!(out.scores[(0, 0)], 0.8);
        assert_eq!(out.scores[(0, 1)], 0.75);
    }

    #[test]
    fn rank_models_by_global_dev_map() {
        let vocab = build_vocabulary(["a"]).unwrap();
        let ids = ["i0", "i1"];
        let dev_labels = labels_dataset(&vocab, &ids, &[vec![1.0], vec![0.0]]);
        let good = pm(&vocab, &ids, &[vec![0.9], vec![0.1]]);
        let bad = pm(&vocab, &ids, &[vec![0.1], vec![0.9]]);
        let order = rank_models_by_dev_map(&[bad, good], &dev_labels.label_set()).unwrap();
        assert_eq!(order, vec![1, 0]);
    }
}
