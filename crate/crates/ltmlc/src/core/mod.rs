//! Shared domain types: class vocabulary, label vectors, images, datasets,
//! prediction matrices, and their serialized forms.

mod checkpoint;
mod predictions;

pub use checkpoint::{read_checkpoint, write_checkpoint, ModelCheckpoint, NamedTensor};
pub use predictions::{
    read_predictions, read_predictions_with_header_vocab, write_predictions,
};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Ordered list of unique class names. The order is load-bearing: it fixes
/// the column index of every label and score matrix in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

/// Builds a vocabulary, preserving input order.
pub fn build_vocabulary<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<ClassVocabulary> {
    ClassVocabulary::new(names.into_iter().map(Into::into).collect())
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Validation("empty vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Validation(format!("empty class name at index {i}")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate class '{name}'")));
            }
        }
        Ok(ClassVocabulary { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Reads a vocabulary file: one class name per line, blank lines ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        ClassVocabulary::new(names)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut text = self.names.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl serde::Serialize for ClassVocabulary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for ClassVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        ClassVocabulary::new(names).map_err(serde::de::Error::custom)
    }
}

/// Per-class label values in `[0, 1]`. Raw datasets are binary; fractional
/// values appear only after MixUp.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "label value {v} at class index {i} outside [0, 1]"
                )));
            }
        }
        Ok(LabelVector(values))
    }

    pub fn from_binary(active: &[bool]) -> Self {
        LabelVector(active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for LabelVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// H x W x 3 image with values in `[0, 1]`, stored channels-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
    height: usize,
    width: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("pixel value {v} outside [0, 1]")));
            }
        }
        Ok(ImageTensor {
            data,
            height,
            width,
        })
    }

    /// Builds an RGB tensor by replicating a single-channel plane.
    pub fn from_gray(gray: &[f32], height: usize, width: usize) -> Result<Self> {
        if gray.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "gray plane length {} does not match {height}x{width}",
                gray.len()
            )));
        }
        let mut data = Vec::with_capacity(gray.len() * 3);
        for &v in gray {
            data.extend_from_slice(&[v, v, v]);
        }
        ImageTensor::new(data, height, width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Widens to f64 in the same channels-last layout.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// One labeled example.
#[derive(Debug, Clone)]
pub struct Example {
    pub image_id: String,
    pub image: ImageTensor,
    pub labels: LabelVector,
}

/// Images plus a binary (or MixUp-fractional) label matrix over a shared
/// vocabulary.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    vocabulary: ClassVocabulary,
    examples: Vec<Example>,
}

impl LabeledDataset {
    pub fn new(vocabulary: ClassVocabulary, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if ex.labels.len() != vocabulary.len() {
                return Err(Error::ShapeMismatch(format!(
                    "example '{}' has {} labels, vocabulary has {}",
                    ex.image_id,
                    ex.labels.len(),
                    vocabulary.len()
                )));
            }
            if !seen.insert(ex.image_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate image id '{}'",
                    ex.image_id
                )));
            }
        }
        Ok(LabeledDataset {
            vocabulary,
            examples,
        })
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocabulary
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.image_id.clone()).collect()
    }

    /// Stacks label vectors into an N x |Y| row-major matrix.
    pub fn label_matrix(&self) -> Array2<f64> {
        let n = self.examples.len();
        let c = self.vocabulary.len();
        let mut m = Array2::zeros((n, c));
        for (i, ex) in self.examples.iter().enumerate() {
            for (j, &v) in ex.labels.values().iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Ground-truth labels detached from image data: ids plus a binary label
/// matrix over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub image_ids: Vec<String>,
    pub labels: Array2<f64>,
    pub vocabulary: ClassVocabulary,
}

impl LabelSet {
    pub fn new(image_ids: Vec<String>, labels: Array2<f64>, vocabulary: ClassVocabulary) -> Result<Self> {
        if labels.nrows() != image_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} label rows for {} image ids",
                labels.nrows(),
                image_ids.len()
            )));
        }
        if labels.ncols() != vocabulary.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} label columns for {} classes",
                labels.ncols(),
                vocabulary.len()
            )));
        }
        Ok(LabelSet {
            image_ids,
            labels,
            vocabulary,
        })
    }
}

impl LabeledDataset {
    /// The dataset's labels, detached from the images.
    pub fn label_set(&self) -> LabelSet {
        LabelSet {
            image_ids: self.image_ids(),
            labels: self.label_matrix(),
            vocabulary: self.vocabulary.clone(),
        }
    }
}

/// Per-example, per-class scores in `[0, 1]`, rows ordered as `image_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub image_ids: Vec<String>,
    pub scores: Array2<f64>,
    pub vocabulary: ClassVocabulary,
}

impl PredictionMatrix {
    pub fn new(
        image_ids: Vec<String>,
        scores: Array2<f64>,
        vocabulary: ClassVocabulary,
    ) -> Result<Self> {
        if scores.nrows() != image_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score rows for {} image ids",
                scores.nrows(),
                image_ids.len()
            )));
        }
        if scores.ncols() != vocabulary.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score columns for {} classes",
                scores.ncols(),
                vocabulary.len()
            )));
        }
        for &s in scores.iter() {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(PredictionMatrix {
            image_ids,
            scores,
            vocabulary,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.image_ids.len()
    }
}

impl fmt::Display for ClassVocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.names.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_preserves_order_and_indexes() {
        let v = build_vocabulary(["atelectasis", "edema"]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of("edema"), Some(1));
        assert_eq!(v.name(0), "atelectasis");
    }

    #[test]
    fn vocabulary_rejects_empty() {
        let err = build_vocabulary(Vec::<String>::new()).unwrap_err();
        assert!(err.to_string().contains("empty vocabulary"), "{err}");
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = build_vocabulary(["a", "a"]).unwrap_err();
        assert!(err.to_string().contains("duplicate class 'a'"), "{err}");
    }

    #[test]
    fn vocabulary_rejects_empty_name() {
        let err = build_vocabulary(["a", ""]).unwrap_err();
        assert!(err.to_string().contains("empty class name"), "{err}");
    }

    #[test]
    fn vocabulary_index_is_bijective() {
        let names: Vec<String> = (0..17).map(|i| format!("class_{i:02}")).collect();
        let v = build_vocabulary(names.clone()).unwrap();
        for (i, name) in names.iter().enumerate() {
            assert_eq!(v.index_of(name), Some(i));
            assert_eq!(v.name(i), name);
        }
    }

    #[test]
    fn label_vector_validates_range() {
        assert!(LabelVector::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(LabelVector::new(vec![1.2]).is_err());
        assert!(LabelVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn image_tensor_shape_checked() {
        assert!(ImageTensor::new(vec![0.5; 12], 2, 2).is_ok());
        assert!(ImageTensor::new(vec![0.5; 11], 2, 2).is_err());
        assert!(ImageTensor::new(vec![2.0; 12], 2, 2).is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let vocab = build_vocabulary(["a"]).unwrap();
        let img = ImageTensor::new(vec![0.0; 12], 2, 2).unwrap();
        let ex = |id: &str| Example {
            image_id: id.into(),
            image: img.clone(),
            labels: LabelVector::new(vec![1.0]).unwrap(),
        };
        assert!(LabeledDataset::new(vocab.clone(), vec![ex("x"), ex("x")]).is_err());
        assert!(LabeledDataset::new(vocab, vec![ex("x"), ex("y")]).is_ok());
    }

    #[test]
    fn prediction_matrix_validates() {
        let vocab = build_vocabulary(["a", "b"]).unwrap();
        let ok = Array2::from_shape_vec((1, 2), vec![0.25, 0.75]).unwrap();
        assert!(PredictionMatrix::new(vec!["i".into()], ok, vocab.clone()).is_ok());
        let bad = Array2::from_shape_vec((1, 2), vec![0.25, 1.75]).unwrap();
        assert!(PredictionMatrix::new(vec!["i".into()], bad, vocab).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = build_vocabulary(["alpha", "beta"]).unwrap();
        v.write_file(&path).unwrap();
        let back = ClassVocabulary::from_file(&path).unwrap();
        assert_eq!(v, back);
    }

    proptest::proptest! {
        /// Name -> index -> name is the identity for any unique name list.
        #[test]
        fn vocabulary_bijection(names in proptest::collection::hash_set("[a-z]{1,8}", 1..20)) {
            let names: Vec<String> = names.into_iter().collect();
            let v = build_vocabulary(names.clone()).unwrap();
            for (i, name) in names.iter().enumerate() {
                proptest::prop_assert_eq!(v.index_of(name), Some(i));
                proptest::prop_assert_eq!(v.name(i), name);
            }
            proptest::prop_assert_eq!(v.len(), names.len());
        }
    }
}
