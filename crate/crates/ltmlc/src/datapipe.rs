//! On-disk dataset format, ingestion, training-time augmentation, and
//! exogenous label harmonization.
//!
//! A dataset on disk is a label CSV `image_id,path,<class names...>` next to
//! the (lossless, 8-bit) image files it references. Harmonization maps an
//! external dataset's label space into a target vocabulary, zero-filling
//! every target class the external set does not annotate.

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::core::{ClassVocabulary, Example, ImageTensor, LabeledDataset, LabelVector};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

// ---------------------------------------------------------------------------
// Label CSV
// ---------------------------------------------------------------------------

/// Rows of a label CSV, before images are loaded.
#[derive(Debug, Clone)]
pub struct LabelTable {
    pub image_ids: Vec<String>,
    pub paths: Vec<String>,
    pub labels: Array2<f64>,
    pub vocabulary: ClassVocabulary,
}

impl LabelTable {
    pub fn label_set(&self) -> crate::core::LabelSet {
        crate::core::LabelSet {
            image_ids: self.image_ids.clone(),
            labels: self.labels.clone(),
            vocabulary: self.vocabulary.clone(),
        }
    }
}

/// Reads a label CSV, taking the vocabulary from the header.
pub fn read_labels_csv(path: &Path) -> Result<LabelTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::csv(1, e.to_string()))?;
    if header.len() < 3 || &header[0] != "image_id" || &header[1] != "path" {
        return Err(Error::csv(
            1,
            "label header must be 'image_id,path,<class names...>'",
        ));
    }
    let vocabulary = ClassVocabulary::new(header.iter().skip(2).map(String::from).collect())?;
    let mut image_ids = Vec::new();
    let mut paths = Vec::new();
    let mut values = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::csv(line, e.to_string()))?;
        if record.len() != vocabulary.len() + 2 {
            return Err(Error::csv(
                line,
                format!(
                    "expected {} fields, found {}",
                    vocabulary.len() + 2,
                    record.len()
                ),
            ));
        }
        image_ids.push(record[0].to_string());
        paths.push(record[1].to_string());
        for field in record.iter().skip(2) {
            match field {
                "0" => values.push(0.0),
                "1" => values.push(1.0),
                other => {
                    return Err(Error::csv(
                        line,
                        format!("label value '{other}' is not 0 or 1"),
                    ))
                }
            }
        }
    }
    let labels = Array2::from_shape_vec((image_ids.len(), vocabulary.len()), values)
        .expect("row-major label buffer matches dimensions");
    Ok(LabelTable {
        image_ids,
        paths,
        labels,
        vocabulary,
    })
}

/// Writes a label CSV with the standard header.
pub fn write_labels_csv(table: &LabelTable, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(0, e.to_string()))?;
    let mut header = vec!["image_id".to_string(), "path".to_string()];
    header.extend(table.vocabulary.names().iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::csv(0, e.to_string()))?;
    for (i, id) in table.image_ids.iter().enumerate() {
        let mut record = vec![id.clone(), table.paths[i].clone()];
        for j in 0..table.vocabulary.len() {
            record.push(if table.labels[(i, j)] == 1.0 { "1" } else { "0" }.to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::csv(0, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn check_vocab_order(expected: &ClassVocabulary, found: &ClassVocabulary) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    let n = expected.len().min(found.len());
    for i in 0..n {
        if expected.name(i) != found.name(i) {
            return Err(Error::Validation(format!(
                "label header mismatch at column {i}: expected '{}', found '{}'",
                expected.name(i),
                found.name(i)
            )));
        }
    }
    Err(Error::Validation(format!(
        "label header has {} classes, vocabulary has {}",
        found.len(),
        expected.len()
    )))
}

/// Loads a dataset: label CSV rows resolved against `image_dir`, images
/// rescaled to `[0, 1]`, grayscale replicated to three channels, and resized
/// to `target_h` x `target_w`.
pub fn load_dataset(
    labels_csv: &Path,
    image_dir: &Path,
    vocab: &ClassVocabulary,
    target_h: usize,
    target_w: usize,
) -> Result<LabeledDataset> {
    let table = read_labels_csv(labels_csv)?;
    check_vocab_order(vocab, &table.vocabulary)?;
    let mut examples = Vec::with_capacity(table.image_ids.len());
    for (i, id) in table.image_ids.iter().enumerate() {
        let path = image_dir.join(&table.paths[i]);
        let decoded = image::open(&path).map_err(|e| {
            Error::Validation(format!(
                "row {} (image_id '{}'): cannot load '{}': {e}",
                i + 2,
                id,
                path.display()
            ))
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data: Vec<f32> = rgb.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
        let img = ImageTensor::new(data, h as usize, w as usize)?;
        let img = if h as usize == target_h && w as usize == target_w {
            img
        } else {
            resize_bilinear(&img, target_h, target_w)
        };
        let labels = LabelVector::new(table.labels.row(i).to_vec())?;
        examples.push(Example {
            image_id: id.clone(),
            image: img,
            labels,
        });
    }
    LabeledDataset::new(vocab.clone(), examples)
}

/// Writes a dataset as `labels.csv` plus one PNG per example under
/// `dir/images/`. Images with three identical channels are stored as 8-bit
/// grayscale, others as 8-bit RGB.
pub fn write_dataset(dataset: &LabeledDataset, dir: &Path) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut paths = Vec::with_capacity(dataset.len());
    for ex in dataset.examples() {
        let rel = format!("images/{}.png", ex.image_id);
        let path = dir.join(&rel);
        let (h, w) = (ex.image.height() as u32, ex.image.width() as u32);
        let is_gray = ex
            .image
            .data()
            .chunks_exact(3)
            .all(|c| c[0] == c[1] && c[0] == c[2]);
        let quantize = |v: f32| (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8;
        if is_gray {
            let buf: Vec<u8> = ex
                .image
                .data()
                .chunks_exact(3)
                .map(|c| quantize(c[0]))
                .collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("buffer sized for dimensions")
                .save(&path)
                .map_err(|e| Error::Validation(format!("cannot write '{}': {e}", path.display())))?;
        } else {
            let buf: Vec<u8> = ex.image.data().iter().map(|&v| quantize(v)).collect();
            image::RgbImage::from_raw(w, h, buf)
                .expect("buffer sized for dimensions")
                .save(&path)
                .map_err(|e| Error::Validation(format!("cannot write '{}': {e}", path.display())))?;
        }
        paths.push(rel);
    }
    let table = LabelTable {
        image_ids: dataset.image_ids(),
        paths,
        labels: dataset.label_matrix(),
        vocabulary: dataset.vocabulary().clone(),
    };
    write_labels_csv(&table, &dir.join("labels.csv"))
}

// ---------------------------------------------------------------------------
// Harmonization and merging
// ---------------------------------------------------------------------------

/// Source-to-target class name pairs for label harmonization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pairs: Vec<(String, String)>,
}

impl LabelMapping {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut sources = HashSet::new();
        let mut targets = HashSet::new();
        for (src, tgt) in &pairs {
            if !sources.insert(src.clone()) {
                return Err(Error::Validation(format!("duplicate mapping source '{src}'")));
            }
            if !targets.insert(tgt.clone()) {
                return Err(Error::Validation(format!("duplicate mapping target '{tgt}'")));
            }
        }
        Ok(LabelMapping { pairs })
    }

    /// Reads a mapping CSV with header `source,target`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::csv(1, e.to_string()))?;
        let header = reader.headers().map_err(|e| Error::csv(1, e.to_string()))?;
        if header.len() != 2 || &header[0] != "source" || &header[1] != "target" {
            return Err(Error::csv(1, "mapping header must be 'source,target'"));
        }
        let mut pairs = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(row_idx + 2, e.to_string()))?;
            pairs.push((record[0].to_string(), record[1].to_string()));
        }
        LabelMapping::new(pairs)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }
}

/// Maps an external label matrix into `target_vocab` column order: mapped
/// columns copy source values, every unmapped target column is identically
/// zero, and ids gain an `ext_` prefix.
pub fn harmonize_labels(
    image_ids: &[String],
    labels: &Array2<f64>,
    source_vocab: &ClassVocabulary,
    mapping: &LabelMapping,
    target_vocab: &ClassVocabulary,
) -> Result<(Vec<String>, Array2<f64>)> {
    let mut column_map = Vec::with_capacity(mapping.pairs.len());
    for (src, tgt) in &mapping.pairs {
        let s = source_vocab
            .index_of(src)
            .ok_or_else(|| Error::Validation(format!("mapping source '{src}' not in external vocabulary")))?;
        let t = target_vocab
            .index_of(tgt)
            .ok_or_else(|| Error::Validation(format!("mapping target '{tgt}' not in target vocabulary")))?;
        column_map.push((s, t));
    }
    let mut out = Array2::zeros((labels.nrows(), target_vocab.len()));
    for &(s, t) in &column_map {
        for i in 0..labels.nrows() {
            out[(i, t)] = labels[(i, s)];
        }
    }
    let ids = image_ids.iter().map(|id| format!("ext_{id}")).collect();
    Ok((ids, out))
}

/// Harmonizes a full dataset (labels remapped, images untouched).
pub fn harmonize(
    external: &LabeledDataset,
    mapping: &LabelMapping,
    target_vocab: &ClassVocabulary,
) -> Result<LabeledDataset> {
    let ids = external.image_ids();
    let labels = external.label_matrix();
    let (new_ids, new_labels) =
        harmonize_labels(&ids, &labels, external.vocabulary(), mapping, target_vocab)?;
    let examples = external
        .examples()
        .iter()
        .zip(new_ids)
        .enumerate()
        .map(|(i, (ex, id))| {
            Ok(Example {
                image_id: id,
                image: ex.image.clone(),
                labels: LabelVector::new(new_labels.row(i).to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(target_vocab.clone(), examples)
}

/// Concatenates datasets over one shared vocabulary, preserving input order.
pub fn merge(datasets: &[LabeledDataset]) -> Result<LabeledDataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Validation("merge of zero datasets".into()))?;
    let vocab = first.vocabulary().clone();
    let mut seen: HashSet<String> = HashSet::new();
    let mut examples = Vec::new();
    for ds in datasets {
        if ds.vocabulary() != &vocab {
            return Err(Error::Validation(
                "merge requires identical vocabularies".into(),
            ));
        }
        for ex in ds.examples() {
            if !seen.insert(ex.image_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate image id '{}' across merged datasets",
                    ex.image_id
                )));
            }
            examples.push(ex.clone());
        }
    }
    LabeledDataset::new(vocab, examples)
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResizeCropConfig {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for ResizeCropConfig {
    fn default() -> Self {
        ResizeCropConfig {
            enabled: false,
            scale_min: 0.8,
            scale_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipConfig {
    pub enabled: bool,
    pub prob: f64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        FlipConfig {
            enabled: false,
            prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationConfig {
    pub enabled: bool,
    pub max_degrees: f64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            enabled: false,
            max_degrees: 10.0,
        }
    }
}

/// Training-time augmentation: resize-crop, horizontal flip, rotation,
/// applied in that fixed order with bilinear resampling and edge padding.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub resize_crop: ResizeCropConfig,
    pub horizontal_flip: FlipConfig,
    pub rotation: RotationConfig,
    pub seed: u64,
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let rc = &self.resize_crop;
        if rc.scale_min <= 0.0 || rc.scale_max > 1.0 || rc.scale_min > rc.scale_max {
            return Err(Error::Validation(format!(
                "resize_crop scale range [{}, {}] not within (0, 1]",
                rc.scale_min, rc.scale_max
            )));
        }
        if !(0.0..=1.0).contains(&self.horizontal_flip.prob) {
            return Err(Error::Validation(format!(
                "flip probability {} outside [0, 1]",
                self.horizontal_flip.prob
            )));
        }
        if self.rotation.max_degrees < 0.0 {
            return Err(Error::Validation("rotation max_degrees must be >= 0".into()));
        }
        Ok(())
    }

    pub fn any_enabled(&self) -> bool {
        self.resize_crop.enabled || self.horizontal_flip.enabled || self.rotation.enabled
    }
}

/// Bilinear sample at fractional coordinates with edge-clamped padding.
fn sample_bilinear(img: &ImageTensor, fy: f64, fx: f64, c: usize) -> f64 {
    let h = img.height() as isize;
    let w = img.width() as isize;
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let y0 = fy.floor();
    let x0 = fx.floor();
    let wy = fy - y0;
    let wx = fx - x0;
    let (y0i, x0i) = (y0 as isize, x0 as isize);
    let p00 = f64::from(img.get(clamp(y0i, h), clamp(x0i, w), c));
    let p01 = f64::from(img.get(clamp(y0i, h), clamp(x0i + 1, w), c));
    let p10 = f64::from(img.get(clamp(y0i + 1, h), clamp(x0i, w), c));
    let p11 = f64::from(img.get(clamp(y0i + 1, h), clamp(x0i + 1, w), c));
    p00 * (1.0 - wy) * (1.0 - wx) + p01 * (1.0 - wy) * wx + p10 * wy * (1.0 - wx) + p11 * wy * wx
}

/// Bilinear resize to an arbitrary size.
pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    resize_window(img, 0.0, 0.0, img.height() as f64, img.width() as f64, out_h, out_w)
}

/// Resamples the window starting at `(top, left)` of size `(win_h, win_w)`
/// onto an `out_h` x `out_w` grid.
pub(crate) fn resize_window(
    img: &ImageTensor,
    top: f64,
    left: f64,
    win_h: f64,
    win_w: f64,
    out_h: usize,
    out_w: usize,
) -> ImageTensor {
    let mut data = vec![0.0f32; out_h * out_w * 3];
    let sy = win_h / out_h as f64;
    let sx = win_w / out_w as f64;
    for y in 0..out_h {
        // Align output pixel centers with window pixel centers.
        let fy = top + (y as f64 + 0.5) * sy - 0.5;
        for x in 0..out_w {
            let fx = left + (x as f64 + 0.5) * sx - 0.5;
            for c in 0..3 {
                data[(y * out_w + x) * 3 + c] =
                    sample_bilinear(img, fy, fx, c).clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImageTensor::new(data, out_h, out_w).expect("resampled values clamped to [0,1]")
}

/// Mirrors an image left-right.
pub fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut data = vec![0.0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = img.get(y, w - 1 - x, c);
            }
        }
    }
    ImageTensor::new(data, h, w).expect("flipped values unchanged")
}

fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut data = vec![0.0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            // Inverse rotation maps output pixels onto source coordinates.
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sy = cy + dy * cos - dx * sin;
            let sx = cx + dy * sin + dx * cos;
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = sample_bilinear(img, sy, sx, c).clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImageTensor::new(data, h, w).expect("rotated values clamped to [0,1]")
}

/// Applies the enabled transforms in fixed order: resize-crop, horizontal
/// flip, rotation. Per enabled stage the RNG consumption is fixed
/// (resize-crop: scale, top, left; flip: one draw; rotation: one draw), so
/// the output is a pure function of `(image, cfg, rng state)`.
pub fn augment(image: &ImageTensor, cfg: &AugmentationConfig, rng: &mut SplitMix64) -> ImageTensor {
    let mut out = image.clone();
    if cfg.resize_crop.enabled {
        let (h, w) = (out.height(), out.width());
        let u = rng.next_f64();
        let scale = cfg.resize_crop.scale_min
            + u * (cfg.resize_crop.scale_max - cfg.resize_crop.scale_min);
        let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
        let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
        let top = rng.next_below((h - ch + 1) as u64) as f64;
        let left = rng.next_below((w - cw + 1) as u64) as f64;
        out = resize_window(&out, top, left, ch as f64, cw as f64, h, w);
    }
    if cfg.horizontal_flip.enabled && rng.next_bool(cfg.horizontal_flip.prob) {
        out = flip_horizontal(&out);
    }
    if cfg.rotation.enabled {
        let u = rng.next_f64();
        let degrees = (2.0 * u - 1.0) * cfg.rotation.max_degrees;
        out = rotate(&out, degrees);
    }
    out
}
