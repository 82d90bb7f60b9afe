//! Reproducible synthetic long-tailed multi-label datasets.
//!
//! Class prevalences follow an exponential long-tail profile controlled by a
//! head/tail imbalance ratio. Labels are Bernoulli draws with optional
//! parent-child co-occurrence boosts, and images carry one Gaussian bump per
//! active class at a fixed grid position, so a small convolutional model can
//! actually learn the classes.

use serde::{Deserialize, Serialize};

use crate::core::{
    build_vocabulary, ClassVocabulary, Example, ImageTensor, LabeledDataset, LabelVector,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Bump placement grid is 5 columns by 6 rows.
const GRID_COLS: usize = 5;
const GRID_ROWS: usize = 6;
const MAX_CLASSES: usize = GRID_COLS * GRID_ROWS;
const BUMP_AMPLITUDE: f64 = 0.8;
const BUMP_SIGMA: f64 = 3.0;
const BACKGROUND: f64 = 0.1;

/// A directed co-occurrence rule: when `parent` is active, `child` is forced
/// active with probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoocPair {
    pub parent: usize,
    pub child: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Prevalence of the most frequent class.
    pub p_head: f64,
    /// Head-to-tail prevalence ratio (imbalance factor).
    pub imbalance_ratio: f64,
    /// Parent-child co-occurrence rules; `None` derives the default five
    /// pairs from `num_classes`.
    pub cooc_pairs: Option<Vec<CoocPair>>,
    /// Images are square `image_size` x `image_size`.
    pub image_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 26,
            p_head: 0.5,
            imbalance_ratio: 100.0,
            cooc_pairs: None,
            image_size: 64,
            noise_std: 0.05,
            seed: 42,
            n_train: 2000,
            n_dev: 500,
            n_test: 500,
        }
    }
}

/// Five parent-child pairs linking head classes to mid-tail classes, each
/// with conditional probability 0.5.
pub fn default_cooc_pairs(num_classes: usize) -> Vec<CoocPair> {
    let half = num_classes / 2;
    (0..5)
        .filter(|i| i + half < num_classes && *i < half)
        .map(|i| CoocPair {
            parent: i,
            child: i + half,
            prob: 0.5,
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Validation("num_classes must be >= 1".into()));
        }
        if !self.p_head.is_finite() || self.p_head <= 0.0 || self.p_head > 1.0 {
            return Err(Error::Validation(format!(
                "p_head {} outside (0, 1]",
                self.p_head
            )));
        }
        if !(self.imbalance_ratio.is_finite() && self.imbalance_ratio >= 1.0) {
            return Err(Error::Validation(format!(
                "imbalance_ratio {} must be >= 1",
                self.imbalance_ratio
            )));
        }
        for (i, pair) in self.effective_cooc_pairs().iter().enumerate() {
            if pair.parent == pair.child {
                return Err(Error::Validation(format!(
                    "cooc pair {i} has parent == child == {}",
                    pair.parent
                )));
            }
            if pair.parent >= self.num_classes || pair.child >= self.num_classes {
                return Err(Error::Validation(format!(
                    "cooc pair {i} references class outside 0..{}",
                    self.num_classes
                )));
            }
            if !(0.0..=1.0).contains(&pair.prob) {
                return Err(Error::Validation(format!(
                    "cooc pair {i} probability {} outside [0, 1]",
                    pair.prob
                )));
            }
        }
        if self.image_size == 0 {
            return Err(Error::Validation("image_size must be >= 1".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Validation("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// The configured pairs, or the derived defaults when unset.
    pub fn effective_cooc_pairs(&self) -> Vec<CoocPair> {
        match &self.cooc_pairs {
            Some(pairs) => pairs.clone(),
            None => default_cooc_pairs(self.num_classes),
        }
    }

    pub fn vocabulary(&self) -> ClassVocabulary {
        build_vocabulary((0..self.num_classes).map(|c| format!("class_{c:02}")))
            .expect("generated names are unique and non-empty")
    }
}

/// Exponential prevalence profile: `p_c = p_head * rho^(-c / (C-1))`.
///
/// For `C = 1` the exponent is defined as zero.
pub fn class_prevalences(num_classes: usize, p_head: f64, imbalance_ratio: f64) -> Vec<f64> {
    if num_classes == 1 {
        return vec![p_head];
    }
    (0..num_classes)
        .map(|c| p_head * imbalance_ratio.powf(-(c as f64) / (num_classes as f64 - 1.0)))
        .collect()
}

/// Draws one binary label vector: independent Bernoulli per class, then the
/// co-occurrence pairs applied in list order, each triggered parent costing
/// one extra uniform draw for its child.
pub fn sample_labels(
    prevalences: &[f64],
    cooc_pairs: &[CoocPair],
    rng: &mut SplitMix64,
) -> LabelVector {
    let mut active: Vec<bool> = prevalences.iter().map(|&p| rng.next_bool(p)).collect();
    for pair in cooc_pairs {
        if active[pair.parent] && !active[pair.child] && rng.next_bool(pair.prob) {
            active[pair.child] = true;
        }
    }
    LabelVector::from_binary(&active)
}

/// Bump center of class `c` in pixel coordinates `(x, y)`.
fn grid_center(c: usize, height: usize, width: usize) -> (f64, f64) {
    let col = c % GRID_COLS;
    let row = c / GRID_COLS;
    let cx = (col as f64 + 0.5) / GRID_COLS as f64 * width as f64;
    let cy = (row as f64 + 0.5) / GRID_ROWS as f64 * height as f64;
    (cx, cy)
}

/// Per-class additive bump images, precomputed once per generation run.
struct BumpTable {
    planes: Vec<Vec<f64>>,
}

impl BumpTable {
    fn new(num_classes: usize, height: usize, width: usize) -> Self {
        let planes = (0..num_classes)
            .map(|c| {
                let (cx, cy) = grid_center(c, height, width);
                let mut plane = vec![0.0; height * width];
                for y in 0..height {
                    for x in 0..width {
                        let dx = x as f64 - cx;
                        let dy = y as f64 - cy;
                        plane[y * width + x] = BUMP_AMPLITUDE
                            * (-(dx * dx + dy * dy) / (2.0 * BUMP_SIGMA * BUMP_SIGMA)).exp();
                    }
                }
                plane
            })
            .collect();
        BumpTable { planes }
    }
}

fn render_with_table(
    labels: &LabelVector,
    config: &SynthConfig,
    rng: &mut SplitMix64,
    table: &BumpTable,
) -> Result<ImageTensor> {
    if labels.len() != config.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "label vector has {} entries, config has {} classes",
            labels.len(),
            config.num_classes
        )));
    }
    if config.num_classes > MAX_CLASSES {
        return Err(Error::Validation(format!(
            "grid exhausted: {} classes exceed the {GRID_COLS}x{GRID_ROWS} placement grid",
            config.num_classes
        )));
    }
    let size = config.image_size;
    let mut plane = vec![0.0f64; size * size];
    for v in plane.iter_mut() {
        let noise = if config.noise_std > 0.0 {
            config.noise_std * rng.next_normal()
        } else {
            0.0
        };
        *v = (BACKGROUND + noise).clamp(0.0, 1.0);
    }
    for (c, &value) in labels.values().iter().enumerate() {
        if value == 1.0 {
            let bump = &table.planes[c];
            for (v, &b) in plane.iter_mut().zip(bump) {
                *v += b;
            }
        }
    }
    let gray: Vec<f32> = plane.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    ImageTensor::from_gray(&gray, size, size)
}

/// Renders one image: clamped noisy background at 0.1, one Gaussian bump
/// (amplitude 0.8, sigma 3 px) per active class at its grid position,
/// clamped to `[0, 1]` and replicated to three channels.
///
/// When `noise_std > 0`, exactly one normal variate is consumed per pixel in
/// row-major order; `noise_std = 0` consumes no randomness.
pub fn render_image(
    labels: &LabelVector,
    config: &SynthConfig,
    rng: &mut SplitMix64,
) -> Result<ImageTensor> {
    let table = BumpTable::new(config.num_classes.min(MAX_CLASSES), config.image_size, config.image_size);
    render_with_table(labels, config, rng, &table)
}

/// Generates train/dev/test splits, deterministic in `config.seed`.
///
/// Each split consumes its own derived RNG stream (tags 0, 1, 2); per
/// example, label draws precede pixel draws.
pub fn generate_dataset(
    config: &SynthConfig,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    config.validate()?;
    if config.num_classes > MAX_CLASSES {
        return Err(Error::Validation(format!(
            "grid exhausted: {} classes exceed the {GRID_COLS}x{GRID_ROWS} placement grid",
            config.num_classes
        )));
    }
    let splits = [
        ("train", config.n_train, 0u64),
        ("dev", config.n_dev, 1u64),
        ("test", config.n_test, 2u64),
    ];
    for (name, size, _) in &splits {
        if *size == 0 {
            return Err(Error::Validation(format!("split '{name}' has size 0")));
        }
    }
    let vocab = config.vocabulary();
    let prevalences = class_prevalences(config.num_classes, config.p_head, config.imbalance_ratio);
    let cooc_pairs = config.effective_cooc_pairs();
    let table = BumpTable::new(config.num_classes, config.image_size, config.image_size);

    let mut datasets = Vec::with_capacity(3);
    for (name, size, tag) in splits {
        let mut rng = SplitMix64::new(derive_seed(config.seed, tag));
        let mut examples = Vec::with_capacity(size);
        for i in 0..size {
            let labels = sample_labels(&prevalences, &cooc_pairs, &mut rng);
            let image = render_with_table(&labels, config, &mut rng, &table)?;
            examples.push(Example {
                image_id: format!("synth_{name}_{i}"),
                image,
                labels,
            });
        }
        datasets.push(LabeledDataset::new(vocab.clone(), examples)?);
    }
    let mut it = datasets.into_iter();
    Ok((
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    ))
}
