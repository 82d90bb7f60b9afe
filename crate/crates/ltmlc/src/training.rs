//! Weighted multi-label loss, MixUp, the warmup + cosine learning-rate
//! schedule, AdamW, and the optimization loop.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::core::{ImageTensor, LabeledDataset, ModelCheckpoint};
use crate::datapipe::{augment, AugmentationConfig};
use crate::error::{Error, Result};
use crate::evaluation::mean_average_precision;
use crate::model::{stable_sigmoid, Model};
use crate::rng::{derive_seed, SplitMix64};

/// Per-class positive loss weights.
///
/// Weights are validated as non-negative rather than strictly positive so
/// that one-hot weight vectors can isolate a single class's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("empty class weight vector".into()));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Validation(format!(
                    "class weight {w} at index {i} must be finite and >= 0"
                )));
            }
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights(vec![1.0; num_classes])
    }

    /// All-ones with `factor` at the given class indices.
    pub fn upweighted(num_classes: usize, classes: &[usize], factor: f64) -> Result<Self> {
        let mut w = vec![1.0; num_classes];
        for &c in classes {
            if c >= num_classes {
                return Err(Error::Validation(format!(
                    "upweight class index {c} outside 0..{num_classes}"
                )));
            }
            w[c] = factor;
        }
        ClassWeights::new(w)
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub warmup_lr: f64,
    pub batch_size: usize,
    /// Beta(alpha, alpha) MixUp parameter; 0 disables MixUp.
    pub mixup_alpha: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Per-class loss weights; `None` means all ones.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            warmup_epochs: 20,
            base_lr: 5e-5,
            warmup_lr: 1e-6,
            batch_size: 32,
            mixup_alpha: 4.0,
            weight_decay: 0.0,
            seed: 42,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.epochs {
            return Err(Error::Validation(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.base_lr <= 0.0 || self.warmup_lr <= 0.0
            || !self.base_lr.is_finite() || !self.warmup_lr.is_finite() {
            return Err(Error::Validation("learning rates must be > 0".into()));
        }
        if self.mixup_alpha < 0.0 {
            return Err(Error::Validation("mixup_alpha must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        if let Some(w) = &self.class_weights {
            ClassWeights::new(w.clone())?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

fn check_loss_inputs(logits: &Array2<f64>, labels: &Array2<f64>, w: &ClassWeights) -> Result<()> {
    if logits.dim() != labels.dim() {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs labels {:?}",
            logits.dim(),
            labels.dim()
        )));
    }
    if w.len() != logits.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} class weights for {} classes",
            w.len(),
            logits.ncols()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite logits".into()));
    }
    if labels.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::Validation("labels outside [0, 1]".into()));
    }
    Ok(())
}

/// Mean-over-examples weighted binary cross-entropy on logits, computed in
/// the numerically stable `max(z,0) - z*y + ln(1 + exp(-|z|))` form.
pub fn weighted_bce_loss(
    logits: &Array2<f64>,
    labels: &Array2<f64>,
    w: &ClassWeights,
) -> Result<f64> {
    check_loss_inputs(logits, labels, w)?;
    let n = logits.nrows() as f64;
    let mut total = 0.0;
    for (zrow, yrow) in logits.rows().into_iter().zip(labels.rows()) {
        for ((&z, &y), &wc) in zrow.iter().zip(yrow.iter()).zip(w.values()) {
            total += wc * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        }
    }
    Ok(total / n)
}

/// Loss plus its gradient with respect to the logits.
pub fn weighted_bce_loss_grad(
    logits: &Array2<f64>,
    labels: &Array2<f64>,
    w: &ClassWeights,
) -> Result<(f64, Array2<f64>)> {
    let loss = weighted_bce_loss(logits, labels, w)?;
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    for ((mut grow, zrow), yrow) in grad
        .rows_mut()
        .into_iter()
        .zip(logits.rows())
        .zip(labels.rows())
    {
        for (j, ((&z, &y), &wc)) in zrow.iter().zip(yrow.iter()).zip(w.values()).enumerate() {
            grow[j] = wc * (stable_sigmoid(z) - y) / n;
        }
    }
    Ok((loss, grad))
}

/// Full-model loss and parameter gradient for one batch of images.
pub fn loss_and_param_grad(
    model: &Model,
    images: &[&ImageTensor],
    labels: &Array2<f64>,
    w: &ClassWeights,
) -> Result<(f64, Vec<f64>)> {
    let batch = model.image_batch(images)?;
    let (logits, cache) = model.forward_f64(&batch, images.len())?;
    let (loss, d_logits) = weighted_bce_loss_grad(&logits, labels, w)?;
    let mut grads = vec![0.0; model.num_params()];
    model.backward(&cache, &d_logits, &mut grads);
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// Reweighting selection
// ---------------------------------------------------------------------------

/// Indices of the `k` classes with the smallest development AP, ties broken
/// toward the lower class index. Classes with undefined AP (no positives)
/// are not eligible.
pub fn select_upweight_classes(per_class_dev_ap: &[Option<f64>], k: usize) -> Result<Vec<usize>> {
    if k > per_class_dev_ap.len() {
        return Err(Error::Validation(format!(
            "k {} exceeds {} classes",
            k,
            per_class_dev_ap.len()
        )));
    }
    let mut defined: Vec<(usize, f64)> = per_class_dev_ap
        .iter()
        .enumerate()
        .filter_map(|(i, ap)| ap.map(|v| (i, v)))
        .collect();
    defined.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite AP").then(a.0.cmp(&b.0)));
    Ok(defined.into_iter().take(k).map(|(i, _)| i).collect())
}

// ---------------------------------------------------------------------------
// MixUp
// ---------------------------------------------------------------------------

/// Convexly combines a batch with a permuted copy of itself.
///
/// `images` holds `n` examples of `rows_per_example` rows each; `labels`
/// holds one row per example. One lambda ~ Beta(alpha, alpha) is drawn per
/// batch, then a uniform permutation; `alpha = 0` is the identity and
/// consumes no randomness.
pub fn mixup_batch(
    images: &Array2<f64>,
    labels: &Array2<f64>,
    alpha: f64,
    rng: &mut SplitMix64,
) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let n = labels.nrows();
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    if !images.nrows().is_multiple_of(n) {
        return Err(Error::ShapeMismatch(format!(
            "{} image rows not divisible by {} examples",
            images.nrows(),
            n
        )));
    }
    if alpha < 0.0 {
        return Err(Error::Validation("mixup alpha must be >= 0".into()));
    }
    if alpha == 0.0 {
        return Ok((images.clone(), labels.clone(), 1.0));
    }
    let rows_per_example = images.nrows() / n;
    let lambda = rng.next_beta(alpha, alpha);
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);

    let mut mixed_images = images.clone();
    let mut mixed_labels = labels.clone();
    for i in 0..n {
        let j = perm[i];
        for r in 0..rows_per_example {
            let dst = i * rows_per_example + r;
            let src = j * rows_per_example + r;
            for c in 0..images.ncols() {
                mixed_images[(dst, c)] =
                    lambda * images[(dst, c)] + (1.0 - lambda) * images[(src, c)];
            }
        }
        for c in 0..labels.ncols() {
            mixed_labels[(i, c)] =
                (lambda * labels[(i, c)] + (1.0 - lambda) * labels[(j, c)]).clamp(0.0, 1.0);
        }
    }
    Ok((mixed_images, mixed_labels, lambda))
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// Linear warmup from `warmup_lr` to `base_lr`, then cosine decay to zero
/// over the remaining epochs.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Validation(format!(
            "epoch {} outside 0..{}",
            epoch, cfg.epochs
        )));
    }
    if epoch < cfg.warmup_epochs {
        let t = epoch as f64 / cfg.warmup_epochs as f64;
        Ok(cfg.warmup_lr + (cfg.base_lr - cfg.warmup_lr) * t)
    } else {
        let span = (cfg.epochs - cfg.warmup_epochs) as f64;
        let t = (epoch - cfg.warmup_epochs) as f64 / span;
        Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

/// AdamW with decoupled weight decay (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        AdamW {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_map: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    /// Checkpoint of the best-dev-mAP epoch (initialization when 0 epochs).
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_dev_map: Option<f64>,
}

/// Writes the per-epoch history CSV `epoch,lr,train_loss,dev_mAP`.
pub fn write_history(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,dev_mAP\n");
    for s in history {
        out.push_str(&format!("{},{},{},{}\n", s.epoch, s.lr, s.train_loss, s.dev_map));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// Derived RNG stream tags. Per-epoch streams are derived from the
// per-purpose stream so that epoch order and batch composition are
// independent draws.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_MIXUP: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

/// Runs seeded mini-batch AdamW training. The embedding table is frozen by
/// construction (it is not part of the parameter vector). Returns the
/// checkpoint of the best dev-mAP epoch, ties resolved toward the earlier
/// epoch. The model is left holding the best parameters.
///
/// `run_config` is embedded verbatim in the checkpoint; it must contain the
/// `model` section for `Model::from_checkpoint` to work.
pub fn train(
    model: &mut Model,
    train_set: &LabeledDataset,
    dev_set: &LabeledDataset,
    cfg: &TrainConfig,
    augment_cfg: Option<&AugmentationConfig>,
    run_config: serde_json::Value,
) -> Result<TrainResult> {
    cfg.validate()?;
    if let Some(a) = augment_cfg {
        a.validate()?;
    }
    if train_set.vocabulary() != model.vocabulary() || dev_set.vocabulary() != model.vocabulary() {
        return Err(Error::Validation(
            "model, train, and dev vocabularies must agree".into(),
        ));
    }
    let num_classes = model.vocabulary().len();
    let weights = match &cfg.class_weights {
        Some(w) => {
            let w = ClassWeights::new(w.clone())?;
            if w.len() != num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "{} class weights for {num_classes} classes",
                    w.len()
                )));
            }
            w
        }
        None => ClassWeights::uniform(num_classes),
    };

    let embeddings_before = model.embeddings().vectors().clone();
    let n = train_set.len();
    let (h, w_px) = (
        model.config().input_height,
        model.config().input_width,
    );
    let mut optimizer = AdamW::new(model.num_params(), cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_params: Vec<f64> = model.param_data().to_vec();
    let mut best: Option<(f64, usize)> = None;
    let mut grads = vec![0.0; model.num_params()];

    let label_matrix = train_set.label_matrix();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            SplitMix64::new(derive_seed(derive_seed(cfg.seed, STREAM_SHUFFLE), epoch as u64));
        shuffle_rng.shuffle(&mut order);
        let mut mixup_rng =
            SplitMix64::new(derive_seed(derive_seed(cfg.seed, STREAM_MIXUP), epoch as u64));

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bn = chunk.len();
            let mut images = Array2::zeros((bn * h * w_px, 3));
            let mut labels = Array2::zeros((bn, num_classes));
            for (bi, &ex_idx) in chunk.iter().enumerate() {
                let ex = &train_set.examples()[ex_idx];
                let img = match augment_cfg {
                    Some(a) if a.any_enabled() => {
                        let stream = derive_seed(a.seed ^ cfg.seed, STREAM_AUGMENT);
                        let mut ex_rng = SplitMix64::new(derive_seed(
                            stream,
                            (epoch * n + ex_idx) as u64,
                        ));
                        augment(&ex.image, a, &mut ex_rng)
                    }
                    _ => ex.image.clone(),
                };
                let base = bi * h * w_px;
                for (px, chunk3) in img.data().chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        images[(base + px, c)] = f64::from(chunk3[c]);
                    }
                }
                labels.row_mut(bi).assign(&label_matrix.row(ex_idx));
            }
            let (images, labels, _lambda) = if cfg.mixup_alpha > 0.0 {
                mixup_batch(&images, &labels, cfg.mixup_alpha, &mut mixup_rng)?
            } else {
                (images, labels, 1.0)
            };

            let (logits, cache) = model.forward_f64(&images, bn)?;
            let (loss, d_logits) = weighted_bce_loss_grad(&logits, &labels, &weights)
                .map_err(|_| Error::NonFiniteLoss { batch: batch_idx })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_idx });
            }
            loss_sum += loss * bn as f64;
            grads.iter_mut().for_each(|g| *g = 0.0);
            model.backward(&cache, &d_logits, &mut grads);
            optimizer.step(model.param_data_mut(), &grads, lr);
        }

        let dev_pred = model.predict(dev_set)?;
        let report = mean_average_precision(&dev_pred, dev_set)?;
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            dev_map: report.map,
        });
        if best.is_none_or(|(best_map, _)| report.map > best_map) {
            best = Some((report.map, epoch));
            best_params.copy_from_slice(model.param_data());
        }
    }

    model.param_data_mut().copy_from_slice(&best_params);
    debug_assert_eq!(model.embeddings().vectors(), &embeddings_before);

    Ok(TrainResult {
        checkpoint: model.to_checkpoint(run_config),
        history,
        best_epoch: best.map(|(_, e)| e),
        best_dev_map: best.map(|(m, _)| m),
    })
}
