//! Experiment driver: one JSON run configuration plus subcommands that tie
//! data generation, training, prediction, evaluation, ensembling,
//! harmonization, and the ablation grid together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::core::{
    read_checkpoint, read_predictions_with_header_vocab, write_checkpoint, write_predictions,
    ClassVocabulary, LabeledDataset, PredictionMatrix,
};
use crate::datapipe::{
    harmonize_labels, load_dataset, read_labels_csv, write_dataset, write_labels_csv,
    AugmentationConfig, LabelMapping, LabelTable,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, write_report};
use crate::inference::{
    class_wise_ensemble, model_wise_ensemble, rank_models_by_dev_map, tta_predict, EnsembleMode,
    EnsembleSpec, TransformBank,
};
use crate::model::{ClassEmbeddingTable, EmbeddingSource, HeadMode, Model, ModelConfig};
use crate::synthgen::{generate_dataset, SynthConfig};
use crate::training::{
    select_upweight_classes, train, write_history, ClassWeights, TrainConfig,
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// The four trick toggles of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationToggle {
    SeparateClassifier,
    Reweighting,
    Mixup,
    Tta,
}

impl AblationToggle {
    pub fn name(&self) -> &'static str {
        match self {
            AblationToggle::SeparateClassifier => "separate_classifier",
            AblationToggle::Reweighting => "reweighting",
            AblationToggle::Mixup => "mixup",
            AblationToggle::Tta => "tta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Toggles to vary; the grid has `2^len` cells.
    pub toggles: Vec<AblationToggle>,
    /// Number of worst dev classes to upweight when reweighting is on.
    pub reweight_k: usize,
    pub reweight_factor: f64,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            toggles: vec![
                AblationToggle::SeparateClassifier,
                AblationToggle::Reweighting,
                AblationToggle::Mixup,
                AblationToggle::Tta,
            ],
            reweight_k: 9,
            reweight_factor: 2.0,
        }
    }
}

/// One JSON document fully determining a run together with its seeds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentationConfig,
    pub tta: TransformBank,
    pub ensemble: EnsembleSpec,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.tta.validate()?;
        self.ensemble.validate()?;
        if self.ablate.toggles.is_empty() {
            return Err(Error::Validation("ablate.toggles is empty".into()));
        }
        let mut seen = Vec::new();
        for t in &self.ablate.toggles {
            if seen.contains(t) {
                return Err(Error::Validation(format!(
                    "duplicate ablation toggle '{}'",
                    t.name()
                )));
            }
            seen.push(*t);
        }
        if self.ablate.reweight_factor <= 0.0 {
            return Err(Error::Validation("reweight_factor must be > 0".into()));
        }
        Ok(())
    }
}

fn serde_path_to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{key}")),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Applies one `--set key=value` override onto a JSON document; `key` is a
/// dotted path, `value` is parsed as JSON with a plain-string fallback.
fn apply_override(doc: &mut serde_json::Value, key: &str, raw_value: &str) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| serde_json::Value::String(raw_value.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            return Err(Error::Config {
                pointer: format!("/{}", parts[..i].join("/")),
                msg: "cannot set a key inside a non-object value".into(),
            });
        }
        let map = cursor.as_object_mut().expect("checked above");
        if i == parts.len() - 1 {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    Ok(())
}

/// Loads a run config from an optional JSON file plus `--set` overrides.
/// Unknown keys are rejected with a JSON pointer to the offender.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                pointer: "/".into(),
                msg: format!("invalid JSON: {e}"),
            })?
        }
        None => serde_json::Value::Object(serde_json::Map::new()),
    };
    for (key, value) in overrides {
        apply_override(&mut doc, key, value)?;
    }
    let deserializer = doc.clone();
    let result: std::result::Result<RunConfig, _> =
        serde_path_to_error::deserialize(&deserializer);
    let config = result.map_err(|e| Error::Config {
        pointer: serde_path_to_pointer(e.path()),
        msg: e.inner().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum CliCommand {
    GenerateData {
        out_dir: PathBuf,
    },
    Train {
        data_dir: PathBuf,
        out_dir: PathBuf,
        class_weights: Option<PathBuf>,
    },
    Predict {
        checkpoint: PathBuf,
        data_dir: PathBuf,
        out: PathBuf,
        tta: Option<PathBuf>,
    },
    Evaluate {
        predictions: PathBuf,
        labels: PathBuf,
        out: PathBuf,
    },
    Ensemble {
        /// `None` falls back to `config.ensemble.mode`.
        mode: Option<EnsembleMode>,
        /// `None` falls back to `config.ensemble.k`.
        k: Option<usize>,
        dev_preds: Vec<PathBuf>,
        dev_labels: PathBuf,
        test_preds: Vec<PathBuf>,
        out: PathBuf,
    },
    Harmonize {
        labels: PathBuf,
        mapping: PathBuf,
        target_vocab: PathBuf,
        out: PathBuf,
    },
    Ablate {
        data_dir: Option<PathBuf>,
        out: PathBuf,
    },
}

/// Runs one subcommand against a loaded configuration.
pub fn run(command: &CliCommand, config: &RunConfig) -> Result<()> {
    match command {
        CliCommand::GenerateData { out_dir } => generate_data(config, out_dir),
        CliCommand::Train {
            data_dir,
            out_dir,
            class_weights,
        } => train_command(config, data_dir, out_dir, class_weights.as_deref()),
        CliCommand::Predict {
            checkpoint,
            data_dir,
            out,
            tta,
        } => predict_command(checkpoint, data_dir, out, tta.as_deref()),
        CliCommand::Evaluate {
            predictions,
            labels,
            out,
        } => evaluate_command(predictions, labels, out),
        CliCommand::Ensemble {
            mode,
            k,
            dev_preds,
            dev_labels,
            test_preds,
            out,
        } => ensemble_command(
            mode.unwrap_or(config.ensemble.mode),
            k.or(config.ensemble.k),
            dev_preds,
            dev_labels,
            test_preds,
            out,
        ),
        CliCommand::Harmonize {
            labels,
            mapping,
            target_vocab,
            out,
        } => harmonize_command(labels, mapping, target_vocab, out),
        CliCommand::Ablate { data_dir, out } => ablate_command(config, data_dir.as_deref(), out),
    }
}

fn generate_data(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let (train_set, dev_set, test_set) = generate_dataset(&config.synth)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    train_set
        .vocabulary()
        .write_file(&out_dir.join("vocab.txt"))?;
    for (name, ds) in [("train", &train_set), ("dev", &dev_set), ("test", &test_set)] {
        let dir = out_dir.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_dataset(ds, &dir)?;
        println!("wrote {} examples to {}", ds.len(), dir.display());
    }
    Ok(())
}

fn load_split(config: &RunConfig, data_dir: &Path, split: &str, vocab: &ClassVocabulary) -> Result<LabeledDataset> {
    let dir = data_dir.join(split);
    load_dataset(
        &dir.join("labels.csv"),
        &dir,
        vocab,
        config.model.input_height,
        config.model.input_width,
    )
}

fn build_embeddings(config: &ModelConfig, vocab: &ClassVocabulary) -> Result<ClassEmbeddingTable> {
    match &config.embedding_source {
        EmbeddingSource::Synthetic => ClassEmbeddingTable::synthetic(vocab, config.feature_dim),
        EmbeddingSource::Csv { path } => {
            ClassEmbeddingTable::from_csv(path, vocab, config.feature_dim)
        }
    }
}

/// Reads a `class,weight` CSV into a vocabulary-ordered weight vector.
fn read_class_weights(path: &Path, vocab: &ClassVocabulary) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::csv(1, e.to_string()))?;
    if header.len() != 2 || &header[0] != "class" || &header[1] != "weight" {
        return Err(Error::csv(1, "weight header must be 'class,weight'"));
    }
    let mut weights = vec![1.0; vocab.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::csv(line, e.to_string()))?;
        let Some(c) = vocab.index_of(&record[0]) else {
            return Err(Error::csv(line, format!("unknown class '{}'", &record[0])));
        };
        weights[c] = record[1]
            .parse()
            .map_err(|_| Error::csv(line, format!("invalid weight '{}'", &record[1])))?;
    }
    ClassWeights::new(weights.clone())?;
    Ok(weights)
}

fn train_command(
    config: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    class_weights: Option<&Path>,
) -> Result<()> {
    let vocab = ClassVocabulary::from_file(&data_dir.join("vocab.txt")).or_else(|_| {
        read_labels_csv(&data_dir.join("train").join("labels.csv")).map(|t| t.vocabulary)
    })?;
    let train_set = load_split(config, data_dir, "train", &vocab)?;
    let dev_set = load_split(config, data_dir, "dev", &vocab)?;

    let mut effective = config.clone();
    if let Some(path) = class_weights {
        effective.train.class_weights = Some(read_class_weights(path, &vocab)?);
    }
    let embeddings = build_embeddings(&effective.model, &vocab)?;
    let mut model = Model::new(
        effective.model.clone(),
        vocab,
        embeddings,
        effective.train.seed,
    )?;
    let run_config = serde_json::to_value(&effective)
        .map_err(|e| Error::Manifest(format!("cannot serialize run config: {e}")))?;
    let result = train(
        &mut model,
        &train_set,
        &dev_set,
        &effective.train,
        Some(&effective.augment),
        run_config,
    )?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join("checkpoint.ltmlc");
    write_checkpoint(&result.checkpoint, &ckpt_path)?;
    write_history(&result.history, &out_dir.join("history.csv"))?;
    match (result.best_epoch, result.best_dev_map) {
        (Some(e), Some(m)) => println!(
            "trained {} epochs; best dev mAP {m:.6} at epoch {e}; checkpoint {}",
            result.history.len(),
            ckpt_path.display()
        ),
        _ => println!("0 epochs; wrote initialization to {}", ckpt_path.display()),
    }
    Ok(())
}

fn predict_command(
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    tta: Option<&Path>,
) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let dataset = load_dataset(
        &data_dir.join("labels.csv"),
        data_dir,
        model.vocabulary(),
        model.config().input_height,
        model.config().input_width,
    )?;
    let predictions = match tta {
        Some(bank_path) => {
            let text = std::fs::read_to_string(bank_path).map_err(|e| Error::io(bank_path, e))?;
            let bank: TransformBank = serde_json::from_str(&text).map_err(|e| Error::Config {
                pointer: "/".into(),
                msg: format!("invalid TTA bank: {e}"),
            })?;
            tta_predict(&model, &dataset, &bank)?
        }
        None => model.predict(&dataset)?,
    };
    write_predictions(&predictions, out)?;
    println!(
        "wrote {} x {} predictions to {}",
        predictions.num_examples(),
        predictions.vocabulary.len(),
        out.display()
    );
    Ok(())
}

fn evaluate_command(predictions: &Path, labels: &Path, out: &Path) -> Result<()> {
    let pm = read_predictions_with_header_vocab(predictions)?;
    let table = read_labels_csv(labels)?;
    let report = evaluate_predictions(&pm, &table.label_set())?;
    write_report(&report, &pm.vocabulary, out)?;
    let excluded = report.excluded_classes();
    if !excluded.is_empty() {
        let names: Vec<&str> = excluded.iter().map(|&i| pm.vocabulary.name(i)).collect();
        println!(
            "excluded {} classes with zero positives: {}",
            excluded.len(),
            names.join(", ")
        );
    }
    println!("mAP {:.6} ({})", report.map, out.display());
    Ok(())
}

fn ensemble_command(
    mode: EnsembleMode,
    k: Option<usize>,
    dev_pred_paths: &[PathBuf],
    dev_labels: &Path,
    test_pred_paths: &[PathBuf],
    out: &Path,
) -> Result<()> {
    let dev_preds: Vec<PredictionMatrix> = dev_pred_paths
        .iter()
        .map(|p| read_predictions_with_header_vocab(p))
        .collect::<Result<_>>()?;
    let test_preds: Vec<PredictionMatrix> = test_pred_paths
        .iter()
        .map(|p| read_predictions_with_header_vocab(p))
        .collect::<Result<_>>()?;
    let labels = read_labels_csv(dev_labels)?.label_set();
    let merged = match mode {
        EnsembleMode::ClassWise => {
            let k = k.unwrap_or(3).min(test_preds.len());
            class_wise_ensemble(&dev_preds, &labels, &test_preds, k)?
        }
        EnsembleMode::ModelWise => {
            let order = rank_models_by_dev_map(&dev_preds, &labels)?;
            let k = k.unwrap_or(test_preds.len()).min(test_preds.len());
            if k == 0 {
                return Err(Error::Validation("ensemble k must be >= 1".into()));
            }
            let mut selected: Vec<usize> = order.into_iter().take(k).collect();
            selected.sort_unstable();
            let chosen: Vec<PredictionMatrix> =
                selected.iter().map(|&i| test_preds[i].clone()).collect();
            model_wise_ensemble(&chosen)?
        }
    };
    write_predictions(&merged, out)?;
    println!("wrote ensembled predictions to {}", out.display());
    Ok(())
}

fn harmonize_command(
    labels: &Path,
    mapping_path: &Path,
    target_vocab_path: &Path,
    out: &Path,
) -> Result<()> {
    let table = read_labels_csv(labels)?;
    let mapping = LabelMapping::from_csv(mapping_path)?;
    let target_vocab = ClassVocabulary::from_file(target_vocab_path)?;
    let (ids, matrix) = harmonize_labels(
        &table.image_ids,
        &table.labels,
        &table.vocabulary,
        &mapping,
        &target_vocab,
    )?;
    let out_table = LabelTable {
        image_ids: ids,
        paths: table.paths,
        labels: matrix,
        vocabulary: target_vocab,
    };
    write_labels_csv(&out_table, out)?;
    println!(
        "harmonized {} rows into {} classes ({})",
        out_table.image_ids.len(),
        out_table.vocabulary.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

/// One evaluated cell of the ablation grid.
#[derive(Debug, Clone)]
pub struct AblationCell {
    /// Toggle states in `AblateConfig::toggles` order.
    pub states: Vec<bool>,
    pub dev_map: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub toggle_names: Vec<String>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = self.toggle_names.join(",");
        out.push_str(",dev_map\n");
        for cell in &self.cells {
            for &s in &cell.states {
                out.push_str(if s { "1," } else { "0," });
            }
            out.push_str(&format!("{}\n", cell.dev_map));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

struct CellOutcome {
    dev_map: f64,
    dev_per_class_ap: Vec<Option<f64>>,
}

fn run_cell(
    config: &RunConfig,
    train_set: &LabeledDataset,
    dev_set: &LabeledDataset,
    states: &BTreeMap<AblationToggle, bool>,
    weights: Option<&[f64]>,
) -> Result<CellOutcome> {
    let on = |t: AblationToggle| states.get(&t).copied();
    let mut model_cfg = config.model.clone();
    if let Some(sep) = on(AblationToggle::SeparateClassifier) {
        model_cfg.head_mode = if sep { HeadMode::Separate } else { HeadMode::Shared };
    }
    let mut train_cfg = config.train.clone();
    if let Some(mix) = on(AblationToggle::Mixup) {
        train_cfg.mixup_alpha = if mix { config.train.mixup_alpha } else { 0.0 };
    }
    train_cfg.class_weights = match on(AblationToggle::Reweighting) {
        Some(true) => Some(
            weights
                .ok_or_else(|| Error::Validation("reweighting cell without weights".into()))?
                .to_vec(),
        ),
        Some(false) => None,
        None => config.train.class_weights.clone(),
    };

    let vocab = train_set.vocabulary().clone();
    let embeddings = build_embeddings(&model_cfg, &vocab)?;
    let mut model = Model::new(model_cfg.clone(), vocab, embeddings, train_cfg.seed)?;
    let run_config = serde_json::json!({"model": &model_cfg, "train": &train_cfg});
    train(
        &mut model,
        train_set,
        dev_set,
        &train_cfg,
        Some(&config.augment),
        run_config,
    )?;
    let predictions = match on(AblationToggle::Tta) {
        Some(true) => tta_predict(&model, dev_set, &config.tta)?,
        _ => model.predict(dev_set)?,
    };
    let report = evaluate_predictions(&predictions, &dev_set.label_set())?;
    Ok(CellOutcome {
        dev_map: report.map,
        dev_per_class_ap: report.per_class_ap,
    })
}

/// Runs the configured on/off grid. The reweighted cells upweight the
/// `reweight_k` classes with the worst dev AP under the all-off baseline
/// cell, by `reweight_factor`.
pub fn run_ablation(
    config: &RunConfig,
    train_set: &LabeledDataset,
    dev_set: &LabeledDataset,
) -> Result<AblationTable> {
    let toggles = &config.ablate.toggles;
    if config.train.mixup_alpha == 0.0 && toggles.contains(&AblationToggle::Mixup) {
        return Err(Error::Validation(
            "mixup toggle requires train.mixup_alpha > 0".into(),
        ));
    }
    let num_cells = 1usize << toggles.len();

    // Baseline cell (all toggles off) drives the reweighting selection.
    let all_off: BTreeMap<AblationToggle, bool> =
        toggles.iter().map(|&t| (t, false)).collect();
    let baseline = run_cell(config, train_set, dev_set, &all_off, None)?;
    let weights = if toggles.contains(&AblationToggle::Reweighting) {
        let k = config.ablate.reweight_k.min(dev_set.vocabulary().len());
        let worst = select_upweight_classes(&baseline.dev_per_class_ap, k)?;
        Some(
            ClassWeights::upweighted(
                dev_set.vocabulary().len(),
                &worst,
                config.ablate.reweight_factor,
            )?
            .values()
            .to_vec(),
        )
    } else {
        None
    };

    let mut cells = Vec::with_capacity(num_cells);
    for row in 0..num_cells {
        let states_vec: Vec<bool> = (0..toggles.len())
            .map(|i| (row >> (toggles.len() - 1 - i)) & 1 == 1)
            .collect();
        let states: BTreeMap<AblationToggle, bool> = toggles
            .iter()
            .zip(&states_vec)
            .map(|(&t, &s)| (t, s))
            .collect();
        let outcome = if states_vec.iter().all(|&s| !s) {
            CellOutcome {
                dev_map: baseline.dev_map,
                dev_per_class_ap: vec![],
            }
        } else {
            run_cell(config, train_set, dev_set, &states, weights.as_deref())?
        };
        println!(
            "ablate cell {row:>3}: [{}] dev mAP {:.6}",
            toggles
                .iter()
                .zip(&states_vec)
                .map(|(t, &s)| format!("{}={}", t.name(), u8::from(s)))
                .collect::<Vec<_>>()
                .join(" "),
            outcome.dev_map
        );
        cells.push(AblationCell {
            states: states_vec,
            dev_map: outcome.dev_map,
        });
    }
    Ok(AblationTable {
        toggle_names: toggles.iter().map(|t| t.name().to_string()).collect(),
        cells,
    })
}

fn ablate_command(config: &RunConfig, data_dir: Option<&Path>, out: &Path) -> Result<()> {
    let (train_set, dev_set) = match data_dir {
        Some(dir) => {
            let vocab = ClassVocabulary::from_file(&dir.join("vocab.txt")).or_else(|_| {
                read_labels_csv(&dir.join("train").join("labels.csv")).map(|t| t.vocabulary)
            })?;
            (
                load_split(config, dir, "train", &vocab)?,
                load_split(config, dir, "dev", &vocab)?,
            )
        }
        None => {
            let (train_set, dev_set, _) = generate_dataset(&config.synth)?;
            (train_set, dev_set)
        }
    };
    let table = run_ablation(config, &train_set, &dev_set)?;
    table.write_csv(out)?;
    println!(
        "wrote {} ablation cells to {}",
        table.cells.len(),
        out.display()
    );
    Ok(())
}

impl std::cmp::PartialOrd for AblationToggle {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::cmp::Ord for AblationToggle {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.name().cmp(other.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_reported_with_pointer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"train": {"lr_rate": 0.1}}"#).unwrap();
        let err = load_config(Some(&path), &[]).unwrap_err();
        match err {
            Error::Config { pointer, msg } => {
                assert!(pointer.starts_with("/train"), "{pointer}");
                assert!(msg.contains("lr_rate"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn set_overrides_apply_with_json_values() {
        let overrides = vec![
            ("train.base_lr".to_string(), "0.001".to_string()),
            ("synth.num_classes".to_string(), "6".to_string()),
            ("model.head_mode".to_string(), "\"shared\"".to_string()),
        ];
        let cfg = load_config(None, &overrides).unwrap();
        assert_eq!(cfg.train.base_lr, 0.001);
        assert_eq!(cfg.synth.num_classes, 6);
        assert_eq!(cfg.model.head_mode, HeadMode::Shared);
    }

    #[test]
    fn bad_override_type_reports_pointer() {
        let overrides = vec![("train.epochs".to_string(), "\"many\"".to_string())];
        let err = load_config(None, &overrides).unwrap_err();
        match err {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/train/epochs"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ablate_grid_size_is_two_to_the_toggles() {
        // 2 toggles -> 4 rows, checked end to end on a tiny config.
        let overrides = vec![
            ("synth.num_classes".into(), "4".into()),
            ("synth.image_size".into(), "16".into()),
            ("synth.n_train".into(), "12".into()),
            ("synth.n_dev".into(), "8".into()),
            ("synth.n_test".into(), "2".into()),
            ("synth.cooc_pairs".into(), "[]".into()),
            ("synth.p_head".into(), "0.8".into()),
            ("synth.imbalance_ratio".into(), "2".into()),
            ("model.feature_dim".into(), "8".into()),
            ("model.num_decoder_layers".into(), "1".into()),
            ("model.num_heads".into(), "2".into()),
            ("model.encoder_widths".into(), "[4,4,8]".into()),
            ("model.input_height".into(), "16".into()),
            ("model.input_width".into(), "16".into()),
            ("train.epochs".into(), "1".into()),
            ("train.warmup_epochs".into(), "0".into()),
            ("train.batch_size".into(), "8".into()),
            (
                "ablate.toggles".into(),
                "[\"mixup\",\"tta\"]".into(),
            ),
        ];
        let cfg = load_config(None, &overrides).unwrap();
        let (train_set, dev_set, _) = generate_dataset(&cfg.synth).unwrap();
        let table = run_ablation(&cfg, &train_set, &dev_set).unwrap();
        assert_eq!(table.cells.len(), 4);
        assert_eq!(table.toggle_names, vec!["mixup", "tta"]);
        assert_eq!(table.cells[0].states, vec![false, false]);
        assert_eq!(table.cells[3].states, vec![true, true]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        table.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "mixup,tta,dev_map");
        assert!(lines[1].starts_with("0,0,"));
        assert!(lines[4].starts_with("1,1,"));
    }
}
