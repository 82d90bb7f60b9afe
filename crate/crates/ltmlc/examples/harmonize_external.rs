//! Maps an external dataset with a narrower label space into the target
//! vocabulary (unannotated classes become hard zeros), merges it with the
//! in-domain training set, and trains on the union.
//!
//! Run with: cargo run --release --example harmonize_external

use ltmlc::core::build_vocabulary;
use ltmlc::datapipe::{harmonize, merge, LabelMapping};
use ltmlc::model::{ClassEmbeddingTable, Model, ModelConfig};
use ltmlc::synthgen::{generate_dataset, SynthConfig};
use ltmlc::training::{train, TrainConfig};

fn main() -> ltmlc::Result<()> {
    // In-domain data: 16 classes at 32x32.
    let synth = SynthConfig {
        num_classes: 16,
        image_size: 32,
        n_train: 150,
        n_dev: 60,
        n_test: 30,
        seed: 5,
        ..SynthConfig::default()
    };
    let (train_set, dev_set, _) = generate_dataset(&synth)?;

    // External data annotates only 8 of those classes, under its own names.
    let ext_synth = SynthConfig {
        num_classes: 8,
        image_size: 32,
        p_head: 0.7,
        imbalance_ratio: 4.0,
        n_train: 100,
        n_dev: 1,
        n_test: 1,
        seed: 99,
        ..SynthConfig::default()
    };
    let (ext_raw, _, _) = generate_dataset(&ext_synth)?;
    let ext_names: Vec<String> = (0..8).map(|c| format!("finding_{c}")).collect();
    let renamed = ltmlc::core::LabeledDataset::new(
        build_vocabulary(ext_names.clone())?,
        ext_raw.examples().to_vec(),
    )?;

    // Map finding_i onto class_{2i}.
    let mapping = LabelMapping::new(
        (0..8)
            .map(|i| (format!("finding_{i}"), format!("class_{:02}", 2 * i)))
            .collect(),
    )?;
    let harmonized = harmonize(&renamed, &mapping, train_set.vocabulary())?;

    let m = harmonized.label_matrix();
    let zero_cols: Vec<usize> = (0..16)
        .filter(|&c| m.column(c).iter().all(|&v| v == 0.0))
        .collect();
    println!(
        "harmonized {} external examples into {} classes",
        harmonized.len(),
        train_set.vocabulary().len()
    );
    println!("all-zero (unannotated) columns: {zero_cols:?}");
    println!("first external id: {}", harmonized.examples()[0].image_id);

    let merged = merge(&[train_set.clone(), harmonized])?;
    println!(
        "merged training set: {} + {} = {} examples",
        train_set.len(),
        merged.len() - train_set.len(),
        merged.len()
    );

    let model_config = ModelConfig {
        feature_dim: 16,
        num_decoder_layers: 1,
        num_heads: 2,
        encoder_widths: vec![8, 8, 16],
        input_height: 32,
        input_width: 32,
        ..ModelConfig::default()
    };
    let vocab = merged.vocabulary().clone();
    let embeddings = ClassEmbeddingTable::synthetic(&vocab, model_config.feature_dim)?;
    let mut model = Model::new(model_config, vocab, embeddings, 5)?;
    let train_config = TrainConfig {
        epochs: 1,
        warmup_epochs: 0,
        base_lr: 1e-3,
        mixup_alpha: 0.0,
        seed: 5,
        ..TrainConfig::default()
    };
    let run_config = serde_json::json!({"model": model.config(), "train": &train_config});
    let result = train(&mut model, &merged, &dev_set, &train_config, None, run_config)?;
    println!(
        "trained on the merged set: dev mAP {:.4}",
        result.best_dev_map.unwrap()
    );
    Ok(())
}
