//! Saves a trained model to the binary checkpoint format, reloads it, and
//! verifies the reloaded model reproduces the same predictions.
//!
//! Run with: cargo run --release --example checkpoint_roundtrip

use ltmlc::core::{read_checkpoint, write_checkpoint};
use ltmlc::model::{ClassEmbeddingTable, Model, ModelConfig};
use ltmlc::synthgen::{generate_dataset, SynthConfig};
use ltmlc::training::{train, TrainConfig};

fn main() -> ltmlc::Result<()> {
    let synth = SynthConfig {
        num_classes: 6,
        image_size: 16,
        n_train: 60,
        n_dev: 30,
        n_test: 20,
        seed: 13,
        ..SynthConfig::default()
    };
    let (train_set, dev_set, test_set) = generate_dataset(&synth)?;

    let model_config = ModelConfig {
        feature_dim: 16,
        num_decoder_layers: 1,
        num_heads: 2,
        encoder_widths: vec![4, 8, 16],
        input_height: 16,
        input_width: 16,
        ..ModelConfig::default()
    };
    let vocab = train_set.vocabulary().clone();
    let embeddings = ClassEmbeddingTable::synthetic(&vocab, model_config.feature_dim)?;
    let mut model = Model::new(model_config, vocab, embeddings, 13)?;
    let train_config = TrainConfig {
        epochs: 1,
        warmup_epochs: 0,
        base_lr: 1e-3,
        mixup_alpha: 0.0,
        seed: 13,
        ..TrainConfig::default()
    };
    let run_config = serde_json::json!({"model": model.config(), "train": &train_config});
    let result = train(&mut model, &train_set, &dev_set, &train_config, None, run_config)?;

    let path = std::env::temp_dir().join("ltmlc_example_checkpoint.ltmlc");
    write_checkpoint(&result.checkpoint, &path)?;
    let bytes = std::fs::metadata(&path).unwrap().len();
    println!(
        "wrote checkpoint: {} tensors, {bytes} bytes ({})",
        result.checkpoint.tensors.len(),
        path.display()
    );

    let reloaded = Model::from_checkpoint(&read_checkpoint(&path)?)?;
    let a = model.predict(&test_set)?;
    let b = reloaded.predict(&test_set)?;
    let max_diff = a
        .scores
        .iter()
        .zip(b.scores.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        .max(0.0);
    // Parameters travel as f32, so reloaded scores differ only at f32
    // precision.
    println!("max |score difference| after reload: {max_diff:.2e}");
    assert!(max_diff < 1e-4);
    println!("reloaded model reproduces predictions");
    Ok(())
}
