//! Trains a small label-query model on synthetic data and reports the
//! per-epoch learning curve against the prevalence baseline.
//!
//! Run with: cargo run --release --example train_toy

use ltmlc::evaluation::prevalence_baseline;
use ltmlc::model::{ClassEmbeddingTable, Model, ModelConfig};
use ltmlc::synthgen::{generate_dataset, SynthConfig};
use ltmlc::training::{train, TrainConfig};

fn main() -> ltmlc::Result<()> {
    let synth = SynthConfig {
        num_classes: 12,
        image_size: 32,
        n_train: 400,
        n_dev: 120,
        n_test: 40,
        seed: 11,
        ..SynthConfig::default()
    };
    let (train_set, dev_set, _) = generate_dataset(&synth)?;

    let model_config = ModelConfig {
        feature_dim: 32,
        num_decoder_layers: 2,
        num_heads: 4,
        encoder_widths: vec![8, 16, 32],
        input_height: 32,
        input_width: 32,
        ..ModelConfig::default()
    };
    let vocab = train_set.vocabulary().clone();
    let embeddings = ClassEmbeddingTable::synthetic(&vocab, model_config.feature_dim)?;
    let mut model = Model::new(model_config, vocab, embeddings, 11)?;
    println!("model parameters: {}", model.num_params());

    let train_config = TrainConfig {
        epochs: 4,
        warmup_epochs: 1,
        base_lr: 1e-3,
        warmup_lr: 1e-4,
        batch_size: 32,
        mixup_alpha: 4.0,
        seed: 11,
        ..TrainConfig::default()
    };
    let run_config = serde_json::json!({"model": model.config(), "train": &train_config});
    let result = train(&mut model, &train_set, &dev_set, &train_config, None, run_config)?;

    let baseline = prevalence_baseline(&dev_set)?;
    println!("prevalence baseline dev mAP: {:.4}", baseline.map);
    for stats in &result.history {
        println!(
            "epoch {} lr {:.2e} train loss {:.4} dev mAP {:.4}",
            stats.epoch, stats.lr, stats.train_loss, stats.dev_map
        );
    }
    println!(
        "best dev mAP {:.4} at epoch {} ({:.1}x baseline)",
        result.best_dev_map.unwrap(),
        result.best_epoch.unwrap(),
        result.best_dev_map.unwrap() / baseline.map
    );
    Ok(())
}
