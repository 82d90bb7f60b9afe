//! Compares plain prediction against geometric-mean test-time augmentation
//! over the default transform bank.
//!
//! Run with: cargo run --release --example predict_with_tta

use ltmlc::evaluation::mean_average_precision;
use ltmlc::inference::{tta_predict, MergeMode, TransformBank};
use ltmlc::model::{ClassEmbeddingTable, Model, ModelConfig};
use ltmlc::synthgen::{generate_dataset, SynthConfig};
use ltmlc::training::{train, TrainConfig};

fn main() -> ltmlc::Result<()> {
    let synth = SynthConfig {
        num_classes: 10,
        image_size: 32,
        n_train: 300,
        n_dev: 100,
        n_test: 100,
        seed: 3,
        ..SynthConfig::default()
    };
    let (train_set, dev_set, test_set) = generate_dataset(&synth)?;

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
    let mut model = Model::new(model_config, vocab, embeddings, 3)?;
    let train_config = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        base_lr: 1e-3,
        warmup_lr: 1e-4,
        mixup_alpha: 0.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let run_config = serde_json::json!({"model": model.config(), "train": &train_config});
    train(&mut model, &train_set, &dev_set, &train_config, None, run_config)?;

    let plain = model.predict(&test_set)?;
    println!(
        "plain prediction       test mAP {:.4}",
        mean_average_precision(&plain, &test_set)?.map
    );

    let bank = TransformBank::default();
    println!(
        "TTA bank: {} transform chains, geometric merge",
        bank.transforms.len()
    );
    let tta = tta_predict(&model, &test_set, &bank)?;
    println!(
        "geometric-mean TTA     test mAP {:.4}",
        mean_average_precision(&tta, &test_set)?.map
    );

    let arithmetic = TransformBank {
        merge: MergeMode::Arithmetic,
        ..TransformBank::default()
    };
    let tta_arith = tta_predict(&model, &test_set, &arithmetic)?;
    println!(
        "arithmetic-mean TTA    test mAP {:.4}",
        mean_average_precision(&tta_arith, &test_set)?.map
    );
    Ok(())
}
