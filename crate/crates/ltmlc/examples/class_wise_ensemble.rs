//! Trains three models with different seeds, then compares model-wise
//! averaging against per-class selection of the best development-set models.
//!
//! Run with: cargo run --release --example class_wise_ensemble

use ltmlc::core::PredictionMatrix;
use ltmlc::evaluation::mean_average_precision;
use ltmlc::inference::{class_wise_ensemble, model_wise_ensemble};
use ltmlc::model::{ClassEmbeddingTable, Model, ModelConfig};
use ltmlc::synthgen::{generate_dataset, SynthConfig};
use ltmlc::training::{train, TrainConfig};

fn main() -> ltmlc::Result<()> {
    let synth = SynthConfig {
        num_classes: 10,
        image_size: 32,
        n_train: 300,
        n_dev: 120,
        n_test: 120,
        seed: 19,
        ..SynthConfig::default()
    };
    let (train_set, dev_set, test_set) = generate_dataset(&synth)?;

    let mut dev_preds: Vec<PredictionMatrix> = Vec::new();
    let mut test_preds: Vec<PredictionMatrix> = Vec::new();
    for seed in [101u64, 202, 303] {
        let model_config = ModelConfig {
            feature_dim: 32,
            num_decoder_layers: 1,
            num_heads: 4,
            encoder_widths: vec![8, 16, 32],
            input_height: 32,
            input_width: 32,
            ..ModelConfig::default()
        };
        let vocab = train_set.vocabulary().clone();
        let embeddings = ClassEmbeddingTable::synthetic(&vocab, model_config.feature_dim)?;
        let mut model = Model::new(model_config, vocab, embeddings, seed)?;
        let train_config = TrainConfig {
            epochs: 2,
            warmup_epochs: 1,
            base_lr: 1e-3,
            warmup_lr: 1e-4,
            mixup_alpha: 0.0,
            seed,
            ..TrainConfig::default()
        };
        let run_config = serde_json::json!({"model": model.config(), "train": &train_config});
        train(&mut model, &train_set, &dev_set, &train_config, None, run_config)?;
        let dev = model.predict(&dev_set)?;
        println!(
            "model seed {seed}: dev mAP {:.4}",
            mean_average_precision(&dev, &dev_set)?.map
        );
        dev_preds.push(dev);
        test_preds.push(model.predict(&test_set)?);
    }

    let model_wise = model_wise_ensemble(&test_preds)?;
    println!(
        "\nmodel-wise ensemble (mean of all): test mAP {:.4}",
        mean_average_precision(&model_wise, &test_set)?.map
    );
    for k in [1, 2, 3] {
        let class_wise =
            class_wise_ensemble(&dev_preds, &dev_set.label_set(), &test_preds, k)?;
        println!(
            "class-wise ensemble (k = {k}):      test mAP {:.4}",
            mean_average_precision(&class_wise, &test_set)?.map
        );
    }
    Ok(())
}
