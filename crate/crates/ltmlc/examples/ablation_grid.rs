//! Runs a small on/off ablation grid over the trick toggles and prints the
//! resulting dev-mAP table.
//!
//! Run with: cargo run --release --example ablation_grid

use ltmlc::cli::{load_config, run_ablation};
use ltmlc::synthgen::generate_dataset;

fn main() -> ltmlc::Result<()> {
    // Small but non-trivial: 26 classes on 24x24 images, brief training.
    let overrides: Vec<(String, String)> = [
        ("synth.image_size", "24"),
        ("synth.n_train", "120"),
        ("synth.n_dev", "80"),
        ("synth.n_test", "20"),
        ("synth.seed", "8"),
        ("model.feature_dim", "16"),
        ("model.num_decoder_layers", "1"),
        ("model.num_heads", "2"),
        ("model.encoder_widths", "[8,8,16]"),
        ("model.input_height", "24"),
        ("model.input_width", "24"),
        ("train.epochs", "2"),
        ("train.warmup_epochs", "1"),
        ("train.base_lr", "0.001"),
        ("train.seed", "8"),
        ("ablate.toggles", r#"["separate_classifier","mixup"]"#),
        ("ablate.reweight_k", "9"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let config = load_config(None, &overrides)?;

    let (train_set, dev_set, _) = generate_dataset(&config.synth)?;
    let table = run_ablation(&config, &train_set, &dev_set)?;

    println!("\n{} | dev_map", table.toggle_names.join(" | "));
    for cell in &table.cells {
        let states: Vec<&str> = cell
            .states
            .iter()
            .map(|&s| if s { "on " } else { "off" })
            .collect();
        println!("{} | {:.4}", states.join("                 | "), cell.dev_map);
    }
    Ok(())
}
