//! Generates a synthetic long-tailed multi-label dataset and writes it in
//! the on-disk format (labels.csv + PNG images per split).
//!
//! Run with: cargo run --release --example generate_data

use ltmlc::synthgen::{class_prevalences, generate_dataset, SynthConfig};

fn main() -> ltmlc::Result<()> {
    let config = SynthConfig {
        num_classes: 26,
        image_size: 64,
        n_train: 200,
        n_dev: 50,
        n_test: 50,
        seed: 7,
        ..SynthConfig::default()
    };

    let prevalences = class_prevalences(
        config.num_classes,
        config.p_head,
        config.imbalance_ratio,
    );
    println!("target prevalence profile (head -> tail):");
    for (c, p) in prevalences.iter().enumerate() {
        if c % 5 == 0 || c == config.num_classes - 1 {
            println!("  class_{c:02}: {p:.4}");
        }
    }

    let (train, dev, test) = generate_dataset(&config)?;
    let labels = train.label_matrix();
    println!("\nempirical train prevalences (n = {}):", train.len());
    for c in [0, 5, 12, 25] {
        let freq = labels.column(c).sum() / train.len() as f64;
        println!("  class_{c:02}: {freq:.4}");
    }
    for pair in config.effective_cooc_pairs() {
        let (mut n_parent, mut n_both) = (0.0, 0.0);
        for row in labels.rows() {
            if row[pair.parent] == 1.0 {
                n_parent += 1.0;
                n_both += row[pair.child];
            }
        }
        if n_parent > 0.0 {
            println!(
                "  P(class_{:02} | class_{:02}) = {:.3} (boost prob {})",
                pair.child,
                pair.parent,
                n_both / n_parent,
                pair.prob
            );
        }
    }

    let out = std::env::temp_dir().join("ltmlc_example_data");
    for (name, split) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        ltmlc::datapipe::write_dataset(split, &dir)?;
    }
    train.vocabulary().write_file(&out.join("vocab.txt"))?;
    println!("\nwrote dataset under {}", out.display());
    Ok(())
}
