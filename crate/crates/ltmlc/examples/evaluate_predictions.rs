//! Shows the tie-robust average precision metric on hand-built rankings and
//! the prevalence baseline used as a chance reference.
//!
//! Run with: cargo run --example evaluate_predictions

use ltmlc::evaluation::{average_precision, prevalence_baseline};
use ltmlc::synthgen::{generate_dataset, SynthConfig};

fn main() -> ltmlc::Result<()> {
    // A perfect ranking: every positive above every negative.
    let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0])?;
    println!("perfect ranking        AP = {:?}", ap.unwrap());

    // One interleaved negative costs precision at the second recall step.
    let ap = average_precision(&[0.9, 0.8, 0.7], &[1.0, 0.0, 1.0])?;
    println!("interleaved negative   AP = {:.6}", ap.unwrap());

    // Tied scores enter the threshold together.
    let ap = average_precision(&[0.5, 0.5, 0.5, 0.1], &[1.0, 0.0, 1.0, 0.0])?;
    println!("three-way tie          AP = {:.6}", ap.unwrap());

    // A class with no positives has undefined AP.
    let ap = average_precision(&[0.5, 0.4], &[0.0, 0.0])?;
    println!("no positives           AP = {ap:?}");

    // On a long-tailed dataset the chance reference per class is its
    // prevalence, which is what an uninformative constant score earns.
    let synth = SynthConfig {
        num_classes: 8,
        image_size: 16,
        n_train: 1000,
        n_dev: 1,
        n_test: 1,
        seed: 2,
        ..SynthConfig::default()
    };
    let (train_set, _, _) = generate_dataset(&synth)?;
    let baseline = prevalence_baseline(&train_set)?;
    println!("\nprevalence baseline over the long tail:");
    for (c, ap) in baseline.per_class_ap.iter().enumerate() {
        match ap {
            Some(v) => println!("  class_{c:02}: baseline AP {v:.4}"),
            None => println!("  class_{c:02}: undefined (no positives)"),
        }
    }
    println!("baseline mAP: {:.4}", baseline.map);
    Ok(())
}
