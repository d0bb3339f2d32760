//! Trains an affine adapter with batch-hard triplet loss on embeddings from
//! a deliberately mismatched encoder and compares validation EER.
//!
//! cargo run --release --example train_adapter

use std::error::Error;

use rand::Rng;
use svkit::corpus::{generate_trials, stratified_split, Manifest, Split, SplitMode, SplitRatios, UtteranceRecord};
use svkit::scoring::EmbeddingArchive;
use svkit::seed::rng_from_seed;
use svkit::trainer::{train, AdapterModel, TrainerConfig, TrainingSet, ValidationSet};

const DIM: usize = 24;
const SPEAKER_DIMS: usize = 6;

fn main() -> Result<(), Box<dyn Error>> {
    let mut rng = rng_from_seed(17);
    // speaker identity lives in a few latent directions; a random linear map
    // and a shared offset hide it from plain cosine scoring
    let mixing: Vec<f64> = (0..DIM * DIM).map(|_| rng.random_range(-0.35..0.35)).collect();
    let offset: Vec<f64> = (0..DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut archive = EmbeddingArchive::new(DIM, "mismatched-encoder");
    let mut records = Vec::new();
    for s in 0..30 {
        let mean: Vec<f64> = (0..SPEAKER_DIMS).map(|_| rng.random_range(-1.5..1.5)).collect();
        for u in 0..24 {
            let latent: Vec<f64> = (0..DIM)
                .map(|d| if d < SPEAKER_DIMS { mean[d] + rng.random_range(-0.2..0.2) } else { rng.random_range(-2.5..2.5) })
                .collect();
            let observed: Vec<f32> = (0..DIM)
                .map(|o| (offset[o] + (0..DIM).map(|j| mixing[o * DIM + j] * latent[j]).sum::<f64>()) as f32)
                .collect();
            let id = format!("spk{s:02}/u{u:02}");
            archive.insert(id.clone(), observed)?;
            records.push(UtteranceRecord::new(id, format!("spk{s:02}"), "n/a", 4.0));
        }
    }
    let manifest = stratified_split(&Manifest::new("toy", records)?, SplitRatios::default(), 1, SplitMode::PerSpeaker)?;
    let trials = generate_trials(&manifest, Some(Split::Val), 150, 150, 1)?;

    let train_set = TrainingSet::from_archive(&archive, &manifest, Some(Split::Train))?;
    let validation = ValidationSet::new(&archive, &trials)?;
    let config = TrainerConfig {
        lr: 1e-2,
        max_epochs: 40,
        seed: 1,
        ..TrainerConfig::default()
    };
    let (model, history) = train(AdapterModel::identity(DIM), &train_set, &validation, &config)?;

    println!("epoch    loss   val EER        lr");
    for e in &history.epochs {
        println!("{:5} {:7.4} {:8.2}% {:9.2e}", e.epoch, e.loss, 100.0 * e.val_eer, e.lr);
    }
    println!(
        "baseline {:.2}% -> best {:.2}% at epoch {} ({})",
        100.0 * history.baseline_val_eer,
        100.0 * history.best_val_eer,
        history.best_epoch,
        history.stop_reason
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("adapter.svad");
    model.save(&path)?;
    let adapted = AdapterModel::load(&path)?.apply_archive(&archive)?;
    println!("adapted archive: {} embeddings of dim {}", adapted.len(), adapted.dim);
    Ok(())
}
