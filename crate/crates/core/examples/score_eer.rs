//! Scores a trial list with cosine similarity, applies adaptive s-norm
//! against a cohort and reports EER and DET points.
//!
//! cargo run --example score_eer

use std::error::Error;

use rand::Rng;
use svkit::corpus::{TrialLabel, TrialPair};
use svkit::scoring::{det_points, eer_of_records, score_trials, snorm, write_det_csv, EmbeddingArchive};
use svkit::seed::rng_from_seed;

const DIM: usize = 32;

fn noisy(rng: &mut impl Rng, centre: &[f64], spread: f64) -> Vec<f32> {
    centre.iter().map(|c| (c + spread * rng.random_range(-1.0..1.0)) as f32).collect()
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut rng = rng_from_seed(3);
    let mut archive = EmbeddingArchive::new(DIM, "toy-encoder");
    let shared: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut speakers = Vec::new();
    for s in 0..20 {
        let centre: Vec<f64> = shared.iter().map(|c| c + rng.random_range(-0.8..0.8)).collect();
        for u in 0..4 {
            archive.insert(format!("s{s:02}u{u}"), noisy(&mut rng, &centre, 0.9))?;
        }
        speakers.push(s);
    }
    let mut cohort = Vec::new();
    for c in 0..60 {
        let centre: Vec<f64> = shared.iter().map(|x| x + rng.random_range(-0.8..0.8)).collect();
        archive.insert(format!("cohort{c:02}"), noisy(&mut rng, &centre, 0.9))?;
        cohort.push(format!("cohort{c:02}"));
    }

    let mut trials = Vec::new();
    for &s in &speakers {
        for u in 1..4 {
            trials.push(TrialPair {
                enroll: format!("s{s:02}u0"),
                test: format!("s{s:02}u{u}"),
                label: TrialLabel::Target,
            });
            let other = (s + u) % speakers.len();
            trials.push(TrialPair {
                enroll: format!("s{s:02}u0"),
                test: format!("s{other:02}u{u}"),
                label: TrialLabel::Nontarget,
            });
        }
    }

    let raw = score_trials(&archive, &trials)?;
    let normed = snorm(&raw, &archive, &cohort, 20)?;
    let e_raw = eer_of_records(&raw, false)?;
    let e_norm = eer_of_records(&normed, true)?;
    println!("{} trials", trials.len());
    println!("raw    EER {:6.2}% at threshold {:.4}", 100.0 * e_raw.eer, e_raw.threshold);
    println!("s-norm EER {:6.2}% at threshold {:.4}", 100.0 * e_norm.eer, e_norm.threshold);

    let scores: Vec<f64> = normed.iter().map(|r| r.best_score()).collect();
    let labels: Vec<TrialLabel> = normed.iter().map(|r| r.trial.label).collect();
    let det = det_points(&scores, &labels)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("det.csv");
    write_det_csv(&det, &path)?;
    println!("{} DET points written to {}", det.len(), path.display());
    Ok(())
}
