//! Triplet-loss training of an affine embedding adapter over frozen encoder
//! embeddings.
//!
//! The adapter maps `x ↦ (W·x + b) / ‖W·x + b‖`. Each epoch shuffles the
//! training set into P-speaker × K-utterance batches, mines the hardest
//! positive and negative for every anchor inside the batch, and applies an
//! Adam update with exact analytic gradients. After every epoch the
//! validation EER drives a reduce-on-plateau learning-rate schedule and early
//! stopping; the best-scoring snapshot is returned.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Manifest, Split, TrialLabel, TrialPair};
use crate::scoring::{compute_eer, cosine_score, EmbeddingArchive, ScoringError};
use crate::seed::rng_from_seed;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SVAD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("input dimension {found} does not match adapter input {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("training set has no speaker with two or more utterances")]
    EmptyTrainingSet,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Affine head with length-normalized output. Parameters are stored flat:
/// the row-major `d_out × d_in` weight followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    d_in: usize,
    d_out: usize,
    params: Vec<f64>,
}

impl AdapterModel {
    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self, TrainError> {
        if d_in == 0 || d_out == 0 || d_out > d_in {
            return Err(TrainError::InvalidConfig(format!(
                "adapter shape {d_out}x{d_in} needs 0 < d_out <= d_in"
            )));
        }
        if weight.len() != d_in * d_out || bias.len() != d_out {
            return Err(TrainError::InvalidConfig("parameter lengths do not match shape".into()));
        }
        let mut params = weight;
        params.extend(bias);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(TrainError::InvalidConfig("non-finite adapter parameter".into()));
        }
        Ok(Self { d_in, d_out, params })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weight, vec![0.0; dim]).expect("identity shape is valid")
    }

    /// Uniform init with variance `1 / d_in` and zero bias.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Result<Self, TrainError> {
        let a = (3.0 / d_in.max(1) as f64).sqrt();
        let weight = (0..d_in * d_out).map(|_| rng.random_range(-a..a)).collect();
        Self::new(d_in, d_out, weight, vec![0.0; d_out])
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.params[..self.d_in * self.d_out]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.d_in * self.d_out..]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `W·x + b` before normalization.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let w = self.weight();
        self.bias()
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * self.d_in..(o + 1) * self.d_in];
                b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    /// Unit-norm adapter output. A zero affine output yields NaNs.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let y = self.affine(x);
        let r = norm(&y);
        y.into_iter().map(|v| v / r).collect()
    }

    /// Applies the adapter to every entry of `archive`.
    pub fn apply_archive(&self, archive: &EmbeddingArchive) -> Result<EmbeddingArchive, TrainError> {
        if archive.dim != self.d_in {
            return Err(TrainError::DimMismatch {
                expected: self.d_in,
                found: archive.dim,
            });
        }
        let mut out = EmbeddingArchive::new(self.d_out, format!("{}+adapter", archive.model_id));
        for (id, v) in &archive.entries {
            let x: Vec<f64> = v.iter().map(|&c| f64::from(c)).collect();
            let z = self.embed(&x).into_iter().map(|c| c as f32).collect();
            out.insert(id.clone(), z)?;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        w.write_all(&(self.d_out as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(*p as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrainError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| TrainError::BadCheckpoint("truncated header".into()))?;
        if &header[..4] != CHECKPOINT_MAGIC {
            return Err(TrainError::BadCheckpoint("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes([header[i], header[i + 1], header[i + 2], header[i + 3]]);
        if word(4) != CHECKPOINT_VERSION {
            return Err(TrainError::BadCheckpoint(format!("unsupported version {}", word(4))));
        }
        let (d_in, d_out) = (word(8) as usize, word(12) as usize);
        let mut raw = vec![0u8; 4 * d_out * (d_in + 1)];
        r.read_exact(&mut raw)
            .map_err(|_| TrainError::BadCheckpoint("truncated parameters".into()))?;
        let mut params: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let bias = params.split_off(d_in * d_out);
        Self::new(d_in, d_out, params, bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max(0, d(a, p) − d(a, n) + margin)` with Euclidean `d`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (euclidean(anchor, positive) - euclidean(anchor, negative) + margin).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningStrategy {
    /// Hardest positive with hardest negative.
    #[default]
    BatchHard,
    /// Hardest positive with the closest negative farther than it but
    /// inside the margin; falls back to the hardest negative.
    SemiHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One triple per anchor from a batch of embeddings with integer speaker
/// labels. With `keep_easy = false`, triples already satisfying the margin
/// are dropped.
pub fn mine_hard_batch<X: AsRef<[f64]>>(
    embeddings: &[X],
    labels: &[usize],
    margin: f64,
    strategy: MiningStrategy,
    keep_easy: bool,
) -> Result<Vec<Triplet>, TrainError> {
    if embeddings.len() != labels.len() {
        return Err(TrainError::DegenerateBatch(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(TrainError::DegenerateBatch("fewer than two speakers".into()));
    }
    if let Some((l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(TrainError::DegenerateBatch(format!(
            "speaker {l} has a single utterance"
        )));
    }
    let n = embeddings.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| euclidean(embeddings[i].as_ref(), embeddings[j].as_ref()))
                .collect()
        })
        .collect();
    let mut triplets = Vec::with_capacity(n);
    for a in 0..n {
        let mut positive = None;
        let mut hardest_neg = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a][j];
            if labels[j] == labels[a] {
                if positive.is_none_or(|(_, best)| d > best) {
                    positive = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        let (p, d_ap) = positive.expect("every speaker has two utterances");
        let (mut neg, mut d_an) = hardest_neg.expect("batch has two speakers");
        if strategy == MiningStrategy::SemiHard {
            let semi = (0..n)
                .filter(|&j| labels[j] != labels[a])
                .filter(|&j| dist[a][j] > d_ap && dist[a][j] < d_ap + margin)
                .min_by(|&x, &y| dist[a][x].total_cmp(&dist[a][y]));
            if let Some(j) = semi {
                (neg, d_an) = (j, dist[a][j]);
            }
        }
        if keep_easy || d_ap - d_an + margin > 0.0 {
            triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative: neg,
            });
        }
    }
    Ok(triplets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub mining: MiningStrategy,
    pub keep_easy: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            mining: MiningStrategy::BatchHard,
            keep_easy: true,
        }
    }
}

/// Gradient with the same flat layout as [`AdapterModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    d_in: usize,
    d_out: usize,
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn weight(&self) -> &[f64] {
        &self.values[..self.d_in * self.d_out]
    }

    pub fn bias(&self) -> &[f64] {
        &self.values[self.d_in * self.d_out..]
    }
}

/// Mean mined triplet loss over the batch and its exact gradient with
/// respect to the adapter parameters. Mining is recomputed from the current
/// outputs and treated as fixed when differentiating.
pub fn forward_backward<X: AsRef<[f64]>>(
    model: &AdapterModel,
    inputs: &[X],
    labels: &[usize],
    loss_cfg: &LossConfig,
) -> Result<(f64, Gradients), TrainError> {
    if let Some(x) = inputs.iter().find(|x| x.as_ref().len() != model.d_in) {
        return Err(TrainError::DimMismatch {
            expected: model.d_in,
            found: x.as_ref().len(),
        });
    }
    let affine: Vec<Vec<f64>> = inputs.iter().map(|x| model.affine(x.as_ref())).collect();
    let radii: Vec<f64> = affine.iter().map(|y| norm(y)).collect();
    let z: Vec<Vec<f64>> = affine
        .iter()
        .zip(&radii)
        .map(|(y, r)| y.iter().map(|v| v / r).collect())
        .collect();
    let triplets = mine_hard_batch(&z, labels, loss_cfg.margin, loss_cfg.mining, loss_cfg.keep_easy)?;

    let mut grads = Gradients {
        d_in: model.d_in,
        d_out: model.d_out,
        values: vec![0.0; model.params.len()],
    };
    if triplets.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    let mut grad_z = vec![vec![0.0; model.d_out]; z.len()];
    for t in &triplets {
        let (za, zp, zn) = (&z[t.anchor], &z[t.positive], &z[t.negative]);
        let d_ap = euclidean(za, zp);
        let d_an = euclidean(za, zn);
        let hinge = d_ap - d_an + loss_cfg.margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        // d‖u − v‖/du = (u − v)/‖u − v‖; zero subgradient at coincidence
        if d_ap > 0.0 {
            for k in 0..model.d_out {
                let g = scale * (za[k] - zp[k]) / d_ap;
                grad_z[t.anchor][k] += g;
                grad_z[t.positive][k] -= g;
            }
        }
        if d_an > 0.0 {
            for k in 0..model.d_out {
                let g = scale * (za[k] - zn[k]) / d_an;
                grad_z[t.anchor][k] -= g;
                grad_z[t.negative][k] += g;
            }
        }
    }
    let n_weight = model.d_in * model.d_out;
    for (i, gz) in grad_z.iter().enumerate() {
        if gz.iter().all(|&g| g == 0.0) {
            continue;
        }
        // through z = y / ‖y‖: dL/dy = (g − (z·g) z) / ‖y‖
        let zi = &z[i];
        let proj: f64 = zi.iter().zip(gz).map(|(a, b)| a * b).sum();
        let x = inputs[i].as_ref();
        for o in 0..model.d_out {
            let gy = (gz[o] - proj * zi[o]) / radii[i];
            let row = &mut grads.values[o * model.d_in..(o + 1) * model.d_in];
            for (w, xj) in row.iter_mut().zip(x) {
                *w += gy * xj;
            }
            grads.values[n_weight + o] += gy;
        }
    }
    Ok((loss * scale, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient shape mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch; returns true when the rate was just reduced.
    pub fn observe(&mut self, improved: bool) -> bool {
        if improved {
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub margin: f64,
    pub lr: f64,
    pub adam: AdamConfig,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// Speakers per batch (P).
    pub batch_speakers: usize,
    /// Utterances per speaker in a batch (K).
    pub utts_per_speaker: usize,
    pub seed: u64,
    pub mining: MiningStrategy,
    pub keep_easy: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lr: 1e-3,
            adam: AdamConfig::default(),
            plateau_patience: 8,
            plateau_factor: 0.5,
            early_stop_patience: 8,
            max_epochs: 100,
            batch_speakers: 8,
            utts_per_speaker: 4,
            seed: 0,
            mining: MiningStrategy::BatchHard,
            keep_easy: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam.eps <= 0.0 {
            return bad("adam eps must be positive");
        }
        if self.plateau_patience < 1 || self.early_stop_patience < 1 {
            return bad("patience values must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.batch_speakers < 2 || self.utts_per_speaker < 2 {
            return bad("batches need P >= 2 speakers and K >= 2 utterances");
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            mining: self.mining,
            keep_easy: self.keep_easy,
        }
    }
}

/// Training embeddings grouped by speaker.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    speakers: Vec<String>,
    by_speaker: Vec<Vec<usize>>,
}

impl TrainingSet {
    /// `items` are (speaker id, embedding) pairs.
    pub fn new(dim: usize, items: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self, TrainError> {
        let mut set = Self {
            dim,
            inputs: Vec::new(),
            labels: Vec::new(),
            speakers: Vec::new(),
            by_speaker: Vec::new(),
        };
        let mut index: HashMap<String, usize> = HashMap::new();
        for (speaker, x) in items {
            if x.len() != dim {
                return Err(TrainError::DimMismatch {
                    expected: dim,
                    found: x.len(),
                });
            }
            let label = *index.entry(speaker.clone()).or_insert_with(|| {
                set.speakers.push(speaker);
                set.by_speaker.push(Vec::new());
                set.speakers.len() - 1
            });
            set.by_speaker[label].push(set.inputs.len());
            set.inputs.push(x);
            set.labels.push(label);
        }
        if set.by_speaker.iter().filter(|u| u.len() >= 2).count() < 2 {
            return Err(TrainError::EmptyTrainingSet);
        }
        Ok(set)
    }

    /// Joins manifest speaker labels with archive embeddings; records of
    /// other splits (when `split` is given) or missing from the archive are
    /// skipped.
    pub fn from_archive(
        archive: &EmbeddingArchive,
        manifest: &Manifest,
        split: Option<Split>,
    ) -> Result<Self, TrainError> {
        let items = manifest
            .records()
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .filter_map(|r| {
                archive.entries.get(&r.utterance_id).map(|v| {
                    (
                        r.speaker_id.clone(),
                        v.iter().map(|&c| f64::from(c)).collect(),
                    )
                })
            });
        Self::new(archive.dim, items)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Shuffles every speaker's utterances into chunks of up to K, shuffles
    /// the chunks and packs them into batches of P distinct speakers.
    pub fn epoch_batches<R: Rng + ?Sized>(&self, p: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut chunks: Vec<(usize, Vec<usize>)> = Vec::new();
        for (speaker, utts) in self.by_speaker.iter().enumerate() {
            if utts.len() < 2 {
                continue;
            }
            let mut order = utts.clone();
            order.shuffle(rng);
            let mut spk_chunks: Vec<Vec<usize>> = order.chunks(k).map(<[usize]>::to_vec).collect();
            if spk_chunks.len() > 1 && spk_chunks.last().is_some_and(|c| c.len() < 2) {
                let tail = spk_chunks.pop().expect("non-empty");
                spk_chunks.last_mut().expect("non-empty").extend(tail);
            }
            chunks.extend(spk_chunks.into_iter().map(|c| (speaker, c)));
        }
        chunks.shuffle(rng);

        let mut pending: VecDeque<(usize, Vec<usize>)> = chunks.into();
        let mut batches: Vec<(HashSet<usize>, Vec<usize>)> = Vec::new();
        while !pending.is_empty() {
            let mut used = HashSet::new();
            let mut batch = Vec::new();
            let mut deferred = VecDeque::new();
            while let Some(chunk) = pending.pop_front() {
                if used.len() < p && used.insert(chunk.0) {
                    batch.push(chunk);
                } else {
                    deferred.push_back(chunk);
                }
                if used.len() == p {
                    break;
                }
            }
            deferred.extend(pending);
            pending = deferred;
            if used.len() < 2 {
                // only one speaker left: spread its chunks over earlier batches
                pending.extend(batch);
                break;
            }
            batches.push((used, batch.into_iter().flat_map(|c| c.1).collect()));
        }
        for (speaker, chunk) in pending {
            if let Some((used, batch)) = batches.iter_mut().rev().find(|(u, _)| !u.contains(&speaker)) {
                used.insert(speaker);
                batch.extend(chunk);
            }
        }
        let batches: Vec<Vec<usize>> = batches.into_iter().map(|(_, b)| b).collect();
        batches
    }
}

/// Validation trials over a fixed archive.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    ids: Vec<String>,
    inputs: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    labels: Vec<TrialLabel>,
}

impl ValidationSet {
    pub fn new(archive: &EmbeddingArchive, trials: &[TrialPair]) -> Result<Self, TrainError> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut ids = Vec::new();
        let mut inputs = Vec::new();
        let mut pairs = Vec::with_capacity(trials.len());
        for t in trials {
            let mut slot = |id: &str| -> Result<usize, ScoringError> {
                if let Some(&i) = index.get(id) {
                    return Ok(i);
                }
                let v = archive.get(id)?;
                ids.push(id.to_string());
                inputs.push(v.iter().map(|&c| f64::from(c)).collect::<Vec<f64>>());
                index.insert(id.to_string(), ids.len() - 1);
                Ok(ids.len() - 1)
            };
            let enroll = slot(&t.enroll)?;
            let test = slot(&t.test)?;
            pairs.push((enroll, test));
        }
        Ok(Self {
            ids,
            inputs,
            pairs,
            labels: trials.iter().map(|t| t.label).collect(),
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Cosine EER with `model` applied (identity when `None`).
    pub fn eer(&self, model: Option<&AdapterModel>) -> Result<f64, TrainError> {
        let embedded: Vec<Vec<f64>> = match model {
            Some(m) => self.inputs.iter().map(|x| m.embed(x)).collect(),
            None => self.inputs.clone(),
        };
        let scores = self
            .pairs
            .iter()
            .map(|&(a, b)| {
                cosine_score(&embedded[a], &embedded[b]).map_err(|e| match e {
                    ScoringError::ZeroVector => ScoringError::NonFinite(self.ids[a].clone()),
                    other => other,
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(TrainError::Scoring(ScoringError::NonFiniteScore));
        }
        Ok(compute_eer(&scores, &self.labels)?.eer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "early-stop",
            StopReason::MaxEpochs => "max-epochs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_eer: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation EER of the model before any update (epoch 0).
    pub baseline_val_eer: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch beat the initial model.
    pub best_epoch: usize,
    pub best_val_eer: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "epoch,loss,val_eer,lr")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.val_eer, e.lr)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains `model` and returns the snapshot with the lowest validation EER.
///
/// The initial model is evaluated first and counts as the epoch-0 best, so a
/// plateau of `plateau_patience` epochs from the start already triggers a
/// learning-rate cut. Deterministic for a fixed seed.
pub fn train(
    model: AdapterModel,
    train_set: &TrainingSet,
    validation: &ValidationSet,
    config: &TrainerConfig,
) -> Result<(AdapterModel, TrainHistory), TrainError> {
    config.validate()?;
    if train_set.dim() != model.d_in() {
        return Err(TrainError::DimMismatch {
            expected: model.d_in(),
            found: train_set.dim(),
        });
    }
    let mut rng = rng_from_seed(config.seed);
    let loss_cfg = config.loss();
    let mut model = model;
    let mut adam = AdamState::new(model.params().len());
    let mut scheduler = PlateauScheduler::new(config.lr, config.plateau_factor, config.plateau_patience);

    let baseline = validation.eer(Some(&model))?;
    let mut best = (model.clone(), baseline, 0usize);
    let mut since_best = 0usize;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let lr = scheduler.lr();
        let batches = train_set.epoch_batches(config.batch_speakers, config.utts_per_speaker, &mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| train_set.inputs[i].as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads) = forward_backward(&model, &inputs, &labels, &loss_cfg)?;
            if !loss.is_finite() || grads.values.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, lr });
            }
            loss_sum += loss;
            adam_step(model.params_mut(), &grads.values, &mut adam, &config.adam, lr);
        }
        let mean_loss = loss_sum / batches.len().max(1) as f64;
        let val_eer = validation.eer(Some(&model))?;
        log::info!("epoch {epoch}: loss {mean_loss:.5} val EER {:.3}% lr {lr:e}", 100.0 * val_eer);
        epochs.push(EpochRecord {
            epoch,
            loss: mean_loss,
            val_eer,
            lr,
        });

        let improved = val_eer < best.1;
        if improved {
            best = (model.clone(), val_eer, epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.early_stop_patience {
            stop_reason = StopReason::EarlyStop;
            break;
        }
        scheduler.observe(improved);
    }

    let (best_model, best_val_eer, best_epoch) = best;
    Ok((
        best_model,
        TrainHistory {
            baseline_val_eer: baseline,
            epochs,
            best_epoch,
            best_val_eer,
            stop_reason,
        },
    ))
}
