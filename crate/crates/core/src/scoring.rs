//! Verification back end: embedding archives, cosine scoring, adaptive
//! symmetric score normalization and EER / DET computation.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{TrialLabel, TrialPair};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SVEM";
pub const ARCHIVE_VERSION: u32 = 1;

/// Default number of top cohort scores kept per side in s-norm.
pub const DEFAULT_TOP_K: usize = 200;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("not an embedding archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("embedding {id:?} has length {found}, archive dimension is {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("archive is truncated")]
    TruncatedFile,
    #[error("archive contains invalid UTF-8 text")]
    InvalidText,
    #[error("duplicate embedding id {0:?}")]
    DuplicateId(String),
    #[error("id {0:?} is too long for the archive format")]
    IdTooLong(String),
    #[error("embedding {0:?} has a non-finite component")]
    NonFinite(String),
    #[error("cannot score a zero vector")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown utterance id {0:?}")]
    UnknownId(String),
    #[error("cohort statistics for {0:?} have zero spread")]
    DegenerateCohort(String),
    #[error("top_k {top_k} is invalid for a cohort of {cohort}")]
    InvalidTopK { top_k: usize, cohort: usize },
    #[error("scores need at least one target and one nontarget")]
    MissingClass,
    #[error("score and label counts differ: {0} vs {1}")]
    LabelCountMismatch(usize, usize),
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("malformed score line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("score for {0} {1} has no matching trial")]
    UnknownTrial(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed-dimension embeddings keyed by utterance id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingArchive {
    pub dim: usize,
    pub model_id: String,
    pub entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingArchive {
    pub fn new(dim: usize, model_id: impl Into<String>) -> Self {
        Self {
            dim,
            model_id: model_id.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), ScoringError> {
        let id = id.into();
        check_entry(self.dim, &id, &vector)?;
        if self.entries.contains_key(&id) {
            return Err(ScoringError::DuplicateId(id));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f32], ScoringError> {
        self.entries
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| ScoringError::UnknownId(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.model_id.len() > usize::from(u16::MAX) {
            return Err(ScoringError::IdTooLong(self.model_id.clone()));
        }
        self.entries
            .iter()
            .try_for_each(|(id, v)| check_entry(self.dim, id, v))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ScoringError> {
        self.validate()?;
        w.write_all(ARCHIVE_MAGIC)?;
        w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        write_text(&mut w, &self.model_id)?;
        for (id, v) in &self.entries {
            write_text(&mut w, id)?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ScoringError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(ScoringError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != ARCHIVE_VERSION {
            return Err(ScoringError::UnsupportedVersion(version));
        }
        let dim = read_u32(&mut r)? as usize;
        let mut count_bytes = [0u8; 8];
        read_exact(&mut r, &mut count_bytes)?;
        let count = u64::from_le_bytes(count_bytes);
        let model_id = read_text(&mut r)?;
        let mut archive = Self::new(dim, model_id);
        let mut raw = vec![0u8; dim * 4];
        for _ in 0..count {
            let id = read_text(&mut r)?;
            read_exact(&mut r, &mut raw)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.insert(id, vector)?;
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ScoringError> {
        self.validate()?;
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ScoringError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn check_entry(dim: usize, id: &str, v: &[f32]) -> Result<(), ScoringError> {
    if v.len() != dim {
        return Err(ScoringError::DimMismatch {
            id: id.to_string(),
            expected: dim,
            found: v.len(),
        });
    }
    if id.len() > usize::from(u16::MAX) {
        return Err(ScoringError::IdTooLong(id.to_string()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ScoringError::NonFinite(id.to_string()));
    }
    Ok(())
}

fn write_text<W: Write>(w: &mut W, text: &str) -> std::io::Result<()> {
    w.write_all(&(text.len() as u16).to_le_bytes())?;
    w.write_all(text.as_bytes())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ScoringError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ScoringError::TruncatedFile,
        _ => ScoringError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ScoringError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_text<R: Read>(r: &mut R) -> Result<String, ScoringError> {
    let mut len = [0u8; 2];
    read_exact(r, &mut len)?;
    let mut bytes = vec![0u8; usize::from(u16::from_le_bytes(len))];
    read_exact(r, &mut bytes)?;
    String::from_utf8(bytes).map_err(|_| ScoringError::InvalidText)
}

/// Cosine similarity in `[-1, 1]`; higher means more alike.
pub fn cosine_score<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, ScoringError> {
    if a.len() != b.len() {
        return Err(ScoringError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(ScoringError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRecord {
    pub trial: TrialPair,
    pub raw_score: f64,
    pub normalized_score: Option<f64>,
}

impl ScoreRecord {
    /// The normalized score when present, else the raw one.
    pub fn best_score(&self) -> f64 {
        self.normalized_score.unwrap_or(self.raw_score)
    }
}

/// Raw cosine score for every trial, in trial order.
pub fn score_trials(
    archive: &EmbeddingArchive,
    trials: &[TrialPair],
) -> Result<Vec<ScoreRecord>, ScoringError> {
    trials
        .par_iter()
        .map(|t| {
            let raw_score = cosine_score(archive.get(&t.enroll)?, archive.get(&t.test)?)?;
            Ok(ScoreRecord {
                trial: t.clone(),
                raw_score,
                normalized_score: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Mean and spread of the `top_k` highest cohort scores for one utterance.
/// The utterance itself is skipped if it appears in the cohort.
pub fn cohort_stats(
    archive: &EmbeddingArchive,
    id: &str,
    cohort: &[String],
    top_k: usize,
) -> Result<CohortStats, ScoringError> {
    let v = archive.get(id)?;
    let mut scores = cohort
        .iter()
        .filter(|c| c.as_str() != id)
        .map(|c| cosine_score(v, archive.get(c)?))
        .collect::<Result<Vec<f64>, _>>()?;
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.truncate(top_k);
    if scores.is_empty() {
        return Err(ScoringError::DegenerateCohort(id.to_string()));
    }
    let k = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / k;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k;
    let std = var.sqrt();
    if std <= 0.0 {
        return Err(ScoringError::DegenerateCohort(id.to_string()));
    }
    Ok(CohortStats { mean, std })
}

/// Adaptive symmetric s-norm:
/// `½·((s − μe)/σe + (s − μt)/σt)` with statistics over each side's
/// `top_k` best-matching cohort utterances.
pub fn snorm(
    scores: &[ScoreRecord],
    archive: &EmbeddingArchive,
    cohort: &[String],
    top_k: usize,
) -> Result<Vec<ScoreRecord>, ScoringError> {
    if top_k == 0 || top_k > cohort.len() {
        return Err(ScoringError::InvalidTopK {
            top_k,
            cohort: cohort.len(),
        });
    }
    for c in cohort {
        archive.get(c)?;
    }
    let mut ids: Vec<&str> = scores
        .iter()
        .flat_map(|s| [s.trial.enroll.as_str(), s.trial.test.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let stats: HashMap<&str, CohortStats> = ids
        .par_iter()
        .map(|&id| Ok((id, cohort_stats(archive, id, cohort, top_k)?)))
        .collect::<Result<_, ScoringError>>()?;
    Ok(scores
        .iter()
        .map(|s| {
            let e = stats[s.trial.enroll.as_str()];
            let t = stats[s.trial.test.as_str()];
            let raw = s.raw_score;
            ScoreRecord {
                normalized_score: Some(0.5 * ((raw - e.mean) / e.std + (raw - t.mean) / t.std)),
                ..s.clone()
            }
        })
        .collect())
}

/// One operating point at acceptance threshold `threshold` (accept when
/// `score >= threshold`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

fn check_inputs(scores: &[f64], labels: &[TrialLabel]) -> Result<(usize, usize), ScoringError> {
    if scores.len() != labels.len() {
        return Err(ScoringError::LabelCountMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ScoringError::NonFiniteScore);
    }
    let targets = labels.iter().filter(|l| l.is_target()).count();
    let nontargets = labels.len() - targets;
    if targets == 0 || nontargets == 0 {
        return Err(ScoringError::MissingClass);
    }
    Ok((targets, nontargets))
}

/// Operating points at every distinct score plus one threshold above the
/// maximum, in increasing threshold order. FAR falls and FRR rises along the
/// list. The final point's threshold is `+inf`.
pub fn det_points(scores: &[f64], labels: &[TrialLabel]) -> Result<Vec<DetPoint>, ScoringError> {
    let (n_tar, n_non) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::new();
    let (mut tar_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        points.push(DetPoint {
            threshold: t,
            far: (n_non - non_below) as f64 / n_non as f64,
            frr: tar_below as f64 / n_tar as f64,
        });
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]].is_target() {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate from a threshold sweep, interpolating linearly between
/// the two operating points that bracket the FAR = FRR crossing.
pub fn compute_eer(scores: &[f64], labels: &[TrialLabel]) -> Result<EerResult, ScoringError> {
    let points = det_points(scores, labels)?;
    Ok(eer_from_points(&points))
}

pub(crate) fn eer_from_points(points: &[DetPoint]) -> EerResult {
    let i = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("the last operating point has FRR 1, FAR 0");
    let cur = points[i];
    let finite_threshold = |p: &DetPoint, prev: Option<&DetPoint>| {
        if p.threshold.is_finite() {
            p.threshold
        } else {
            prev.map_or(0.0, |q| q.threshold.next_up())
        }
    };
    if cur.frr == cur.far || i == 0 {
        return EerResult {
            eer: cur.frr,
            threshold: finite_threshold(&cur, i.checked_sub(1).map(|j| &points[j])),
        };
    }
    let prev = points[i - 1];
    let below = prev.far - prev.frr;
    let above = cur.frr - cur.far;
    let alpha = below / (below + above);
    let eer = prev.frr + alpha * (cur.frr - prev.frr);
    let hi = finite_threshold(&cur, Some(&prev));
    EerResult {
        eer,
        threshold: prev.threshold + alpha * (hi - prev.threshold),
    }
}

/// EER over score records, using normalized scores when every record has one.
pub fn eer_of_records(records: &[ScoreRecord], normalized: bool) -> Result<EerResult, ScoringError> {
    let scores: Vec<f64> = if normalized {
        records
            .iter()
            .map(|r| r.normalized_score.ok_or(ScoringError::NonFiniteScore))
            .collect::<Result<_, _>>()?
    } else {
        records.iter().map(|r| r.raw_score).collect()
    };
    let labels: Vec<TrialLabel> = records.iter().map(|r| r.trial.label).collect();
    compute_eer(&scores, &labels)
}

/// Writes `<enroll> <test> <score>` lines with the raw or normalized score.
pub fn write_scores(
    records: &[ScoreRecord],
    path: impl AsRef<Path>,
    normalized: bool,
) -> Result<(), ScoringError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        let s = if normalized {
            r.best_score()
        } else {
            r.raw_score
        };
        writeln!(out, "{} {} {}", r.trial.enroll, r.trial.test, s)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a score file and attaches labels from `trials`.
pub fn read_scores(
    path: impl AsRef<Path>,
    trials: &[TrialPair],
) -> Result<Vec<ScoreRecord>, ScoringError> {
    let labels: HashMap<(&str, &str), &TrialPair> = trials
        .iter()
        .map(|t| ((t.enroll.as_str(), t.test.as_str()), t))
        .collect();
    let file = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| ScoringError::MalformedLine {
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [enroll, test, score] = fields[..] else {
            return Err(malformed("expected `<enroll> <test> <score>`"));
        };
        let score: f64 = score.parse().map_err(|_| malformed("score is not a number"))?;
        let trial = labels
            .get(&(enroll, test))
            .ok_or_else(|| ScoringError::UnknownTrial(enroll.to_string(), test.to_string()))?;
        records.push(ScoreRecord {
            trial: (*trial).clone(),
            raw_score: score,
            normalized_score: None,
        });
    }
    Ok(records)
}

/// CSV with header `threshold,far,frr`.
pub fn write_det_csv(points: &[DetPoint], path: impl AsRef<Path>) -> Result<(), ScoringError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "threshold,far,frr")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.far, p.frr)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one utterance id per line.
pub fn read_id_list(path: impl AsRef<Path>) -> Result<Vec<String>, ScoringError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use TrialLabel::{Nontarget as N, Target as T};

    fn labeled(targets: &[f64], nontargets: &[f64]) -> (Vec<f64>, Vec<TrialLabel>) {
        let mut s = targets.to_vec();
        s.extend_from_slice(nontargets);
        let mut l = vec![T; targets.len()];
        l.extend(vec![N; nontargets.len()]);
        (s, l)
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_score(&[0.3f64, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_score(&[1.0f64, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine_score(&[0.0f64, 0.0], &[1.0, 0.0]),
            Err(ScoringError::ZeroVector)
        ));
        assert!(matches!(
            cosine_score(&[1.0f32], &[1.0, 0.0]),
            Err(ScoringError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn eer_examples() {
        let (s, l) = labeled(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(compute_eer(&s, &l).unwrap().eer, 0.0);
        let (s, l) = labeled(&[0.1], &[0.9]);
        assert_eq!(compute_eer(&s, &l).unwrap().eer, 1.0);
        let (s, l) = labeled(&[0.7, 0.5, 0.4], &[0.6, 0.3, 0.2]);
        let r = compute_eer(&s, &l).unwrap();
        assert!((r.eer - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.threshold, 0.5);
    }

    #[test]
    fn eer_interpolates_between_points() {
        // FRR/FAR: t=.2 (0,1) t=.6 (0,.5) t=.8 (.5,.5)... make an uneven case
        let (s, l) = labeled(&[0.5, 0.9], &[0.1, 0.6, 0.7]);
        // points: .1:(frr0,far1) .5:(0,2/3) .6:(.5,2/3) .7:(.5,1/3) -> crossing between .6 and .7
        let r = compute_eer(&s, &l).unwrap();
        let below = 2.0 / 3.0 - 0.5;
        let above = 0.5 - 1.0 / 3.0;
        let alpha = below / (below + above);
        assert!((r.eer - 0.5).abs() < 1e-12);
        assert!((r.threshold - (0.6 + alpha * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn eer_requires_both_classes() {
        assert!(matches!(compute_eer(&[0.1, 0.2], &[T, T]), Err(ScoringError::MissingClass)));
        assert!(matches!(det_points(&[0.1], &[N]), Err(ScoringError::MissingClass)));
        assert!(matches!(
            compute_eer(&[0.1], &[T, N]),
            Err(ScoringError::LabelCountMismatch(1, 2))
        ));
    }

    #[test]
    fn det_single_pair() {
        let pts = det_points(&[0.8, 0.3], &[T, N]).unwrap();
        let pairs: Vec<(f64, f64)> = pts.iter().map(|p| (p.far, p.frr)).collect();
        assert_eq!(pairs, vec![(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]);
    }

    #[test]
    fn det_perfect_separation_touches_origin() {
        let (s, l) = labeled(&[0.9, 0.8, 0.85], &[0.1, 0.2]);
        let pts = det_points(&s, &l).unwrap();
        assert!(pts.iter().any(|p| p.far == 0.0 && p.frr == 0.0));
        assert!(pts.windows(2).all(|w| w[0].far >= w[1].far && w[0].frr <= w[1].frr));
    }

    #[test]
    fn ties_share_a_threshold() {
        let pts = det_points(&[0.5, 0.5, 0.5], &[T, N, T]).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(compute_eer(&[0.5, 0.5, 0.5], &[T, N, T]).unwrap().eer, 0.5);
    }

    fn archive_of(vectors: &[(&str, Vec<f32>)]) -> EmbeddingArchive {
        let mut a = EmbeddingArchive::new(vectors[0].1.len(), "test");
        for (id, v) in vectors {
            a.insert(*id, v.clone()).unwrap();
        }
        a
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let a = archive_of(&[("u1", vec![0.5, -1.25, 3.0]), ("u2", vec![1e-30, 7.0, -0.0])]);
        let mut bytes = Vec::new();
        a.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SVEM");
        assert_eq!(EmbeddingArchive::read_from(bytes.as_slice()).unwrap(), a);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingArchive::read_from(bad.as_slice()),
            Err(ScoringError::BadMagic)
        ));
        assert!(matches!(
            EmbeddingArchive::read_from(&bytes[..bytes.len() - 2]),
            Err(ScoringError::TruncatedFile)
        ));

        let mut wrong = EmbeddingArchive::new(192, "ecapa");
        wrong.entries.insert("u".into(), vec![0.0; 512]);
        assert!(matches!(
            wrong.write_to(Vec::new()),
            Err(ScoringError::DimMismatch {
                expected: 192,
                found: 512,
                ..
            })
        ));
    }

    #[test]
    fn archive_header_layout() {
        let a = archive_of(&[("ab", vec![1.0, 2.0])]);
        let mut bytes = Vec::new();
        a.write_to(&mut bytes).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"SVEM");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&4u16.to_le_bytes());
        expected.extend_from_slice(b"test");
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1f32.to_le_bytes());
        expected.extend_from_slice(&2f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn snorm_identity_statistics() {
        // Trial vectors along ±x; cohort {x, -x} gives scores {1, -1}: mean 0, std 1.
        let a = archive_of(&[
            ("e1", vec![2.0, 0.0]),
            ("t1", vec![-1.0, 0.0]),
            ("t2", vec![0.5, 0.0]),
            ("c1", vec![1.0, 0.0]),
            ("c2", vec![-3.0, 0.0]),
        ]);
        let trials = vec![
            TrialPair {
                enroll: "e1".into(),
                test: "t1".into(),
                label: N,
            },
            TrialPair {
                enroll: "e1".into(),
                test: "t2".into(),
                label: T,
            },
        ];
        let raw = score_trials(&a, &trials).unwrap();
        let cohort = vec!["c1".to_string(), "c2".to_string()];
        let norm = snorm(&raw, &a, &cohort, 2).unwrap();
        for r in &norm {
            assert!((r.normalized_score.unwrap() - r.raw_score).abs() < 1e-12);
        }
    }

    #[test]
    fn snorm_matches_formula() {
        use rand::Rng;
        let mut rng = crate::seed::rng_from_seed(17);
        let mut unit = || {
            let v: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f32>>()
        };
        let ids = ["a", "b", "c", "d", "k1", "k2", "k3", "k4"];
        let vecs: Vec<(&str, Vec<f32>)> = ids.iter().map(|id| (*id, unit())).collect();
        let a = archive_of(&vecs);
        let trials: Vec<TrialPair> = [("a", "b"), ("a", "c"), ("c", "d")]
            .iter()
            .map(|(e, t)| TrialPair {
                enroll: e.to_string(),
                test: t.to_string(),
                label: T,
            })
            .collect();
        let cohort: Vec<String> = ["k1", "k2", "k3", "k4"].iter().map(|s| s.to_string()).collect();
        let raw = score_trials(&a, &trials).unwrap();
        let norm = snorm(&raw, &a, &cohort, 4).unwrap();

        let dot = |x: &[f32], y: &[f32]| -> f64 {
            let d: f64 = x.iter().zip(y).map(|(p, q)| f64::from(*p) * f64::from(*q)).sum();
            let nx: f64 = x.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|p| f64::from(*p).powi(2)).sum::<f64>().sqrt();
            d / (nx * ny)
        };
        let stats = |id: &str| {
            let s: Vec<f64> = cohort.iter().map(|c| dot(a.get(id).unwrap(), a.get(c).unwrap())).collect();
            let m = s.iter().sum::<f64>() / 4.0;
            let v = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
            (m, v.sqrt())
        };
        for r in &norm {
            let s = dot(a.get(&r.trial.enroll).unwrap(), a.get(&r.trial.test).unwrap());
            let (me, se) = stats(&r.trial.enroll);
            let (mt, st) = stats(&r.trial.test);
            let expected = 0.5 * ((s - me) / se + (s - mt) / st);
            assert!((r.normalized_score.unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn snorm_errors() {
        let a = archive_of(&[("e", vec![1.0, 0.0]), ("t", vec![0.0, 1.0]), ("c", vec![0.0, 1.0])]);
        let trials = vec![TrialPair {
            enroll: "e".into(),
            test: "t".into(),
            label: T,
        }];
        let raw = score_trials(&a, &trials).unwrap();
        assert!(matches!(
            snorm(&raw, &a, &["c".to_string()], 1),
            Err(ScoringError::DegenerateCohort(_))
        ));
        assert!(matches!(
            snorm(&raw, &a, &["zz".to_string()], 1),
            Err(ScoringError::UnknownId(_))
        ));
        assert!(matches!(
            snorm(&raw, &a, &["c".to_string()], 2),
            Err(ScoringError::InvalidTopK { .. })
        ));
    }

    #[test]
    fn score_and_det_files() {
        let dir = tempfile::tempdir().unwrap();
        let trials = vec![
            TrialPair {
                enroll: "a".into(),
                test: "b".into(),
                label: T,
            },
            TrialPair {
                enroll: "a".into(),
                test: "c".into(),
                label: N,
            },
        ];
        let records = vec![
            ScoreRecord {
                trial: trials[0].clone(),
                raw_score: 0.75,
                normalized_score: None,
            },
            ScoreRecord {
                trial: trials[1].clone(),
                raw_score: -0.125,
                normalized_score: None,
            },
        ];
        let path = dir.path().join("scores.txt");
        write_scores(&records, &path, false).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a b 0.75\na c -0.125\n");
        assert_eq!(read_scores(&path, &trials).unwrap(), records);
        assert!(matches!(
            read_scores(&path, &trials[..1]),
            Err(ScoringError::UnknownTrial(..))
        ));

        let det = dir.path().join("det.csv");
        let pts = det_points(&[0.75, -0.125], &[T, N]).unwrap();
        write_det_csv(&pts, &det).unwrap();
        let text = std::fs::read_to_string(&det).unwrap();
        assert_eq!(text, "threshold,far,frr\n-0.125,1,0\n0.75,0,0\ninf,0,1\n");
    }
}
