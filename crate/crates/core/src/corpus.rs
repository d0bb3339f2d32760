//! Manifests, duration filtering, per-speaker stratified splits and
//! verification trial lists.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::audio::{probe_duration, AudioError};
use crate::seed::{derive_seed, rng_from_seed, stable_hash};

/// Recordings shorter than this are dropped when building a manifest.
pub const DEFAULT_MIN_DURATION_S: f64 = 3.0;

// Beyond this many candidate nontarget pairs, sampling switches from
// enumeration to rejection.
const MAX_ENUMERATED_PAIRS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus source {path}: {reason}")]
    UnreadableSource { path: PathBuf, reason: String },
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("utterance {0:?} has an empty speaker id")]
    EmptySpeaker(String),
    #[error("utterance {0:?} has an invalid duration")]
    BadDuration(String),
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error("need at least {needed} speakers, found {found}")]
    InsufficientSpeakers { needed: usize, found: usize },
    #[error("no speaker has two or more utterances; target trials impossible")]
    InsufficientUtterances,
    #[error("requested {requested} distinct {label} pairs, only {available} exist")]
    NotEnoughDistinctPairs {
        label: TrialLabel,
        requested: usize,
        available: usize,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "" | "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
    #[serde(default)]
    pub split: Split,
}

impl UtteranceRecord {
    pub fn new(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        path: impl Into<PathBuf>,
        duration_s: f64,
    ) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            path: path.into(),
            duration_s,
            split: Split::Unassigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    name: String,
    records: Vec<UtteranceRecord>,
}

impl Manifest {
    /// Validates id uniqueness, non-empty speaker ids and durations.
    pub fn new(name: impl Into<String>, records: Vec<UtteranceRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.speaker_id.trim().is_empty() {
                return Err(CorpusError::EmptySpeaker(r.utterance_id.clone()));
            }
            if !(r.duration_s.is_finite() && r.duration_s >= 0.0) {
                return Err(CorpusError::BadDuration(r.utterance_id.clone()));
            }
            if !seen.insert(r.utterance_id.as_str()) {
                return Err(CorpusError::DuplicateId(r.utterance_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped by speaker, speakers in lexical order.
    pub fn by_speaker(&self) -> BTreeMap<&str, Vec<&UtteranceRecord>> {
        group_by_speaker(self.records.iter())
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, utterance_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    pub fn summary(&self) -> ManifestSummary {
        ManifestSummary {
            speakers: self.by_speaker().len(),
            utterances: self.records.len(),
            hours: self.records.iter().map(|r| r.duration_s).sum::<f64>() / 3600.0,
            excluded: 0,
        }
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let rows = read_jsonl_rows(path)?;
        let records = rows
            .into_iter()
            .map(|(line, row)| row.into_record(line))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(source_name(path), records)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn group_by_speaker<'a>(
    records: impl Iterator<Item = &'a UtteranceRecord>,
) -> BTreeMap<&'a str, Vec<&'a UtteranceRecord>> {
    let mut map: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManifestSummary {
    pub speakers: usize,
    pub utterances: usize,
    pub hours: f64,
    /// Records dropped by the minimum-duration filter.
    pub excluded: usize,
}

impl fmt::Display for ManifestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} speakers, {} utterances, {:.2} hours, {} excluded",
            self.speakers, self.utterances, self.hours, self.excluded
        )
    }
}

/// A row as it appears in a CSV or JSON-lines source, before validation.
#[derive(Debug, Deserialize)]
struct RawRow {
    utterance_id: Option<String>,
    speaker_id: Option<String>,
    path: Option<String>,
    duration_s: Option<f64>,
    split: Option<String>,
}

impl RawRow {
    fn field(value: Option<String>, name: &str, line: usize) -> Result<String, CorpusError> {
        match value {
            Some(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
            _ => Err(CorpusError::MalformedRow {
                line,
                reason: format!("missing {name}"),
            }),
        }
    }

    fn into_record(self, line: usize) -> Result<UtteranceRecord, CorpusError> {
        let utterance_id = Self::field(self.utterance_id, "utterance_id", line)?;
        let speaker_id = Self::field(self.speaker_id, "speaker_id", line)?;
        let path = Self::field(self.path, "path", line)?;
        let split = match self.split {
            Some(s) => s.parse().map_err(|reason| CorpusError::MalformedRow { line, reason })?,
            None => Split::Unassigned,
        };
        let duration_s = match self.duration_s {
            Some(d) if d.is_finite() && d >= 0.0 => d,
            Some(_) => {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "invalid duration_s".into(),
                })
            }
            None => f64::NAN,
        };
        Ok(UtteranceRecord {
            utterance_id,
            speaker_id,
            path: PathBuf::from(path),
            duration_s,
            split,
        })
    }
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<(usize, RawRow)>, CorpusError> {
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RawRow = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRow {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn read_csv_rows(path: &Path) -> Result<Vec<(usize, RawRow)>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| unreadable(path, e))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<RawRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| CorpusError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn unreadable(path: &Path, e: impl fmt::Display) -> CorpusError {
    CorpusError::UnreadableSource {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn source_name(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".to_string())
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Walks `root/<speaker_id>/**/*.wav`; utterance ids are the relative paths
/// without extension.
fn scan_directory(root: &Path) -> Result<Vec<UtteranceRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut speakers: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| unreadable(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    speakers.sort();
    for speaker_dir in speakers {
        let speaker_id = speaker_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for entry in WalkDir::new(&speaker_dir).sort_by_file_name() {
            let entry = entry.map_err(|e| unreadable(&speaker_dir, e))?;
            let path = entry.path();
            if !entry.file_type().is_file() || !is_wav(path) {
                continue;
            }
            let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
            let utterance_id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let (duration_s, _) = probe_duration(path)?;
            records.push(UtteranceRecord::new(
                utterance_id,
                speaker_id.clone(),
                path,
                duration_s,
            ));
        }
    }
    Ok(records)
}

/// Builds a manifest from a `speaker/utterance.wav` directory tree or a CSV /
/// JSON-lines table, dropping recordings shorter than `min_duration_s`
/// (a recording of exactly `min_duration_s` is kept).
///
/// Relative paths in tabular sources are resolved against the table's
/// directory; missing durations are read from the WAV headers.
pub fn build_manifest(
    source: impl AsRef<Path>,
    min_duration_s: f64,
) -> Result<(Manifest, ManifestSummary), CorpusError> {
    let source = source.as_ref();
    if !source.exists() {
        return Err(unreadable(source, "no such file or directory"));
    }
    let mut records = if source.is_dir() {
        scan_directory(source)?
    } else {
        let ext = source
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let rows = match ext.as_str() {
            "csv" => read_csv_rows(source)?,
            "jsonl" | "json" | "ndjson" => read_jsonl_rows(source)?,
            other => return Err(unreadable(source, format!("unknown table extension {other:?}"))),
        };
        let base = source.parent().unwrap_or(Path::new("."));
        rows.into_iter()
            .map(|(line, row)| {
                let mut rec = row.into_record(line)?;
                if rec.path.is_relative() {
                    rec.path = base.join(&rec.path);
                }
                if rec.duration_s.is_nan() {
                    rec.duration_s = probe_duration(&rec.path)?.0;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>, CorpusError>>()?
    };
    let before = records.len();
    records.retain(|r| r.duration_s >= min_duration_s);
    let excluded = before - records.len();
    let manifest = Manifest::new(source_name(source), records)?;
    let summary = ManifestSummary {
        excluded,
        ..manifest.summary()
    };
    Ok((manifest, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(CorpusError::BadRatios(format!(
                "ratios {}/{}/{} must all be positive",
                self.train, self.val, self.test
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::BadRatios(format!(
                "ratios {}/{}/{} sum to {sum}, expected 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Each speaker's utterances are spread over all splits.
    #[default]
    PerSpeaker,
    /// Whole speakers are assigned to a single split.
    SpeakerDisjoint,
}

/// Largest-remainder (Hamilton) apportionment of `n` items over `ratios`.
/// Ties in the remainder go to the earlier slot.
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    // The epsilon absorbs representation error, e.g. 0.7 * 20 = 13.999...
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &slot in order.iter().take(n.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

/// Split sizes for a group of `n`; groups of one or two go to train, then test.
fn group_counts(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    match n {
        0 => [0, 0, 0],
        1 => [1, 0, 0],
        2 => [1, 0, 1],
        _ => {
            let c = largest_remainder(n, &ratios.as_array());
            [c[0], c[1], c[2]]
        }
    }
}

fn split_for_position(pos: usize, counts: &[usize; 3]) -> Split {
    if pos < counts[0] {
        Split::Train
    } else if pos < counts[0] + counts[1] {
        Split::Val
    } else {
        Split::Test
    }
}

/// Assigns every record to train/val/test. In [`SplitMode::PerSpeaker`] each
/// speaker's utterances are shuffled under a seed derived from `seed` and the
/// speaker id, then apportioned with [`largest_remainder`].
pub fn stratified_split(
    manifest: &Manifest,
    ratios: SplitRatios,
    seed: u64,
    mode: SplitMode,
) -> Result<Manifest, CorpusError> {
    ratios.validate()?;
    if manifest.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    match mode {
        SplitMode::PerSpeaker => {
            for (speaker, mut utts) in manifest.by_speaker() {
                utts.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
                let mut rng = rng_from_seed(derive_seed(seed, &[stable_hash(speaker)]));
                utts.shuffle(&mut rng);
                let counts = group_counts(utts.len(), &ratios);
                for (pos, r) in utts.iter().enumerate() {
                    assignment.insert(&r.utterance_id, split_for_position(pos, &counts));
                }
            }
        }
        SplitMode::SpeakerDisjoint => {
            let groups = manifest.by_speaker();
            let mut speakers: Vec<&str> = groups.keys().copied().collect();
            speakers.shuffle(&mut rng_from_seed(seed));
            let counts = group_counts(speakers.len(), &ratios);
            for (pos, speaker) in speakers.iter().enumerate() {
                let split = split_for_position(pos, &counts);
                for r in &groups[speaker] {
                    assignment.insert(&r.utterance_id, split);
                }
            }
        }
    }
    let records = manifest
        .records()
        .iter()
        .map(|r| UtteranceRecord {
            split: assignment[r.utterance_id.as_str()],
            ..r.clone()
        })
        .collect();
    Manifest::new(manifest.name(), records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn is_target(self) -> bool {
        self == TrialLabel::Target
    }
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialPair {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
}

/// Number of unordered pairs from `n` items.
fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a rank in `0..pairs(n)` to the pair `(i, j)`, `i < j`, in
/// lexicographic order.
fn unrank_pair(n: usize, mut rank: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if rank < row {
            return (i, i + 1 + rank);
        }
        rank -= row;
    }
    unreachable!("pair rank out of range")
}

/// Samples distinct target and nontarget pairs from the records of `split`
/// (all records when `None`). Targets come first in the returned list.
pub fn generate_trials(
    manifest: &Manifest,
    split: Option<Split>,
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<Vec<TrialPair>, CorpusError> {
    let mut recs: Vec<&UtteranceRecord> = manifest
        .records()
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();
    recs.sort_by(|a, b| {
        (a.speaker_id.as_str(), a.utterance_id.as_str())
            .cmp(&(b.speaker_id.as_str(), b.utterance_id.as_str()))
    });
    // contiguous speaker groups: (start, len)
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        match groups.last_mut() {
            Some((start, len)) if recs[*start].speaker_id == r.speaker_id => *len += 1,
            _ => groups.push((i, 1)),
        }
    }

    let target_total: usize = groups.iter().map(|&(_, n)| pairs(n)).sum();
    let nontarget_total = pairs(recs.len()) - target_total;
    if n_nontarget > 0 && groups.len() < 2 {
        return Err(CorpusError::InsufficientSpeakers {
            needed: 2,
            found: groups.len(),
        });
    }
    if n_target > 0 && target_total == 0 {
        return Err(CorpusError::InsufficientUtterances);
    }
    if n_target > target_total {
        return Err(CorpusError::NotEnoughDistinctPairs {
            label: TrialLabel::Target,
            requested: n_target,
            available: target_total,
        });
    }
    if n_nontarget > nontarget_total {
        return Err(CorpusError::NotEnoughDistinctPairs {
            label: TrialLabel::Nontarget,
            requested: n_nontarget,
            available: nontarget_total,
        });
    }

    let mut rng = rng_from_seed(seed);
    let make = |i: usize, j: usize, label| TrialPair {
        enroll: recs[i].utterance_id.clone(),
        test: recs[j].utterance_id.clone(),
        label,
    };
    let mut trials = Vec::with_capacity(n_target + n_nontarget);

    // cumulative target-pair counts per group for rank lookup
    let mut cumulative = Vec::with_capacity(groups.len());
    let mut acc = 0;
    for &(_, n) in &groups {
        acc += pairs(n);
        cumulative.push(acc);
    }
    for rank in index::sample(&mut rng, target_total, n_target) {
        let g = cumulative.partition_point(|&c| c <= rank);
        let local = rank - if g == 0 { 0 } else { cumulative[g - 1] };
        let (start, n) = groups[g];
        let (a, b) = unrank_pair(n, local);
        trials.push(make(start + a, start + b, TrialLabel::Target));
    }

    if n_nontarget > 0 {
        let group_of: Vec<usize> = groups
            .iter()
            .enumerate()
            .flat_map(|(g, &(_, n))| std::iter::repeat_n(g, n))
            .collect();
        if nontarget_total <= MAX_ENUMERATED_PAIRS {
            let mut all = Vec::with_capacity(nontarget_total);
            for i in 0..recs.len() {
                for j in (i + 1)..recs.len() {
                    if group_of[i] != group_of[j] {
                        all.push((i, j));
                    }
                }
            }
            for k in index::sample(&mut rng, all.len(), n_nontarget) {
                let (i, j) = all[k];
                trials.push(make(i, j, TrialLabel::Nontarget));
            }
        } else {
            let mut seen = HashSet::with_capacity(n_nontarget);
            while seen.len() < n_nontarget {
                let a = rng.random_range(0..recs.len());
                let b = rng.random_range(0..recs.len());
                if group_of[a] == group_of[b] {
                    continue;
                }
                let (i, j) = (a.min(b), a.max(b));
                if seen.insert((i, j)) {
                    trials.push(make(i, j, TrialLabel::Nontarget));
                }
            }
        }
    }
    Ok(trials)
}

/// Writes `<enroll> <test> <0|1>` lines.
pub fn write_trials(trials: &[TrialPair], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in trials {
        writeln!(
            out,
            "{} {} {}",
            t.enroll,
            t.test,
            u8::from(t.label.is_target())
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialPair>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| unreadable(path, e))?;
    let mut trials = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let malformed = |reason: &str| CorpusError::MalformedRow {
            line: i + 1,
            reason: reason.to_string(),
        };
        let [enroll, test, label] = fields[..] else {
            return Err(malformed("expected `<enroll> <test> <0|1>`"));
        };
        let label = match label {
            "1" | "target" => TrialLabel::Target,
            "0" | "nontarget" => TrialLabel::Nontarget,
            _ => return Err(malformed("label must be 0 or 1")),
        };
        if enroll == test {
            return Err(malformed("trial pairs an utterance with itself"));
        }
        trials.push(TrialPair {
            enroll: enroll.to_string(),
            test: test.to_string(),
            label,
        });
    }
    Ok(trials)
}
