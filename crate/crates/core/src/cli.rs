//! Command-line front end wiring the pipeline stages together.
//!
//! Every subcommand writes a `run.json` next to its primary output with the
//! resolved arguments. Exit codes: 0 success, 2 invalid input or
//! configuration, 1 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::audio::{write_wav, AudioError, WavEncoding};
use crate::augment::{
    AugmentError, AugmentPolicy, AugmentationLog, Augmenter, FileLoader, NoiseBank, NoiseDirLayout,
    DEFAULT_MAX_RIR_LEN,
};
use crate::corpus::{
    build_manifest, generate_trials, read_trials, stratified_split, write_trials, CorpusError, Manifest,
    Split, SplitMode, SplitRatios, TrialPair, UtteranceRecord, DEFAULT_MIN_DURATION_S,
};
use crate::scoring::{
    det_points, eer_of_records, read_id_list, read_scores, score_trials, snorm, write_det_csv,
    write_scores, EmbeddingArchive, ScoreRecord, ScoringError, DEFAULT_TOP_K,
};
use crate::trainer::{
    train, AdamConfig, AdapterModel, MiningStrategy, TrainError, TrainerConfig, TrainingSet, ValidationSet,
};

/// Name of the reproducibility record written by every subcommand.
pub const RUN_RECORD: &str = "run.json";
/// Per-utterance augmentation log inside the augment output directory.
pub const AUGMENT_LOG: &str = "augment_log.jsonl";
/// Manifest of the augmented WAVs inside the augment output directory.
pub const AUGMENT_MANIFEST: &str = "augmented.jsonl";

#[derive(Debug, Parser, Serialize)]
#[command(name = "svkit", version, about = "Speaker-verification data, training and scoring toolkit")]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, env = "SVKIT_SEED", default_value_t = 0)]
    pub seed: u64,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build a JSONL manifest from a speaker directory tree or a CSV/JSONL table.
    Manifest(ManifestArgs),
    /// Assign train/val/test splits per speaker.
    Split(SplitArgs),
    /// Sample target and nontarget trial pairs.
    Trials(TrialsArgs),
    /// Write augmented copies of manifest utterances.
    Augment(AugmentArgs),
    /// Train an embedding adapter with triplet loss.
    Train(TrainArgs),
    /// Cosine-score trials, optionally with adaptive s-norm.
    Score(ScoreArgs),
    /// Report EER with and without s-norm.
    Eval(EvalArgs),
    /// Emit DET curve points as CSV.
    Det(DetArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ManifestArgs {
    /// Directory laid out as `<speaker>/**/*.wav`, or a `.csv` / `.jsonl` table.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Recordings shorter than this many seconds are excluded.
    #[arg(long, default_value_t = DEFAULT_MIN_DURATION_S)]
    pub min_duration: f64,
    /// Manifest name; defaults to the source name.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.70)]
    pub train: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val: f64,
    #[arg(long, default_value_t = 0.15)]
    pub test: f64,
    /// Assign whole speakers to one split instead of splitting each speaker.
    #[arg(long)]
    pub speaker_disjoint: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrialsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict to one split; all records when omitted.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long, default_value_t = 1000)]
    pub n_target: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_nontarget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputEncoding {
    Float32,
    Int16,
}

impl From<OutputEncoding> for WavEncoding {
    fn from(e: OutputEncoding) -> Self {
        match e {
            OutputEncoding::Float32 => WavEncoding::Float32,
            OutputEncoding::Int16 => WavEncoding::Int16,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root holding the background-noise, RIR and babble subdirectories.
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
    #[arg(long, default_value = "noise")]
    pub noise_subdir: String,
    #[arg(long, default_value = "rir")]
    pub rir_subdir: String,
    #[arg(long, default_value = "babble")]
    pub babble_subdir: String,
    /// Manifest babble is synthesized from; defaults to the train and val
    /// records of `--manifest` (all records if it is unsplit).
    #[arg(long)]
    pub babble_manifest: Option<PathBuf>,
    /// Only augment utterances of this split.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 15.0)]
    pub snr_max: f64,
    #[arg(long, default_value_t = 12)]
    pub babble_min: usize,
    #[arg(long, default_value_t = 25)]
    pub babble_max: usize,
    #[arg(long, default_value_t = 0.4)]
    pub p_noise: f64,
    #[arg(long, default_value_t = 0.4)]
    pub p_babble: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_reverb: f64,
    /// Sum babble tracks at their natural levels instead of unit RMS each.
    #[arg(long)]
    pub no_balance_babble: bool,
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_RIR_LEN)]
    pub max_rir_len: usize,
    #[arg(long, value_enum, default_value_t = OutputEncoding::Float32)]
    pub encoding: OutputEncoding,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainSplit {
    Train,
    Val,
    Test,
    All,
}

impl TrainSplit {
    fn filter(self) -> Option<Split> {
        match self {
            TrainSplit::Train => Some(Split::Train),
            TrainSplit::Val => Some(Split::Val),
            TrainSplit::Test => Some(Split::Test),
            TrainSplit::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningArg {
    BatchHard,
    SemiHard,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Embeddings of the training utterances.
    #[arg(long)]
    pub train_archive: PathBuf,
    /// Manifest supplying speaker labels.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainSplit::Train)]
    pub train_split: TrainSplit,
    /// Validation embeddings; defaults to the training archive.
    #[arg(long)]
    pub val_archive: Option<PathBuf>,
    #[arg(long)]
    pub val_trials: PathBuf,
    /// Adapter checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training history CSV; defaults to `history.csv` beside the checkpoint.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Adapter output dimension; defaults to the input dimension.
    #[arg(long)]
    pub d_out: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    /// Speakers per batch.
    #[arg(long, default_value_t = 8)]
    pub batch_speakers: usize,
    /// Utterances per speaker per batch.
    #[arg(long, default_value_t = 4)]
    pub utts_per_speaker: usize,
    #[arg(long, default_value_t = 8)]
    pub plateau_patience: usize,
    #[arg(long, default_value_t = 0.5)]
    pub plateau_factor: f64,
    #[arg(long, default_value_t = 8)]
    pub early_stop_patience: usize,
    #[arg(long, value_enum, default_value_t = MiningArg::BatchHard)]
    pub mining: MiningArg,
    /// Drop mined triplets that already satisfy the margin.
    #[arg(long)]
    pub drop_easy: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CohortArgs {
    /// File with one cohort utterance id per line; enables s-norm.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Archive holding the cohort embeddings; defaults to the scored archive.
    #[arg(long)]
    pub cohort_archive: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    /// Raw score file.
    #[arg(long)]
    pub out: PathBuf,
    /// Adapter checkpoint applied to every embedding before scoring.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Normalized score file; defaults to `<out>.snorm` when a cohort is given.
    #[arg(long)]
    pub snorm_out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub trials: PathBuf,
    /// Score embeddings directly.
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    pub archive: Option<PathBuf>,
    /// Read raw scores from a score file.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Pre-computed normalized scores to pair with `--scores`.
    #[arg(long, requires = "scores")]
    pub snorm_scores: Option<PathBuf>,
    #[arg(long, requires = "archive")]
    pub adapter: Option<PathBuf>,
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DetArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, requires = "archive")]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::MissingFile(_) | AudioError::UnsupportedFormat { .. } => CliError::Invalid(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Audio(a) => a.into(),
            CorpusError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Audio(a) => a.into(),
            AugmentError::InvalidPolicy(_)
            | AugmentError::MissingNoise(_)
            | AugmentError::RirTooLong { .. }
            | AugmentError::EmptyRir
            | AugmentError::EmptyNoise(_)
            | AugmentError::InsufficientSpeakers { .. }
            | AugmentError::EmptyPool => CliError::Invalid(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Scoring(s) => s.into(),
            TrainError::Io(_) | TrainError::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Runs an already parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Manifest(a) => cmd_manifest(a, cli),
        Command::Split(a) => cmd_split(a, cli),
        Command::Trials(a) => cmd_trials(a, cli),
        Command::Augment(a) => cmd_augment(a, cli),
        Command::Train(a) => cmd_train(a, cli),
        Command::Score(a) => cmd_score(a, cli),
        Command::Eval(a) => cmd_eval(a, cli),
        Command::Det(a) => cmd_det(a, cli),
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    unix_time_s: u64,
    invocation: &'a Cli,
}

fn write_run_record(cli: &Cli, dir: &Path) -> Result<(), CliError> {
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        unix_time_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        invocation: cli,
    };
    let path = dir.join(RUN_RECORD);
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    Ok(())
}

/// Creates the parent of `file` and returns it (`.` for bare file names).
fn prepare_parent(file: &Path) -> Result<PathBuf, CliError> {
    let parent = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    Ok(parent)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_manifest(args: &ManifestArgs, cli: &Cli) -> Result<(), CliError> {
    if !(args.min_duration >= 0.0 && args.min_duration.is_finite()) {
        return Err(CliError::Invalid(format!(
            "--min-duration must be a non-negative number, got {}",
            args.min_duration
        )));
    }
    let (mut manifest, summary) = build_manifest(&args.source, args.min_duration)?;
    if let Some(name) = &args.name {
        manifest = Manifest::new(name.clone(), manifest.records().to_vec())?;
    }
    let dir = prepare_parent(&args.out)?;
    manifest.write_jsonl(&args.out)?;
    write_run_record(cli, &dir)?;
    println!("{summary}");
    Ok(())
}

pub fn cmd_split(args: &SplitArgs, cli: &Cli) -> Result<(), CliError> {
    let ratios = SplitRatios {
        train: args.train,
        val: args.val,
        test: args.test,
    };
    ratios.validate()?;
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let mode = if args.speaker_disjoint {
        SplitMode::SpeakerDisjoint
    } else {
        SplitMode::PerSpeaker
    };
    let split = stratified_split(&manifest, ratios, cli.seed, mode)?;
    let dir = prepare_parent(&args.out)?;
    split.write_jsonl(&args.out)?;
    write_run_record(cli, &dir)?;
    let count = |s: Split| split.in_split(s).count();
    println!(
        "train {}  val {}  test {}",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(())
}

pub fn cmd_trials(args: &TrialsArgs, cli: &Cli) -> Result<(), CliError> {
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let trials = generate_trials(&manifest, args.split, args.n_target, args.n_nontarget, cli.seed)?;
    let dir = prepare_parent(&args.out)?;
    write_trials(&trials, &args.out)?;
    write_run_record(cli, &dir)?;
    println!("{} target, {} nontarget trials", args.n_target, args.n_nontarget);
    Ok(())
}

fn augmented_id(record: &UtteranceRecord, copy: usize, copies: usize) -> String {
    if copies == 1 {
        record.utterance_id.clone()
    } else {
        format!("{}.aug{copy}", record.utterance_id)
    }
}

/// Train and val records when the manifest is split, otherwise every record.
fn development_pool(manifest: &Manifest) -> Vec<UtteranceRecord> {
    let dev: Vec<UtteranceRecord> = manifest
        .records()
        .iter()
        .filter(|r| matches!(r.split, Split::Train | Split::Val))
        .cloned()
        .collect();
    if dev.is_empty() {
        manifest.records().to_vec()
    } else {
        dev
    }
}

pub fn cmd_augment(args: &AugmentArgs, cli: &Cli) -> Result<(), CliError> {
    let policy = AugmentPolicy {
        snr_db_min: args.snr_min,
        snr_db_max: args.snr_max,
        babble_speakers_min: args.babble_min,
        babble_speakers_max: args.babble_max,
        p_noise: args.p_noise,
        p_babble: args.p_babble,
        p_reverb: args.p_reverb,
        seed: cli.seed,
        balance_babble: !args.no_balance_babble,
        copies: args.copies,
    };
    policy.validate()?;
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let sources = match &args.noise_dir {
        Some(root) => {
            if !root.is_dir() {
                return Err(CliError::Invalid(format!(
                    "--noise-dir {} is not a directory",
                    root.display()
                )));
            }
            let layout = NoiseDirLayout {
                background: args.noise_subdir.clone(),
                rir: args.rir_subdir.clone(),
                babble: args.babble_subdir.clone(),
            };
            NoiseBank::load_dir(root, &layout, args.max_rir_len)?
        }
        None => Vec::new(),
    };
    let babble_pool = if policy.p_babble > 0.0 {
        match &args.babble_manifest {
            Some(path) => Manifest::read_jsonl(path)?.records().to_vec(),
            None => development_pool(&manifest),
        }
    } else {
        Vec::new()
    };
    let bank = NoiseBank::from_sources(sources, babble_pool);
    // surface missing sources once instead of once per file
    if policy.p_reverb > 0.0 && bank.rirs.is_empty() {
        return Err(CliError::Invalid("--p-reverb > 0 but no RIR files were found".into()));
    }
    if policy.p_noise > 0.0 && bank.background.is_empty() {
        return Err(CliError::Invalid("--p-noise > 0 but no background noise files were found".into()));
    }
    if policy.p_babble > 0.0 && bank.babble_pool.is_empty() && bank.babble_recordings.is_empty() {
        return Err(CliError::Invalid("--p-babble > 0 but no babble source is available".into()));
    }

    let tasks: Vec<(&UtteranceRecord, usize)> = manifest
        .records()
        .iter()
        .filter(|r| args.split.is_none_or(|s| r.split == s))
        .flat_map(|r| (0..args.copies).map(move |c| (r, c)))
        .collect();
    fs::create_dir_all(&args.out_dir)?;
    let loader = FileLoader;
    let augmenter = Augmenter {
        policy: &policy,
        bank: &bank,
        loader: &loader,
    };
    let encoding: WavEncoding = args.encoding.into();
    let out_dir = &args.out_dir;

    let results: Vec<(AugmentationLog, Option<UtteranceRecord>)> = thread_pool(args.jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(record, copy)| {
                let id = augmented_id(record, copy, args.copies);
                let out_path = out_dir.join(format!("{id}.wav"));
                let attempt = (|| -> Result<(AugmentationLog, UtteranceRecord), String> {
                    let (buf, log) = augmenter
                        .augment_record(record, args.epoch, copy as u64)
                        .map_err(|e| e.to_string())?;
                    if let Some(parent) = out_path.parent() {
                        fs::create_dir_all(parent).map_err(|e| e.to_string())?;
                    }
                    write_wav(&buf, &out_path, encoding).map_err(|e| e.to_string())?;
                    let mut out = UtteranceRecord::new(id.clone(), record.speaker_id.clone(), format!("{id}.wav"), buf.duration_s());
                    out.split = record.split;
                    Ok((log, out))
                })();
                match attempt {
                    Ok((log, out)) => (log, Some(out)),
                    Err(message) => {
                        log::error!("{}: {message}", record.utterance_id);
                        let log = AugmentationLog {
                            utterance_id: Some(record.utterance_id.clone()),
                            epoch: Some(args.epoch),
                            copy: Some(copy as u64),
                            error: Some(message),
                            ..AugmentationLog::default()
                        };
                        (log, None)
                    }
                }
            })
            .collect()
    });

    let mut log_file = BufWriter::new(fs::File::create(out_dir.join(AUGMENT_LOG))?);
    let mut written = Vec::new();
    let mut failures = 0usize;
    for (log, record) in results {
        let line = serde_json::to_string(&log).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(log_file, "{line}")?;
        match record {
            Some(r) => written.push(r),
            None => failures += 1,
        }
    }
    log_file.flush()?;
    if !written.is_empty() {
        Manifest::new(format!("{}-augmented", manifest.name()), written.clone())?
            .write_jsonl(out_dir.join(AUGMENT_MANIFEST))?;
    }
    write_run_record(cli, out_dir)?;
    println!("augmented {} of {} utterance copies", written.len(), tasks.len());
    if failures > 0 {
        return Err(CliError::Runtime(format!(
            "{failures} utterance(s) failed; see {}",
            out_dir.join(AUGMENT_LOG).display()
        )));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, cli: &Cli) -> Result<(), CliError> {
    let config = TrainerConfig {
        margin: args.margin,
        lr: args.lr,
        adam: AdamConfig::default(),
        plateau_patience: args.plateau_patience,
        plateau_factor: args.plateau_factor,
        early_stop_patience: args.early_stop_patience,
        max_epochs: args.max_epochs,
        batch_speakers: args.batch_speakers,
        utts_per_speaker: args.utts_per_speaker,
        seed: cli.seed,
        mining: match args.mining {
            MiningArg::BatchHard => MiningStrategy::BatchHard,
            MiningArg::SemiHard => MiningStrategy::SemiHard,
        },
        keep_easy: !args.drop_easy,
    };
    config.validate()?;
    let train_archive = EmbeddingArchive::read(&args.train_archive)?;
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let train_set = TrainingSet::from_archive(&train_archive, &manifest, args.train_split.filter())?;
    let val_archive = match &args.val_archive {
        Some(p) => EmbeddingArchive::read(p)?,
        None => train_archive.clone(),
    };
    let val_trials = read_trials(&args.val_trials)?;
    let validation = ValidationSet::new(&val_archive, &val_trials)?;

    let d_in = train_archive.dim;
    let d_out = args.d_out.unwrap_or(d_in);
    let model = if d_out == d_in {
        AdapterModel::identity(d_in)
    } else {
        let mut rng = crate::seed::rng_from_seed(crate::seed::derive_seed(cli.seed, &[1]));
        AdapterModel::random(d_in, d_out, &mut rng)?
    };
    let (model, history) = train(model, &train_set, &validation, &config)?;

    let dir = prepare_parent(&args.out)?;
    model.save(&args.out)?;
    let history_path = args.history.clone().unwrap_or_else(|| dir.join("history.csv"));
    prepare_parent(&history_path)?;
    history.write_csv(&history_path)?;
    write_run_record(cli, &dir)?;
    println!(
        "{} speakers, {} utterances; val EER {:.2}% -> {:.2}% (best epoch {}, {} epochs, {})",
        train_set.n_speakers(),
        train_set.len(),
        100.0 * history.baseline_val_eer,
        100.0 * history.best_val_eer,
        history.best_epoch,
        history.epochs.len(),
        history.stop_reason
    );
    Ok(())
}

fn load_scoring_archive(path: &Path, adapter: Option<&PathBuf>) -> Result<EmbeddingArchive, CliError> {
    let archive = EmbeddingArchive::read(path)?;
    match adapter {
        Some(a) => Ok(AdapterModel::load(a)?.apply_archive(&archive)?),
        None => Ok(archive),
    }
}

/// Applies s-norm when a cohort list is given.
fn maybe_snorm(
    records: &[ScoreRecord],
    archive: &EmbeddingArchive,
    cohort: &CohortArgs,
    adapter: Option<&PathBuf>,
) -> Result<Option<(Vec<ScoreRecord>, usize, usize)>, CliError> {
    let Some(list) = &cohort.cohort else {
        return Ok(None);
    };
    let ids = read_id_list(list)?;
    if ids.is_empty() {
        return Err(CliError::Invalid(format!("cohort list {} is empty", list.display())));
    }
    let mut combined = archive.clone();
    if let Some(path) = &cohort.cohort_archive {
        let extra = load_scoring_archive(path, adapter)?;
        if extra.dim != combined.dim {
            return Err(CliError::Invalid(format!(
                "cohort archive dimension {} differs from scored archive dimension {}",
                extra.dim, combined.dim
            )));
        }
        for (id, v) in extra.entries {
            combined.entries.entry(id).or_insert(v);
        }
    }
    let top_k = cohort.top_k.min(ids.len());
    if top_k < cohort.top_k {
        log::info!("top-k reduced to the cohort size {top_k}");
    }
    let normalized = snorm(records, &combined, &ids, top_k)?;
    Ok(Some((normalized, ids.len(), top_k)))
}

pub fn cmd_score(args: &ScoreArgs, cli: &Cli) -> Result<(), CliError> {
    let archive = load_scoring_archive(&args.archive, args.adapter.as_ref())?;
    let trials = read_trials(&args.trials)?;
    let pool = thread_pool(args.jobs)?;
    let records = pool.install(|| score_trials(&archive, &trials))?;
    let normalized = pool.install(|| maybe_snorm(&records, &archive, &args.cohort, args.adapter.as_ref()))?;
    let dir = prepare_parent(&args.out)?;
    write_scores(&records, &args.out, false)?;
    if let Some((norm, _, _)) = &normalized {
        let path = args.snorm_out.clone().unwrap_or_else(|| {
            let mut p = args.out.clone().into_os_string();
            p.push(".snorm");
            PathBuf::from(p)
        });
        prepare_parent(&path)?;
        write_scores(norm, &path, true)?;
    }
    write_run_record(cli, &dir)?;
    println!("scored {} trials", records.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    trials: usize,
    targets: usize,
    nontargets: usize,
    eer_raw: f64,
    eer_raw_percent: f64,
    threshold_raw: f64,
    eer_snorm: Option<f64>,
    eer_snorm_percent: Option<f64>,
    threshold_snorm: Option<f64>,
    cohort_size: Option<usize>,
    top_k: Option<usize>,
}

fn with_normalized(raw: &[ScoreRecord], normalized: Vec<ScoreRecord>) -> Result<Vec<ScoreRecord>, CliError> {
    if raw.len() != normalized.len() {
        return Err(CliError::Invalid(format!(
            "raw and normalized score files list {} and {} trials",
            raw.len(),
            normalized.len()
        )));
    }
    raw.iter()
        .zip(normalized)
        .map(|(r, n)| {
            if r.trial != n.trial {
                return Err(CliError::Invalid(format!(
                    "score files disagree on trial order at {} {}",
                    r.trial.enroll, r.trial.test
                )));
            }
            Ok(ScoreRecord {
                normalized_score: Some(n.raw_score),
                ..r.clone()
            })
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs, cli: &Cli) -> Result<(), CliError> {
    let trials = read_trials(&args.trials)?;
    let (raw, normalized, cohort_info) = match (&args.archive, &args.scores) {
        (Some(path), _) => {
            let archive = load_scoring_archive(path, args.adapter.as_ref())?;
            let raw = score_trials(&archive, &trials)?;
            match maybe_snorm(&raw, &archive, &args.cohort, args.adapter.as_ref())? {
                Some((norm, size, k)) => (raw, Some(norm), Some((size, k))),
                None => (raw, None, None),
            }
        }
        (None, Some(path)) => {
            let raw = read_scores(path, &trials)?;
            let normalized = match &args.snorm_scores {
                Some(p) => Some(with_normalized(&raw, read_scores(p, &trials)?)?),
                None => None,
            };
            (raw, normalized, None)
        }
        (None, None) => return Err(CliError::Invalid("either --archive or --scores is required".into())),
    };
    let raw_eer = eer_of_records(&raw, false)?;
    let norm_eer = normalized.as_deref().map(|n| eer_of_records(n, true)).transpose()?;
    let targets = raw.iter().filter(|r| r.trial.label.is_target()).count();
    let report = EvalReport {
        trials: raw.len(),
        targets,
        nontargets: raw.len() - targets,
        eer_raw: raw_eer.eer,
        eer_raw_percent: 100.0 * raw_eer.eer,
        threshold_raw: raw_eer.threshold,
        eer_snorm: norm_eer.map(|e| e.eer),
        eer_snorm_percent: norm_eer.map(|e| 100.0 * e.eer),
        threshold_snorm: norm_eer.map(|e| e.threshold),
        cohort_size: cohort_info.map(|c| c.0),
        top_k: cohort_info.map(|c| c.1),
    };
    let dir = prepare_parent(&args.report)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&args.report, text + "\n")?;
    write_run_record(cli, &dir)?;

    println!("{:<10} {:>10} {:>8}", "scoring", "EER", "trials");
    println!("{:<10} {:>9.2}% {:>8}", "raw", report.eer_raw_percent, report.trials);
    match report.eer_snorm_percent {
        Some(p) => println!("{:<10} {:>9.2}% {:>8}", "s-norm", p, report.trials),
        None => println!("{:<10} {:>10} {:>8}", "s-norm", "n/a", report.trials),
    }
    Ok(())
}

pub fn cmd_det(args: &DetArgs, cli: &Cli) -> Result<(), CliError> {
    let trials: Vec<TrialPair> = read_trials(&args.trials)?;
    let records = match (&args.archive, &args.scores) {
        (Some(path), _) => score_trials(&load_scoring_archive(path, args.adapter.as_ref())?, &trials)?,
        (None, Some(path)) => read_scores(path, &trials)?,
        (None, None) => return Err(CliError::Invalid("either --archive or --scores is required".into())),
    };
    let scores: Vec<f64> = records.iter().map(|r| r.raw_score).collect();
    let labels: Vec<_> = records.iter().map(|r| r.trial.label).collect();
    let points = det_points(&scores, &labels)?;
    let dir = prepare_parent(&args.out)?;
    write_det_csv(&points, &args.out)?;
    write_run_record(cli, &dir)?;
    println!("wrote {} DET points", points.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_flag_is_parsed() {
        let cli = Cli::try_parse_from(["svkit", "split", "--manifest", "m", "--out", "o", "--seed", "9"]).unwrap();
        assert_eq!(cli.seed, 9);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["svkit", "split"]), 2);
        assert_eq!(run(["svkit", "bogus"]), 2);
        assert_eq!(run(["svkit", "--help"]), 0);
    }
}
