//! Command-line wiring for the social-pattern pipeline: dataset validation,
//! feature extraction, augmentation, training, inference, clustering,
//! profile statistics and map export. Every subcommand is deterministic
//! given `--seed`; exit codes are 0 on success, 1 on data errors and 2 on
//! usage errors.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use egosocial::bundle::{
    self, load_bundle, load_series_document, save_bundle, save_series_document, ModelBundle,
    Preset, SeriesDocument, Task, DEFAULT_QUANTIZATION, DEFAULT_RETAINED_VARIANCE,
};
use egosocial::cluster::{
    agglomerate, calibrate_cutoff, cluster_report, pairwise_f_score, ClusterReport, ClusterResult,
    FaceSet, FaceSetId, PairwiseScore,
};
use egosocial::ingest::{
    load_calibration, load_identities, load_manifest, load_sequences, Category, DatasetManifest,
    SequenceRecord,
};
use egosocial::lstm::{evaluate, grid_search, predict, NetworkConfig, SearchSpace};
use egosocial::patterns::{
    assemble_events, build_profile, render_svg, temporal_map, InteractionEvent, ProfileScope,
};
use egosocial::signals::FeatureSetting;
use egosocial::synth::{DatasetPlan, DatasetSpec, ExpressionRegime, SceneSpec};

pub enum CliError {
    Usage(String),
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) => f.write_str(msg),
        }
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error_from!(
    egosocial::bundle::BundleError,
    egosocial::ingest::IngestError,
    egosocial::lstm::LstmError,
    egosocial::signals::SignalError,
    egosocial::augment::AugmentError,
    egosocial::cluster::ClusterError,
    egosocial::patterns::PatternError,
    egosocial::synth::SynthError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "egosocial",
    version,
    about = "Social interaction detection, categorization and pattern statistics \
             over egocentric photo-stream features"
)]
pub struct Cli {
    /// Worker threads for parallel stages (0 uses the rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a dataset manifest, check every invariant and report warnings.
    Validate {
        /// Dataset manifest path.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fit the quadratic face-height → distance model from a calibration table.
    FitDistance {
        /// Dataset manifest whose calibration table to use.
        #[arg(long, conflicts_with = "calibration")]
        manifest: Option<PathBuf>,
        /// Calibration table given directly (height_px distance_cm lines).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output path for the fitted model document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build classification time-series for a feature setting.
    BuildSeries {
        /// Dataset manifest path.
        #[arg(long)]
        manifest: PathBuf,
        /// Feature setting (SID1..SID4, SIC1..SIC3).
        #[arg(long)]
        setting: FeatureSetting,
        /// Quantization factor for scene descriptors.
        #[arg(long, default_value_t = DEFAULT_QUANTIZATION)]
        q: u32,
        /// Retained-variance fraction for the descriptor PCA.
        #[arg(long, default_value_t = DEFAULT_RETAINED_VARIANCE)]
        variance: f64,
        /// Output path for the series document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Eigen-perturbation augmentation of a series document.
    Augment {
        /// Input series document.
        #[arg(long)]
        series: PathBuf,
        /// Output size multiplier Δ (copy 0 stays unperturbed).
        #[arg(long, default_value_t = 2)]
        delta: usize,
        /// Gaussian standard deviation of the perturbation draws.
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the augmented series document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a labeled series document.
    Train {
        /// Input series document.
        #[arg(long)]
        series: PathBuf,
        /// Named hyperparameter preset (sid1..sid4, sic1..sic3).
        #[arg(long)]
        preset: Option<String>,
        /// Learning rate (overrides the preset).
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Momentum coefficient.
        #[arg(long)]
        momentum: Option<f64>,
        /// Dropout rate between hidden state and output layer.
        #[arg(long)]
        dropout: Option<f64>,
        /// Sequences per parameter update.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Memory cells in the hidden layer.
        #[arg(long)]
        cells: Option<usize>,
        /// Disable per-column z-score standardization.
        #[arg(long)]
        no_standardize: bool,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the model bundle.
        #[arg(long)]
        out: PathBuf,
        /// Optional path for the training report document.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Grid search with stratified cross-validation over a series document.
    GridSearch {
        /// Input series document.
        #[arg(long)]
        series: PathBuf,
        /// Cross-validation folds.
        #[arg(long, default_value_t = 3)]
        folds: usize,
        /// Log-uniform samples per hyperparameter axis.
        #[arg(long, default_value_t = 2)]
        samples: usize,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the best config and CV table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model bundle against a labeled dataset.
    Evaluate {
        /// Model bundle path.
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest path.
        #[arg(long)]
        manifest: PathBuf,
        /// Output path for the metrics document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict per-prototype interaction states with a detection bundle.
    Detect {
        /// Detection model bundle path.
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest path.
        #[arg(long)]
        manifest: PathBuf,
        /// Output path for the predictions document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict per-sequence meeting categories with a categorization bundle.
    Categorize {
        /// Categorization model bundle path.
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest path.
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to sequences detected as interacting (detect output).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Output path for the predictions document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Group face-sets across events into person clusters.
    Cluster {
        /// Dataset manifest path.
        #[arg(long)]
        manifest: PathBuf,
        /// Agglomeration cutoff; omit to calibrate from identity labels.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Restrict to tracks detected as interacting (detect output).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Output path for the clustering document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a generic or person-specific social profile.
    Profile {
        /// Events document (as produced by assemble or written by hand).
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        events: Option<PathBuf>,
        /// Assemble events from a dataset manifest plus pipeline outputs.
        #[arg(long, requires = "detections", requires = "categorizations")]
        manifest: Option<PathBuf>,
        /// Detect output (needed with --manifest).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Categorize output (needed with --manifest).
        #[arg(long)]
        categorizations: Option<PathBuf>,
        /// Cluster output (optional participant mapping with --manifest).
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Observation days; defaults to the manifest value when present.
        #[arg(long)]
        days: Option<u32>,
        /// Cluster id for a person-specific profile.
        #[arg(long)]
        person: Option<String>,
        /// Output path for the profile document.
        #[arg(long)]
        out: PathBuf,
        /// Also write the assembled events (reusable by temporal-map).
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
    /// Export the temporal interaction map (document plus SVG rendering).
    TemporalMap {
        /// Events document.
        #[arg(long)]
        events: PathBuf,
        /// 1-based week to restrict to (7-day windows).
        #[arg(long)]
        week: Option<u32>,
        /// Output path for the map document.
        #[arg(long)]
        out: PathBuf,
        /// Optional output path for the SVG rendering.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Generate a ground-truthed synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Total sequences to generate.
    #[arg(long, default_value_t = 20)]
    pub sequences: usize,
    /// Fraction of sequences that are non-interacting crowd scenes.
    #[arg(long, default_value_t = 0.5)]
    pub crowd_fraction: f64,
    /// Crowd scenes mimic interacting geometry (expressions then carry the
    /// only discriminative signal).
    #[arg(long)]
    pub adversarial: bool,
    /// Interacting people follow the expressive regime regardless of
    /// meeting category.
    #[arg(long)]
    pub expressive: bool,
    /// People per scene.
    #[arg(long, default_value_t = 1)]
    pub people: usize,
    /// Fraction of interaction scenes labeled formal.
    #[arg(long, default_value_t = 0.5)]
    pub formal_fraction: f64,
    /// Observation days the sequences spread over.
    #[arg(long, default_value_t = 10)]
    pub days: u32,
    /// Size of the recurring-person pool.
    #[arg(long, default_value_t = 8)]
    pub pool: usize,
    /// Scene-descriptor dimension (0 disables descriptors).
    #[arg(long, default_value_t = 96)]
    pub descriptor_dim: usize,
    /// Separation amplitude of category-specific descriptor support.
    #[arg(long, default_value_t = 1.0)]
    pub descriptor_separation: f64,
    /// Dense descriptor noise amplitude.
    #[arg(long, default_value_t = 0.15)]
    pub descriptor_noise: f64,
    /// Face-embedding dimension (0 disables embeddings).
    #[arg(long, default_value_t = 32)]
    pub embedding_dim: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses argv and executes; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match try_run(cli) {
        Ok(()) => 0,
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
    }
}

/// Executes a parsed invocation; exposed separately so tests can inspect
/// error messages.
pub fn try_run(cli: Cli) -> CliResult {
    if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| CliError::Data(e.to_string()))?;
        pool.install(|| dispatch(cli.command))
    } else {
        dispatch(cli.command)
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Validate { manifest } => cmd_validate(&manifest),
        Command::FitDistance { manifest, calibration, out } => {
            cmd_fit_distance(manifest.as_deref(), calibration.as_deref(), &out)
        }
        Command::BuildSeries { manifest, setting, q, variance, out } => {
            cmd_build_series(&manifest, setting, q, variance, &out)
        }
        Command::Augment { series, delta, sigma, seed, out } => {
            cmd_augment(&series, delta, sigma, seed, &out)
        }
        Command::Train {
            series,
            preset,
            learning_rate,
            momentum,
            dropout,
            batch_size,
            epochs,
            cells,
            no_standardize,
            seed,
            out,
            report,
        } => cmd_train(
            &series,
            preset.as_deref(),
            TrainOverrides { learning_rate, momentum, dropout, batch_size, epochs, cells },
            !no_standardize,
            seed,
            &out,
            report.as_deref(),
        ),
        Command::GridSearch { series, folds, samples, seed, out } => {
            cmd_grid_search(&series, folds, samples, seed, &out)
        }
        Command::Evaluate { model, manifest, out } => cmd_evaluate(&model, &manifest, &out),
        Command::Detect { model, manifest, out } => cmd_detect(&model, &manifest, &out),
        Command::Categorize { model, manifest, detections, out } => {
            cmd_categorize(&model, &manifest, detections.as_deref(), &out)
        }
        Command::Cluster { manifest, cutoff, detections, out } => {
            cmd_cluster(&manifest, cutoff, detections.as_deref(), &out)
        }
        Command::Profile {
            events,
            manifest,
            detections,
            categorizations,
            clusters,
            days,
            person,
            out,
            events_out,
        } => cmd_profile(
            events.as_deref(),
            manifest.as_deref(),
            detections.as_deref(),
            categorizations.as_deref(),
            clusters.as_deref(),
            days,
            person,
            &out,
            events_out.as_deref(),
        ),
        Command::TemporalMap { events, week, out, svg } => {
            cmd_temporal_map(&events, week, &out, svg.as_deref())
        }
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_dataset(path: &Path) -> Result<(DatasetManifest, Vec<SequenceRecord>), CliError> {
    let manifest = load_manifest(path)?;
    let loaded = load_sequences(&manifest)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    Ok((manifest, loaded.sequences))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_validate(manifest_path: &Path) -> CliResult {
    let manifest = load_manifest(manifest_path)?;
    let loaded = load_sequences(&manifest)?;
    let prototypes: usize = loaded
        .sequences
        .iter()
        .map(|s| egosocial::ingest::extract_prototypes(s).len())
        .sum();
    for warning in &loaded.warnings {
        println!("warning: {warning}");
    }
    println!(
        "ok: {} sequences, {} prototypes, {} observation days, {} warnings",
        loaded.sequences.len(),
        prototypes,
        manifest.doc.observation_days,
        loaded.warnings.len()
    );
    Ok(())
}

fn cmd_fit_distance(
    manifest_path: Option<&Path>,
    calibration_path: Option<&Path>,
    out: &Path,
) -> CliResult {
    let table = match (manifest_path, calibration_path) {
        (Some(m), None) => {
            let manifest = load_manifest(m)?;
            let path = manifest
                .calibration_path()
                .ok_or_else(|| CliError::Data("manifest declares no calibration table".into()))?;
            load_calibration(&path)?
        }
        (None, Some(c)) => load_calibration(c)?,
        _ => {
            return Err(CliError::Usage(
                "fit-distance needs exactly one of --manifest or --calibration".into(),
            ))
        }
    };
    let model = egosocial::signals::fit_distance_model(&table)?;
    write_json(&model, out)?;
    println!(
        "fitted d = {:.6}·h² + {:.4}·h + {:.2}, residual {:.4} cm over {} points",
        model.a,
        model.b,
        model.c,
        model.residual_rms,
        table.len()
    );
    Ok(())
}

fn cmd_build_series(
    manifest_path: &Path,
    setting: FeatureSetting,
    q: u32,
    variance: f64,
    out: &Path,
) -> CliResult {
    let (manifest, sequences) = load_dataset(manifest_path)?;
    let calibration = match manifest.calibration_path() {
        Some(path) => Some(load_calibration(&path)?),
        None => None,
    };
    let transforms =
        bundle::fit_transforms(&sequences, setting, q, variance, calibration.as_deref())?;
    let series = bundle::build_series(&sequences, &transforms)?;
    let count = series.len();
    let dim = series.first().map_or(0, |s| s.dim());
    let doc = SeriesDocument::new(transforms, series);
    save_series_document(&doc, out)?;
    println!("built {count} {setting} series of dimension {dim}");
    Ok(())
}

fn cmd_augment(series_path: &Path, delta: usize, sigma: f64, seed: u64, out: &Path) -> CliResult {
    let doc = load_series_document(series_path)?;
    let first_dim = doc.series.first().map_or(0, |s| s.dim());
    let frozen = bundle::frozen_dims(doc.transforms.setting, first_dim);
    let basis = egosocial::augment::fit_eigenbasis(&doc.series, &frozen)?;
    let spec = egosocial::augment::AugmentSpec {
        multiplier: delta,
        noise_sigma: sigma,
        frozen_dims: frozen,
        rng_seed: seed,
    };
    let augmented = egosocial::augment::augment(&doc.series, &basis, &spec)?;
    let out_count = augmented.len();
    let doc = SeriesDocument::new(doc.transforms, augmented);
    save_series_document(&doc, out)?;
    println!("augmented to {out_count} series (Δ = {delta}, σ = {sigma})");
    Ok(())
}

struct TrainOverrides {
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    dropout: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    cells: Option<usize>,
}

fn cmd_train(
    series_path: &Path,
    preset_name: Option<&str>,
    overrides: TrainOverrides,
    standardize: bool,
    seed: u64,
    out: &Path,
    report_path: Option<&Path>,
) -> CliResult {
    let doc = load_series_document(series_path)?;
    let preset: Preset = match preset_name {
        Some(name) => bundle::parse_preset(name).map_err(CliError::Usage)?.1,
        None => bundle::preset_for(doc.transforms.setting),
    };
    let mut config: NetworkConfig = preset.into_config(0, seed);
    if let Some(v) = overrides.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = overrides.momentum {
        config.momentum = v;
    }
    if let Some(v) = overrides.dropout {
        config.dropout_rate = v;
    }
    if let Some(v) = overrides.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = overrides.epochs {
        config.epochs = v;
    }
    if let Some(v) = overrides.cells {
        config.cell_count = v;
    }
    let (bundle, report) = bundle::train_bundle(&doc, &config, standardize)?;
    save_bundle(&bundle, out)?;
    if let Some(path) = report_path {
        write_json(&report, path)?;
    }
    println!(
        "trained {} ({} series, {} epochs): final loss {:.4}, train accuracy {:.3}, {:.1} s",
        bundle.transforms.setting,
        doc.series.len(),
        report.epoch_mean_loss.len(),
        report.epoch_mean_loss.last().copied().unwrap_or(f64::NAN),
        report.final_train_accuracy,
        report.wall_clock_s
    );
    Ok(())
}

#[derive(Serialize)]
struct GridSearchOutput {
    best: NetworkConfig,
    table: egosocial::lstm::CvTable,
}

fn cmd_grid_search(
    series_path: &Path,
    folds: usize,
    samples: usize,
    seed: u64,
    out: &Path,
) -> CliResult {
    let doc = load_series_document(series_path)?;
    let samples_vec = bundle::to_samples(&doc.series)?;
    let space = SearchSpace::default();
    let (best, table) = grid_search(&samples_vec, &space, folds, samples, seed)?;
    println!(
        "searched {} candidates with {}-fold CV; best: lr {}, momentum {}, dropout {}, batch {}, epochs {}, cells {}",
        table.rows.len(),
        table.folds,
        best.learning_rate,
        best.momentum,
        best.dropout_rate,
        best.batch_size,
        best.epochs,
        best.cell_count
    );
    write_json(&GridSearchOutput { best, table }, out)
}

fn bundle_series(
    bundle: &ModelBundle,
    sequences: &[SequenceRecord],
) -> Result<Vec<egosocial::signals::TimeSeries>, CliError> {
    Ok(bundle::build_series(sequences, &bundle.transforms)?)
}

fn cmd_evaluate(model: &Path, manifest_path: &Path, out: &Path) -> CliResult {
    let bundle = load_bundle(model)?;
    let (_, sequences) = load_dataset(manifest_path)?;
    let series = bundle_series(&bundle, &sequences)?;
    let samples = bundle::to_samples(&series)?;
    let metrics = evaluate(&bundle.network, &samples)?;
    write_json(&metrics, out)?;
    println!(
        "{}: precision {:.4}, recall {:.4}, accuracy {:.4} over {} series",
        bundle.task,
        metrics.precision,
        metrics.recall,
        metrics.accuracy,
        samples.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DetectionEntry {
    sequence_id: String,
    track_id: u32,
    interacting: bool,
    probability: f64,
}

#[derive(Serialize, Deserialize)]
struct DetectionOutput {
    task: Task,
    setting: FeatureSetting,
    predictions: Vec<DetectionEntry>,
}

fn cmd_detect(model: &Path, manifest_path: &Path, out: &Path) -> CliResult {
    let bundle = load_bundle(model)?;
    bundle.expect_task(Task::Detection)?;
    let (_, sequences) = load_dataset(manifest_path)?;
    let series = bundle_series(&bundle, &sequences)?;
    let mut predictions = Vec::with_capacity(series.len());
    for s in &series {
        let (label, probability) = predict(&bundle.network, &s.data)?;
        predictions.push(DetectionEntry {
            sequence_id: s.origin.sequence_id.clone(),
            track_id: s.origin.track_id.unwrap_or(0),
            interacting: label,
            probability,
        });
    }
    let positive = predictions.iter().filter(|p| p.interacting).count();
    println!(
        "detected {positive} interacting prototypes out of {}",
        predictions.len()
    );
    write_json(
        &DetectionOutput { task: Task::Detection, setting: bundle.transforms.setting, predictions },
        out,
    )
}

#[derive(Serialize, Deserialize)]
struct CategorizationEntry {
    sequence_id: String,
    category: Category,
    probability_formal: f64,
}

#[derive(Serialize, Deserialize)]
struct CategorizationOutput {
    task: Task,
    setting: FeatureSetting,
    predictions: Vec<CategorizationEntry>,
}

fn cmd_categorize(
    model: &Path,
    manifest_path: &Path,
    detections: Option<&Path>,
    out: &Path,
) -> CliResult {
    let bundle = load_bundle(model)?;
    bundle.expect_task(Task::Categorization)?;
    let (_, mut sequences) = load_dataset(manifest_path)?;
    if let Some(path) = detections {
        let detected: DetectionOutput = read_json(path)?;
        let keep: std::collections::BTreeSet<&str> = detected
            .predictions
            .iter()
            .filter(|p| p.interacting)
            .map(|p| p.sequence_id.as_str())
            .collect();
        sequences.retain(|s| keep.contains(s.sequence_id.as_str()));
    }
    let series = bundle_series(&bundle, &sequences)?;
    let mut predictions = Vec::with_capacity(series.len());
    for s in &series {
        let (formal, probability) = predict(&bundle.network, &s.data)?;
        predictions.push(CategorizationEntry {
            sequence_id: s.origin.sequence_id.clone(),
            category: if formal { Category::Formal } else { Category::Informal },
            probability_formal: probability,
        });
    }
    let formal = predictions.iter().filter(|p| p.category == Category::Formal).count();
    println!("categorized {} sequences: {formal} formal", predictions.len());
    write_json(
        &CategorizationOutput {
            task: Task::Categorization,
            setting: bundle.transforms.setting,
            predictions,
        },
        out,
    )
}

#[derive(Serialize, Deserialize)]
struct ClusterOutput {
    result: ClusterResult,
    report: ClusterReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pairwise: Option<PairwiseScore>,
    calibrated: bool,
}

fn face_sets_from_dataset(
    sequences: &[SequenceRecord],
    identities: Option<&BTreeMap<(String, u32), String>>,
    keep: Option<&std::collections::BTreeSet<(String, u32)>>,
) -> Result<Vec<FaceSet>, CliError> {
    let mut out = Vec::new();
    for sequence in sequences {
        for prototype in egosocial::ingest::extract_prototypes(sequence) {
            let key = (sequence.sequence_id.clone(), prototype.track_id);
            if let Some(filter) = keep {
                if !filter.contains(&key) {
                    continue;
                }
            }
            let embeddings: Vec<Vec<f64>> = prototype
                .observations
                .iter()
                .filter_map(|o| o.embedding.clone())
                .collect();
            if embeddings.is_empty() {
                continue;
            }
            let person = identities.and_then(|map| map.get(&key).cloned());
            out.push(FaceSet::new(
                FaceSetId { sequence_id: key.0, track_id: key.1 },
                embeddings,
                person,
            )?);
        }
    }
    Ok(out)
}

fn cmd_cluster(
    manifest_path: &Path,
    cutoff: Option<f64>,
    detections: Option<&Path>,
    out: &Path,
) -> CliResult {
    let (manifest, sequences) = load_dataset(manifest_path)?;
    let identities = match manifest.identities_path() {
        Some(path) => Some(load_identities(&path)?),
        None => None,
    };
    let keep = match detections {
        Some(path) => {
            let detected: DetectionOutput = read_json(path)?;
            Some(
                detected
                    .predictions
                    .iter()
                    .filter(|p| p.interacting)
                    .map(|p| (p.sequence_id.clone(), p.track_id))
                    .collect::<std::collections::BTreeSet<(String, u32)>>(),
            )
        }
        None => None,
    };
    let face_sets = face_sets_from_dataset(&sequences, identities.as_ref(), keep.as_ref())?;
    if face_sets.is_empty() {
        return Err(CliError::Data("no face-sets with embeddings in the dataset".into()));
    }
    let (cutoff, calibrated) = match cutoff {
        Some(c) => (c, false),
        None => {
            if identities.is_none() {
                return Err(CliError::Usage(
                    "no --cutoff given and the dataset has no identities to calibrate from".into(),
                ));
            }
            (calibrate_cutoff(&face_sets)?, true)
        }
    };
    let result = agglomerate(&face_sets, cutoff)?;
    let labels: BTreeMap<String, egosocial::ingest::SequenceLabels> = sequences
        .iter()
        .map(|s| (s.sequence_id.clone(), s.labels.clone().unwrap_or_default()))
        .collect();
    let report = cluster_report(&result, &face_sets, &labels)?;
    let pairwise = identities.as_ref().map(|map| {
        let truth: BTreeMap<FaceSetId, String> = map
            .iter()
            .map(|((seq, track), person)| {
                (FaceSetId { sequence_id: seq.clone(), track_id: *track }, person.clone())
            })
            .collect();
        pairwise_f_score(&result, &truth)
    });
    println!(
        "clustered {} face-sets into {} clusters at cutoff {:.4}{}",
        face_sets.len(),
        result.clusters.len(),
        cutoff,
        if calibrated { " (calibrated)" } else { "" }
    );
    if let Some(score) = &pairwise {
        println!(
            "pairwise vs ground truth: precision {:.3}, recall {:.3}, F1 {:.3}",
            score.precision, score.recall, score.f1
        );
    }
    write_json(&ClusterOutput { result, report, pairwise, calibrated }, out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_profile(
    events_path: Option<&Path>,
    manifest_path: Option<&Path>,
    detections: Option<&Path>,
    categorizations: Option<&Path>,
    clusters: Option<&Path>,
    days: Option<u32>,
    person: Option<String>,
    out: &Path,
    events_out: Option<&Path>,
) -> CliResult {
    let (events, default_days): (Vec<InteractionEvent>, Option<u32>) = match (events_path, manifest_path) {
        (Some(path), None) => (read_json(path)?, None),
        (None, Some(manifest_path)) => {
            let (manifest, sequences) = load_dataset(manifest_path)?;
            let detected: DetectionOutput = read_json(detections.expect("clap enforces"))?;
            let categorized: CategorizationOutput =
                read_json(categorizations.expect("clap enforces"))?;
            let mut interacting: BTreeMap<String, Vec<u32>> = BTreeMap::new();
            for p in detected.predictions.iter().filter(|p| p.interacting) {
                interacting.entry(p.sequence_id.clone()).or_default().push(p.track_id);
            }
            let categories: BTreeMap<String, Category> = categorized
                .predictions
                .iter()
                .map(|p| (p.sequence_id.clone(), p.category))
                .collect();
            let participants: BTreeMap<(String, u32), String> = match clusters {
                Some(path) => {
                    let doc: ClusterOutput = read_json(path)?;
                    doc.result
                        .assignments()
                        .into_iter()
                        .map(|(id, cluster)| {
                            ((id.sequence_id, id.track_id), format!("c{cluster:03}"))
                        })
                        .collect()
                }
                None => BTreeMap::new(),
            };
            (
                assemble_events(&sequences, &interacting, &categories, &participants),
                Some(manifest.doc.observation_days),
            )
        }
        _ => return Err(CliError::Usage("profile needs --events or --manifest".into())),
    };
    if let Some(path) = events_out {
        write_json(&events, path)?;
    }
    let days = days
        .or(default_days)
        .ok_or_else(|| CliError::Usage("--days is required with --events".into()))?;
    let scope = match person {
        Some(cluster_id) => ProfileScope::Person { cluster_id },
        None => ProfileScope::Generic,
    };
    let profile = build_profile(&events, days, scope)?;
    println!(
        "F-formal {:.2}, F-informal {:.2}, A-formal {:.2}, A-informal {:.2}, D {:.2}, \
         L {:.2} ± {:.2} min over {} events / {} days",
        profile.f_formal,
        profile.f_informal,
        profile.a_formal,
        profile.a_informal,
        profile.diversity,
        profile.duration.mean_min,
        profile.duration.stddev_min,
        profile.event_count,
        profile.observation_days
    );
    write_json(&profile, out)
}

fn cmd_temporal_map(
    events_path: &Path,
    week: Option<u32>,
    out: &Path,
    svg: Option<&Path>,
) -> CliResult {
    let events: Vec<InteractionEvent> = read_json(events_path)?;
    let map = temporal_map(&events, week)?;
    println!(
        "mapped {} days, {} people",
        map.days.len(),
        map.legend.len()
    );
    write_json(&map, out)?;
    if let Some(svg_path) = svg {
        fs::write(svg_path, render_svg(&map))?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    if !(0.0..=1.0).contains(&args.crowd_fraction) || !(0.0..=1.0).contains(&args.formal_fraction)
    {
        return Err(CliError::Usage("fractions must lie in [0, 1]".into()));
    }
    let crowd = (args.sequences as f64 * args.crowd_fraction).round() as usize;
    let interactions = args.sequences - crowd.min(args.sequences);
    let formal = (interactions as f64 * args.formal_fraction).round() as usize;
    let informal = interactions - formal;

    let customize = |mut spec: SceneSpec| -> SceneSpec {
        spec.descriptor = (args.descriptor_dim > 0).then_some(egosocial::synth::DescriptorSpec {
            dim: args.descriptor_dim,
            separation: args.descriptor_separation,
            noise: args.descriptor_noise,
        });
        spec.embedding = (args.embedding_dim > 0)
            .then_some(egosocial::synth::EmbeddingSpec { dim: args.embedding_dim, noise: 0.25 });
        spec
    };
    let interaction = |category: Category| -> SceneSpec {
        let mut spec = customize(SceneSpec::interaction_scene(category, args.people));
        if args.expressive {
            spec.interacting_regime = ExpressionRegime::informal();
        }
        spec
    };
    let crowd_spec = customize(if args.adversarial {
        SceneSpec::adversarial_crowd(args.people)
    } else {
        SceneSpec::crowd_scene(args.people)
    });

    let plans = vec![
        DatasetPlan { spec: interaction(Category::Formal), count: formal },
        DatasetPlan { spec: interaction(Category::Informal), count: informal },
        DatasetPlan { spec: crowd_spec, count: crowd },
    ];
    let dataset = DatasetSpec {
        plans,
        observation_days: args.days,
        person_pool: args.pool,
        seed: args.seed,
    };
    let manifest = egosocial::synth::generate_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} sequences ({formal} formal, {informal} informal, {crowd} crowd) to {}",
        manifest.doc.sequences.len(),
        args.out.display()
    );
    Ok(())
}
