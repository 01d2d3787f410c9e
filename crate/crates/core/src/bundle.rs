//! Serialized pipeline artifacts and the glue between dataset, feature
//! extraction and the classifier: fitted transforms (distance model, PCA,
//! quantization factor), intermediate series documents, task-tagged model
//! bundles and the per-setting hyperparameter presets.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{IngestError, Prototype, SequenceRecord};
use crate::linalg::Matrix;
use crate::lstm::{
    init_network, train, FeatureScaling, LstmError, Network, NetworkConfig, Sample, TrainReport,
    DEFAULT_INIT_SCALE,
};
use crate::signals::{
    build_categorization_series, build_detection_series, fit_distance_model, fit_pca,
    quantize_descriptor, FeatureSetting, PcaModel, QuadraticDistanceModel, SignalError,
    TimeSeries,
};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_QUANTIZATION: u32 = 15;
pub const DEFAULT_RETAINED_VARIANCE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("series {origin} is unlabeled; training requires labels")]
    UnlabeledSeries { origin: String },
    #[error("bundle is a {got} model, expected {expected}")]
    TaskMismatch { expected: Task, got: Task },
    #[error("dataset declares no calibration table, cannot fit the distance model")]
    MissingCalibration,
    #[error("{path}: unknown schema_version {version}")]
    UnknownSchema { path: PathBuf, version: u32 },
    #[error("series document is empty")]
    EmptyDocument,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Detection,
    Categorization,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Detection => f.write_str("detection"),
            Task::Categorization => f.write_str("categorization"),
        }
    }
}

impl From<FeatureSetting> for Task {
    fn from(setting: FeatureSetting) -> Task {
        if setting.is_detection() {
            Task::Detection
        } else {
            Task::Categorization
        }
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Best-performing hyperparameters per feature setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub learning_rate: f64,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub cell_count: usize,
}

pub fn preset_for(setting: FeatureSetting) -> Preset {
    use FeatureSetting::*;
    match setting {
        Sid1 => Preset { learning_rate: 0.001, momentum: 0.7, dropout_rate: 0.0, batch_size: 20, epochs: 50, cell_count: 30 },
        Sid2 => Preset { learning_rate: 0.01, momentum: 0.8, dropout_rate: 0.0, batch_size: 30, epochs: 50, cell_count: 35 },
        Sid3 => Preset { learning_rate: 0.001, momentum: 0.7, dropout_rate: 0.5, batch_size: 50, epochs: 100, cell_count: 30 },
        Sid4 => Preset { learning_rate: 0.001, momentum: 0.5, dropout_rate: 0.0, batch_size: 20, epochs: 100, cell_count: 100 },
        Sic1 => Preset { learning_rate: 0.001, momentum: 0.8, dropout_rate: 0.0, batch_size: 50, epochs: 50, cell_count: 200 },
        Sic2 => Preset { learning_rate: 0.001, momentum: 0.9, dropout_rate: 0.0, batch_size: 50, epochs: 20, cell_count: 150 },
        Sic3 => Preset { learning_rate: 0.01, momentum: 0.8, dropout_rate: 0.5, batch_size: 100, epochs: 50, cell_count: 200 },
    }
}

impl Preset {
    pub fn into_config(self, input_dim: usize, rng_seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            cell_count: self.cell_count,
            dropout_rate: self.dropout_rate,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            rng_seed,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

// ---------------------------------------------------------------------------
// Transforms and series building
// ---------------------------------------------------------------------------

/// The fitted feature transforms a series was (or will be) built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transforms {
    pub setting: FeatureSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_model: Option<QuadraticDistanceModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaModel>,
}

/// Fits whatever the setting needs: the quadratic distance model from the
/// calibration table for detection, or the PCA over the quantized
/// descriptors of every frame for categorization.
pub fn fit_transforms(
    sequences: &[SequenceRecord],
    setting: FeatureSetting,
    q: u32,
    retained_variance: f64,
    calibration: Option<&[(f64, f64)]>,
) -> Result<Transforms, BundleError> {
    if setting.is_detection() {
        let table = calibration.ok_or(BundleError::MissingCalibration)?;
        let model = fit_distance_model(table)?;
        Ok(Transforms { setting, q: None, distance_model: Some(model), pca: None })
    } else {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for sequence in sequences {
            for frame in &sequence.frames {
                let descriptor =
                    frame.descriptor.as_ref().ok_or_else(|| SignalError::MissingDescriptor {
                        sequence_id: sequence.sequence_id.clone(),
                        frame_id: frame.frame_id,
                    })?;
                let as_f64: Vec<f64> = descriptor.iter().map(|&v| v as f64).collect();
                let words = quantize_descriptor(&as_f64, q)?;
                rows.push(words.into_iter().map(|w| w as f64).collect());
            }
        }
        let pca = fit_pca(&Matrix::from_rows(rows), retained_variance)?;
        Ok(Transforms { setting, q: Some(q), distance_model: None, pca: Some(pca) })
    }
}

/// Builds one series per classification unit: per prototype for detection,
/// per sequence for categorization.
pub fn build_series(
    sequences: &[SequenceRecord],
    transforms: &Transforms,
) -> Result<Vec<TimeSeries>, BundleError> {
    let mut out = Vec::new();
    if transforms.setting.is_detection() {
        let model = transforms
            .distance_model
            .as_ref()
            .ok_or(BundleError::MissingCalibration)?;
        for sequence in sequences {
            for prototype in crate::ingest::extract_prototypes(sequence) {
                out.push(build_detection_series(&prototype, model, transforms.setting)?);
            }
        }
    } else {
        let pca = transforms.pca.as_ref().ok_or(BundleError::EmptyDocument)?;
        let q = transforms.q.unwrap_or(DEFAULT_QUANTIZATION);
        for sequence in sequences {
            out.push(build_categorization_series(sequence, pca, q, transforms.setting)?);
        }
    }
    Ok(out)
}

/// Detection series for a single prototype using the bundle's transforms.
pub fn build_prototype_series(
    prototype: &Prototype,
    transforms: &Transforms,
) -> Result<TimeSeries, BundleError> {
    let model =
        transforms.distance_model.as_ref().ok_or(BundleError::MissingCalibration)?;
    Ok(build_detection_series(prototype, model, transforms.setting)?)
}

// ---------------------------------------------------------------------------
// Series document
// ---------------------------------------------------------------------------

/// Intermediate on-disk artifact holding built series together with the
/// transforms that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub transforms: Transforms,
    pub series: Vec<TimeSeries>,
}

impl SeriesDocument {
    pub fn new(transforms: Transforms, series: Vec<TimeSeries>) -> Self {
        SeriesDocument { schema_version: BUNDLE_SCHEMA_VERSION, transforms, series }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), BundleError> {
    let mut text = serde_json::to_string(value)
        .map_err(|e| BundleError::Json { path: path.to_path_buf(), msg: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| BundleError::Io { path: path.to_path_buf(), source: e })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BundleError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text)
        .map_err(|e| BundleError::Json { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn save_series_document(doc: &SeriesDocument, path: &Path) -> Result<(), BundleError> {
    write_json(doc, path)
}

pub fn load_series_document(path: &Path) -> Result<SeriesDocument, BundleError> {
    let doc: SeriesDocument = read_json(path)?;
    if doc.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(BundleError::UnknownSchema {
            path: path.to_path_buf(),
            version: doc.schema_version,
        });
    }
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

/// One trained model per task: configuration, standardization statistics,
/// the transforms the features came from and every weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub task: Task,
    #[serde(flatten)]
    pub transforms: Transforms,
    pub network: Network,
}

impl ModelBundle {
    pub fn expect_task(&self, expected: Task) -> Result<(), BundleError> {
        if self.task != expected {
            return Err(BundleError::TaskMismatch { expected, got: self.task });
        }
        Ok(())
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), BundleError> {
    write_json(bundle, path)
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, BundleError> {
    let bundle: ModelBundle = read_json(path)?;
    if bundle.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(BundleError::UnknownSchema {
            path: path.to_path_buf(),
            version: bundle.schema_version,
        });
    }
    Ok(bundle)
}

/// Labeled view of a series set; fails on the first unlabeled series,
/// naming its origin.
pub fn to_samples(series: &[TimeSeries]) -> Result<Vec<Sample<'_>>, BundleError> {
    series
        .iter()
        .map(|s| match s.label {
            Some(label) => Ok(Sample { series: &s.data, label }),
            None => Err(BundleError::UnlabeledSeries { origin: s.origin.to_string() }),
        })
        .collect()
}

/// Trains a network on a series document and packages the result. When
/// `standardize` is set (the default behavior), per-column z-score
/// statistics are fitted on the training series with the expression-derived
/// columns left raw, and stored with the network.
pub fn train_bundle(
    doc: &SeriesDocument,
    config: &NetworkConfig,
    standardize: bool,
) -> Result<(ModelBundle, TrainReport), BundleError> {
    let first = doc.series.first().ok_or(BundleError::EmptyDocument)?;
    let dim = first.dim();
    let samples = to_samples(&doc.series)?;
    let mut config = config.clone();
    config.input_dim = dim;
    let mut network = init_network(&config)?;
    if standardize {
        let raw = doc.transforms.setting.expression_columns(dim);
        let rows: Vec<&[f64]> = doc.series.iter().flat_map(|s| s.data.iter_rows()).collect();
        let scaling = FeatureScaling::fit(&rows, dim, &raw);
        network.set_scaling(scaling)?;
    }
    let (network, report) = train(network, &samples)?;
    let bundle = ModelBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        task: doc.transforms.setting.into(),
        transforms: doc.transforms.clone(),
        network,
    };
    Ok((bundle, report))
}

/// Frozen augmentation dims for a setting: the expression-derived columns.
pub fn frozen_dims(setting: FeatureSetting, dim: usize) -> BTreeSet<usize> {
    setting.expression_columns(dim).into_iter().collect()
}

/// Parses a preset name like `sid4` or `SIC3`.
pub fn parse_preset(name: &str) -> Result<(FeatureSetting, Preset), String> {
    let setting = FeatureSetting::from_str(name)?;
    Ok((setting, preset_for(setting)))
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::ingest::Category;
    use crate::synth::{generate_dataset, DatasetPlan, DatasetSpec, SceneSpec};

    #[test]
    fn presets_carry_expected_values() {
        let sid4 = preset_for(FeatureSetting::Sid4);
        assert_eq!(sid4.learning_rate, 0.001);
        assert_eq!(sid4.momentum, 0.5);
        assert_eq!(sid4.dropout_rate, 0.0);
        assert_eq!(sid4.batch_size, 20);
        assert_eq!(sid4.epochs, 100);
        assert_eq!(sid4.cell_count, 100);

        let sic3 = preset_for(FeatureSetting::Sic3);
        assert_eq!(sic3.learning_rate, 0.01);
        assert_eq!(sic3.momentum, 0.8);
        assert_eq!(sic3.dropout_rate, 0.5);
        assert_eq!(sic3.batch_size, 100);
        assert_eq!(sic3.epochs, 50);
        assert_eq!(sic3.cell_count, 200);

        let config = sid4.into_config(5, 42);
        config.validate().unwrap();
        assert_eq!(config.input_dim, 5);
        assert_eq!(config.cell_count, 100);

        let (setting, preset) = parse_preset("sid2").unwrap();
        assert_eq!(setting, FeatureSetting::Sid2);
        assert_eq!(preset.batch_size, 30);
        assert!(parse_preset("sidX").is_err());
    }

    fn tiny_dataset(dir: &Path) -> crate::ingest::DatasetManifest {
        let spec = DatasetSpec {
            plans: vec![
                DatasetPlan { spec: SceneSpec::interaction_scene(Category::Informal, 1), count: 4 },
                DatasetPlan { spec: SceneSpec::crowd_scene(1), count: 4 },
            ],
            observation_days: 3,
            person_pool: 4,
            seed: 7,
        };
        generate_dataset(&spec, dir).unwrap()
    }

    #[test]
    fn detection_round_trip_through_documents() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let loaded = crate::ingest::load_sequences(&manifest).unwrap();
        let calibration =
            crate::ingest::load_calibration(&manifest.calibration_path().unwrap()).unwrap();
        let transforms = fit_transforms(
            &loaded.sequences,
            FeatureSetting::Sid4,
            DEFAULT_QUANTIZATION,
            DEFAULT_RETAINED_VARIANCE,
            Some(&calibration),
        )
        .unwrap();
        let series = build_series(&loaded.sequences, &transforms).unwrap();
        assert_eq!(series.len(), 8);
        assert!(series.iter().all(|s| s.dim() == 5));

        let doc = SeriesDocument::new(transforms, series);
        let doc_path = dir.path().join("series.json");
        save_series_document(&doc, &doc_path).unwrap();
        let loaded_doc = load_series_document(&doc_path).unwrap();
        assert_eq!(doc, loaded_doc);

        let config = NetworkConfig { epochs: 3, ..NetworkConfig::basic(5, 4) };
        let (bundle, report) = train_bundle(&loaded_doc, &config, true).unwrap();
        assert_eq!(bundle.task, Task::Detection);
        assert_eq!(report.epoch_mean_loss.len(), 3);

        let bundle_path = dir.path().join("model.json");
        save_bundle(&bundle, &bundle_path).unwrap();
        let restored = load_bundle(&bundle_path).unwrap();
        assert_eq!(bundle, restored);
        restored.expect_task(Task::Detection).unwrap();
        assert!(matches!(
            restored.expect_task(Task::Categorization),
            Err(BundleError::TaskMismatch { .. })
        ));
    }

    #[test]
    fn categorization_transforms_fit_pca() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let loaded = crate::ingest::load_sequences(&manifest).unwrap();
        let transforms =
            fit_transforms(&loaded.sequences, FeatureSetting::Sic3, 15, 0.95, None).unwrap();
        let pca = transforms.pca.as_ref().unwrap();
        assert!(pca.retained_fraction >= 0.95);
        let series = build_series(&loaded.sequences, &transforms).unwrap();
        assert_eq!(series.len(), 8);
        assert!(series.iter().all(|s| s.dim() == pca.output_dim() + 8));
        // Categorization labels exist only for interacting sequences.
        let labeled = series.iter().filter(|s| s.label.is_some()).count();
        assert_eq!(labeled, 4);
    }

    #[test]
    fn unlabeled_series_error_names_first_origin() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let loaded = crate::ingest::load_sequences(&manifest).unwrap();
        let calibration =
            crate::ingest::load_calibration(&manifest.calibration_path().unwrap()).unwrap();
        let transforms =
            fit_transforms(&loaded.sequences, FeatureSetting::Sid1, 15, 0.95, Some(&calibration))
                .unwrap();
        let mut series = build_series(&loaded.sequences, &transforms).unwrap();
        series[2].label = None;
        let origin = series[2].origin.to_string();
        match to_samples(&series) {
            Err(BundleError::UnlabeledSeries { origin: got }) => assert_eq!(got, origin),
            other => panic!("expected UnlabeledSeries, got {other:?}"),
        }
    }

    #[test]
    fn frozen_dims_follow_setting() {
        assert!(frozen_dims(FeatureSetting::Sid1, 2).is_empty());
        assert_eq!(frozen_dims(FeatureSetting::Sid4, 5), [4usize].into_iter().collect());
        assert_eq!(
            frozen_dims(FeatureSetting::Sic3, 43),
            (35..43).collect::<BTreeSet<usize>>()
        );
    }
}
