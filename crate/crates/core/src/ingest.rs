//! On-disk dataset format: a manifest document referencing per-sequence
//! line-delimited records, a calibration table, optional identity ground
//! truth and optional binary descriptor sidecars.
//!
//! The canonical layout for heavy scene descriptors is a sidecar file of
//! little-endian 32-bit floats (row-major, one row per frame that carries a
//! descriptor) plus a JSON index mapping `frame_id` to row. Descriptors may
//! alternatively be stored inline as number arrays.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Order of the eight expression probabilities everywhere in the pipeline.
pub const EXPRESSIONS: [&str; 8] = [
    "neutral", "happiness", "surprise", "sadness", "anger", "disgust", "fear", "contempt",
];

pub const SCHEMA_VERSION: u32 = 1;

/// Probability vectors must sum to one within this tolerance.
pub const DISTRIBUTION_TOL: f64 = 1e-6;

/// Embeddings must be unit-norm within this tolerance.
pub const EMBEDDING_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: unknown schema_version {version} (expected {SCHEMA_VERSION})")]
    UnknownSchema { path: PathBuf, version: u32 },
    #[error("{manifest}: referenced file does not exist: {referenced}")]
    DanglingReference { manifest: PathBuf, referenced: PathBuf },
    #[error("sequence {sequence_id} frame {frame_id}: malformed record: {msg}")]
    MalformedRecord { sequence_id: String, frame_id: u64, msg: String },
    #[error(
        "sequence {sequence_id} frame {frame_id}: expression probabilities sum to {sum}, \
         expected 1 within {DISTRIBUTION_TOL}"
    )]
    InvalidDistribution { sequence_id: String, frame_id: u64, sum: f64 },
    #[error("duplicate sequence_id {0}")]
    DuplicateSequence(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Formal vs informal meeting category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Formal,
    Informal,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Formal => write!(f, "formal"),
            Category::Informal => write!(f, "informal"),
        }
    }
}

/// One tracked face in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_id: u64,
    pub track_id: u32,
    /// Vertical face height in pixels, > 0.
    pub face_height: f64,
    /// Normalized horizontal position in [0, 1]. Carried but not used by
    /// the classifiers.
    pub x_pos: f64,
    /// Head orientation in degrees, each within [-90, 90].
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Eight probabilities in [`EXPRESSIONS`] order, summing to 1.
    pub expression_probs: [f64; 8],
    /// Unit-norm face embedding for cross-event clustering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl FrameObservation {
    fn validate(&self, sequence_id: &str) -> Result<(), IngestError> {
        let bad = |msg: String| IngestError::MalformedRecord {
            sequence_id: sequence_id.to_string(),
            frame_id: self.frame_id,
            msg,
        };
        if self.face_height <= 0.0 || !self.face_height.is_finite() {
            return Err(bad(format!("face_height {} must be > 0", self.face_height)));
        }
        if !(0.0..=1.0).contains(&self.x_pos) {
            return Err(bad(format!("x_pos {} outside [0, 1]", self.x_pos)));
        }
        for (name, v) in [("yaw", self.yaw), ("pitch", self.pitch), ("roll", self.roll)] {
            if !(-90.0..=90.0).contains(&v) {
                return Err(bad(format!("{name} {v} outside [-90, 90] degrees")));
            }
        }
        let mut sum = 0.0;
        for &p in &self.expression_probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(format!("expression probability {p} outside [0, 1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(IngestError::InvalidDistribution {
                sequence_id: sequence_id.to_string(),
                frame_id: self.frame_id,
                sum,
            });
        }
        if let Some(e) = &self.embedding {
            let norm: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > EMBEDDING_NORM_TOL {
                return Err(bad(format!("embedding norm {norm} not unit within {EMBEDDING_NORM_TOL}")));
            }
        }
        Ok(())
    }
}

/// Ground-truth labels attached to a sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceLabels {
    /// Per-track interaction state.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub interacting: BTreeMap<u32, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

/// One frame of a sequence: optional global scene descriptor plus zero or
/// more tracked faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<FrameObservation>,
}

/// One candidate social event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub day_index: u32,
    pub frame_interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<SequenceLabels>,
    pub frames: Vec<FrameEntry>,
}

impl SequenceRecord {
    pub fn frame_ids(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }

    pub fn track_ids(&self) -> BTreeSet<u32> {
        self.frames
            .iter()
            .flat_map(|f| f.observations.iter().map(|o| o.track_id))
            .collect()
    }

    /// Checks every record invariant; returns human-readable warnings for
    /// soft violations (sequence length outside the expected 20..=60).
    pub fn validate(&self) -> Result<Vec<String>, IngestError> {
        let mut warnings = Vec::new();
        let mut last_frame: Option<u64> = None;
        for frame in &self.frames {
            if let Some(prev) = last_frame {
                if frame.frame_id <= prev {
                    return Err(IngestError::MalformedRecord {
                        sequence_id: self.sequence_id.clone(),
                        frame_id: frame.frame_id,
                        msg: format!("frame ids not strictly increasing (previous {prev})"),
                    });
                }
            }
            last_frame = Some(frame.frame_id);

            let mut seen_tracks = BTreeSet::new();
            for obs in &frame.observations {
                if obs.frame_id != frame.frame_id {
                    return Err(IngestError::MalformedRecord {
                        sequence_id: self.sequence_id.clone(),
                        frame_id: frame.frame_id,
                        msg: format!("observation frame_id {} disagrees with frame", obs.frame_id),
                    });
                }
                if !seen_tracks.insert(obs.track_id) {
                    return Err(IngestError::MalformedRecord {
                        sequence_id: self.sequence_id.clone(),
                        frame_id: frame.frame_id,
                        msg: format!("track {} observed twice in one frame", obs.track_id),
                    });
                }
                obs.validate(&self.sequence_id)?;
            }
        }
        let n = self.frames.len();
        if !(20..=60).contains(&n) {
            warnings.push(format!(
                "sequence {}: {} frames, outside the expected 20..=60 range",
                self.sequence_id, n
            ));
        }
        Ok(warnings)
    }
}

/// The time-ordered observations of one tracked person within one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub sequence_id: String,
    pub track_id: u32,
    /// Frame ids of the whole owning sequence, in order. Series builders
    /// need them to place occlusion gaps.
    pub sequence_frames: Vec<u64>,
    pub observations: Vec<FrameObservation>,
    /// Interaction ground truth when the sequence is labeled.
    pub label: Option<bool>,
}

/// One prototype per distinct track, observations in frame order.
pub fn extract_prototypes(sequence: &SequenceRecord) -> Vec<Prototype> {
    let frame_ids = sequence.frame_ids();
    let mut by_track: BTreeMap<u32, Vec<FrameObservation>> = BTreeMap::new();
    for frame in &sequence.frames {
        for obs in &frame.observations {
            by_track.entry(obs.track_id).or_default().push(obs.clone());
        }
    }
    by_track
        .into_iter()
        .map(|(track_id, observations)| Prototype {
            sequence_id: sequence.sequence_id.clone(),
            track_id,
            sequence_frames: frame_ids.clone(),
            observations,
            label: sequence
                .labels
                .as_ref()
                .and_then(|l| l.interacting.get(&track_id).copied()),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// The manifest document as written on disk. Paths are relative to the
/// manifest file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub schema_version: u32,
    pub observation_days: u32,
    pub sequences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_table: Option<String>,
    /// Feature settings this dataset can serve (e.g. SIC* only when frames
    /// carry descriptors).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub settings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor_dim: Option<usize>,
    /// Optional ground-truth person identities for clustering calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<String>,
}

/// A loaded manifest with its on-disk location, so relative references can
/// be resolved to absolute paths.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub doc: ManifestDoc,
}

impl DatasetManifest {
    pub fn sequence_paths(&self) -> Vec<PathBuf> {
        self.doc.sequences.iter().map(|s| self.root.join(s)).collect()
    }

    pub fn calibration_path(&self) -> Option<PathBuf> {
        self.doc.calibration_table.as_ref().map(|s| self.root.join(s))
    }

    pub fn identities_path(&self) -> Option<PathBuf> {
        self.doc.identities.as_ref().map(|s| self.root.join(s))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IngestError::UnknownSchema {
            path: path.to_path_buf(),
            version: doc.schema_version,
        });
    }
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let root = root.canonicalize().map_err(io_err(&root))?;
    let manifest = DatasetManifest { root, doc };

    let mut referenced: Vec<PathBuf> = manifest.sequence_paths();
    referenced.extend(manifest.calibration_path());
    referenced.extend(manifest.identities_path());
    for file in referenced {
        if !file.exists() {
            return Err(IngestError::DanglingReference {
                manifest: path.to_path_buf(),
                referenced: file,
            });
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &ManifestDoc, path: &Path) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Sequence files
// ---------------------------------------------------------------------------

/// How a sequence file stores its descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DescriptorRef {
    /// Number arrays directly on the frame lines.
    Inline,
    /// Little-endian f32 sidecar plus a frame_id → row index document.
    Sidecar { data: String, index: String, dim: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SequenceHeader {
    sequence_id: String,
    day_index: u32,
    frame_interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<SequenceLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptors: Option<DescriptorRef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FrameLine {
    frame_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptor: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    observations: Vec<FrameObservation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SidecarIndex {
    dim: usize,
    rows: BTreeMap<u64, usize>,
}

fn read_sidecar(
    dir: &Path,
    data_file: &str,
    index_file: &str,
    dim: usize,
) -> Result<BTreeMap<u64, Vec<f32>>, IngestError> {
    let index_path = dir.join(index_file);
    let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let index: SidecarIndex = serde_json::from_str(&text).map_err(|e| IngestError::Parse {
        path: index_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if index.dim != dim {
        return Err(IngestError::Parse {
            path: index_path,
            line: 1,
            msg: format!("index dim {} disagrees with header dim {}", index.dim, dim),
        });
    }
    let data_path = dir.join(data_file);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let expected = index.rows.len() * dim * 4;
    if bytes.len() != expected {
        return Err(IngestError::Parse {
            path: data_path,
            line: 0,
            msg: format!("sidecar holds {} bytes, expected {expected}", bytes.len()),
        });
    }
    let mut out = BTreeMap::new();
    for (&frame_id, &row) in &index.rows {
        let start = row * dim * 4;
        let mut v = Vec::with_capacity(dim);
        for k in 0..dim {
            let off = start + k * 4;
            let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            v.push(f32::from_le_bytes(raw));
        }
        out.insert(frame_id, v);
    }
    Ok(out)
}

/// Loads one line-delimited sequence file, resolving any sidecar.
pub fn load_sequence_file(path: &Path) -> Result<SequenceRecord, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| IngestError::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: "empty sequence file".to_string(),
    })?;
    let first = first.map_err(io_err(path))?;
    let header: SequenceHeader = serde_json::from_str(&first).map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("bad header: {e}"),
    })?;

    let sidecar = match &header.descriptors {
        Some(DescriptorRef::Sidecar { data, index, dim }) => {
            Some(read_sidecar(dir, data, index, *dim)?)
        }
        _ => None,
    };

    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameLine = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let descriptor = match &sidecar {
            Some(map) => map.get(&parsed.frame_id).cloned(),
            None => parsed.descriptor,
        };
        frames.push(FrameEntry { frame_id: parsed.frame_id, descriptor, observations: parsed.observations });
    }

    let record = SequenceRecord {
        sequence_id: header.sequence_id,
        day_index: header.day_index,
        frame_interval_s: header.frame_interval_s,
        labels: header.labels,
        frames,
    };
    Ok(record)
}

/// Writes a sequence in canonical form: descriptors go to an f32 sidecar
/// (named `<stem>.f32` / `<stem>.idx.json`) whenever any frame carries one.
pub fn save_sequence_file(record: &SequenceRecord, path: &Path) -> Result<(), IngestError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| record.sequence_id.clone());

    let dim = record
        .frames
        .iter()
        .find_map(|f| f.descriptor.as_ref().map(Vec::len));

    let descriptors = dim.map(|dim| DescriptorRef::Sidecar {
        data: format!("{stem}.f32"),
        index: format!("{stem}.idx.json"),
        dim,
    });

    if let Some(DescriptorRef::Sidecar { data, index, dim }) = &descriptors {
        let mut rows = BTreeMap::new();
        let mut bytes: Vec<u8> = Vec::new();
        let mut row = 0usize;
        for frame in &record.frames {
            if let Some(desc) = &frame.descriptor {
                if desc.len() != *dim {
                    return Err(IngestError::MalformedRecord {
                        sequence_id: record.sequence_id.clone(),
                        frame_id: frame.frame_id,
                        msg: format!("descriptor dim {} != {}", desc.len(), dim),
                    });
                }
                for &v in desc {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                rows.insert(frame.frame_id, row);
                row += 1;
            }
        }
        let data_path = dir.join(data);
        fs::write(&data_path, bytes).map_err(io_err(&data_path))?;
        let index_path = dir.join(index);
        let mut text =
            serde_json::to_string(&SidecarIndex { dim: *dim, rows }).expect("index serializes");
        text.push('\n');
        fs::write(&index_path, text).map_err(io_err(&index_path))?;
    }

    let header = SequenceHeader {
        sequence_id: record.sequence_id.clone(),
        day_index: record.day_index,
        frame_interval_s: record.frame_interval_s,
        labels: record.labels.clone(),
        descriptors,
    };

    let mut out = fs::File::create(path).map_err(io_err(path))?;
    let mut buf = serde_json::to_string(&header).expect("header serializes");
    buf.push('\n');
    for frame in &record.frames {
        let line = FrameLine {
            frame_id: frame.frame_id,
            descriptor: None,
            observations: frame.observations.clone(),
        };
        buf.push_str(&serde_json::to_string(&line).expect("frame serializes"));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes()).map_err(io_err(path))
}

/// All sequences of a dataset, sorted by id, plus soft-validation warnings.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub sequences: Vec<SequenceRecord>,
    pub warnings: Vec<String>,
}

/// Loads and validates every sequence referenced by the manifest. The
/// result is independent of the file order in the manifest.
pub fn load_sequences(manifest: &DatasetManifest) -> Result<LoadedDataset, IngestError> {
    let mut sequences = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    for path in manifest.sequence_paths() {
        let record = load_sequence_file(&path)?;
        if !seen.insert(record.sequence_id.clone()) {
            return Err(IngestError::DuplicateSequence(record.sequence_id));
        }
        warnings.extend(record.validate()?);
        sequences.push(record);
    }
    sequences.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
    Ok(LoadedDataset { sequences, warnings })
}

// ---------------------------------------------------------------------------
// Calibration table and identities
// ---------------------------------------------------------------------------

/// Text table of `(face_height_px, distance_cm)` pairs, one per line,
/// `#` comments allowed.
pub fn load_calibration(path: &Path) -> Result<Vec<(f64, f64)>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |s: Option<&str>| -> Result<f64, IngestError> {
            s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| IngestError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected `height_px distance_cm`, got {line:?}"),
            })
        };
        let h = parse(parts.next())?;
        let d = parse(parts.next())?;
        out.push((h, d));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub sequence_id: String,
    pub track_id: u32,
    pub person: String,
}

/// Ground-truth person label per (sequence, track).
pub fn load_identities(path: &Path) -> Result<BTreeMap<(String, u32), String>, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let entries: Vec<IdentityEntry> = serde_json::from_str(&text).map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    Ok(entries
        .into_iter()
        .map(|e| ((e.sequence_id, e.track_id), e.person))
        .collect())
}

pub fn save_identities(entries: &[IdentityEntry], path: &Path) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(entries).expect("identities serialize");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
