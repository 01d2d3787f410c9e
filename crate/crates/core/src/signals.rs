//! Frame-level social signals and their assembly into per-prototype
//! detection series and per-sequence categorization series.
//!
//! Detection rows follow the canonical column order
//! `(distance, roll, pitch, yaw, expression index)`; every named setting is
//! a column selection of that maximal layout. Categorization rows are the
//! PCA projection of the quantized scene descriptor, optionally followed by
//! the eight mean expression probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameObservation, Prototype, SequenceRecord};
use crate::linalg::{self, Matrix};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("need at least 3 calibration points with distinct heights, got {got}")]
    TooFewCalibrationPoints { got: usize },
    #[error("calibration design is rank-deficient (duplicate heights only)")]
    FitDegenerate,
    #[error("face height must be positive, got {0}")]
    NonPositiveHeight(f64),
    #[error("expression probabilities sum to {sum}, expected 1")]
    InvalidDistribution { sum: f64 },
    #[error("prototype {sequence_id}/{track_id} has no observations")]
    EmptyPrototype { sequence_id: String, track_id: u32 },
    #[error("quantization factor must be an integer > 1, got {0}")]
    BadQuantizationFactor(u32),
    #[error("cannot quantize a zero vector")]
    ZeroVector,
    #[error("PCA needs at least 2 rows, got {got}")]
    TooFewRows { got: usize },
    #[error("retained variance must lie in (0, 1], got {0}")]
    BadRetainedVariance(f64),
    #[error("data has zero total variance")]
    ConstantData,
    #[error("sequence {sequence_id} frame {frame_id} lacks a global descriptor")]
    MissingDescriptor { sequence_id: String, frame_id: u64 },
    #[error("setting {setting} is not a {expected} setting")]
    WrongTask { setting: FeatureSetting, expected: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("setting {to} cannot be selected out of {from}")]
    IncompatibleSelection { from: FeatureSetting, to: FeatureSetting },
}

// ---------------------------------------------------------------------------
// Feature settings
// ---------------------------------------------------------------------------

/// Named feature combinations for detection (SID1..SID4) and
/// categorization (SIC1..SIC3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSetting {
    #[serde(rename = "SID1")]
    Sid1,
    #[serde(rename = "SID2")]
    Sid2,
    #[serde(rename = "SID3")]
    Sid3,
    #[serde(rename = "SID4")]
    Sid4,
    #[serde(rename = "SIC1")]
    Sic1,
    #[serde(rename = "SIC2")]
    Sic2,
    #[serde(rename = "SIC3")]
    Sic3,
}

impl FeatureSetting {
    pub const ALL: [FeatureSetting; 7] = [
        FeatureSetting::Sid1,
        FeatureSetting::Sid2,
        FeatureSetting::Sid3,
        FeatureSetting::Sid4,
        FeatureSetting::Sic1,
        FeatureSetting::Sic2,
        FeatureSetting::Sic3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSetting::Sid1 => "SID1",
            FeatureSetting::Sid2 => "SID2",
            FeatureSetting::Sid3 => "SID3",
            FeatureSetting::Sid4 => "SID4",
            FeatureSetting::Sic1 => "SIC1",
            FeatureSetting::Sic2 => "SIC2",
            FeatureSetting::Sic3 => "SIC3",
        }
    }

    pub fn is_detection(self) -> bool {
        matches!(
            self,
            FeatureSetting::Sid1 | FeatureSetting::Sid2 | FeatureSetting::Sid3 | FeatureSetting::Sid4
        )
    }

    /// Column indices into the canonical 5-dim detection layout
    /// `(distance, roll, pitch, yaw, expression)`.
    pub fn detection_columns(self) -> &'static [usize] {
        match self {
            FeatureSetting::Sid1 => &[0, 3],
            FeatureSetting::Sid2 => &[0, 1, 2, 3],
            FeatureSetting::Sid3 => &[0, 3, 4],
            FeatureSetting::Sid4 => &[0, 1, 2, 3, 4],
            _ => &[],
        }
    }

    /// Series dimension; categorization settings depend on the PCA output.
    pub fn dim(self, pca_dim: usize) -> usize {
        match self {
            FeatureSetting::Sic1 | FeatureSetting::Sic2 => pca_dim,
            FeatureSetting::Sic3 => pca_dim + 8,
            detection => detection.detection_columns().len(),
        }
    }

    /// Columns holding expression-derived values for a series of the given
    /// total dimension. These stay raw under standardization and frozen
    /// under augmentation.
    pub fn expression_columns(self, series_dim: usize) -> Vec<usize> {
        match self {
            FeatureSetting::Sid3 => vec![2],
            FeatureSetting::Sid4 => vec![4],
            FeatureSetting::Sic3 => (series_dim - 8..series_dim).collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for FeatureSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureSetting::ALL
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown feature setting {s:?} (expected SID1..SID4 or SIC1..SIC3)"))
    }
}

// ---------------------------------------------------------------------------
// Time series
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesOrigin {
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u32>,
}

impl fmt::Display for SeriesOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.track_id {
            Some(t) => write!(f, "{}/{}", self.sequence_id, t),
            None => f.write_str(&self.sequence_id),
        }
    }
}

/// Where an augmented copy came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentProvenance {
    pub copy_index: usize,
    pub rng_seed: u64,
}

/// Fixed-dimension per-frame feature matrix for one classification unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub setting: FeatureSetting,
    pub origin: SeriesOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<AugmentProvenance>,
    pub data: Matrix,
}

impl TimeSeries {
    pub fn timesteps(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// Derives a sub-setting series by column selection, mirroring how the
/// maximal setting is built once and narrower settings are sliced from it.
pub fn select_setting(series: &TimeSeries, target: FeatureSetting) -> Result<TimeSeries, SignalError> {
    let incompatible = || SignalError::IncompatibleSelection { from: series.setting, to: target };
    let cols: Vec<usize> = if series.setting.is_detection() && target.is_detection() {
        let source = series.setting.detection_columns();
        target
            .detection_columns()
            .iter()
            .map(|want| source.iter().position(|have| have == want).ok_or_else(incompatible))
            .collect::<Result<_, _>>()?
    } else if !series.setting.is_detection() && !target.is_detection() {
        let dim = series.dim();
        let pca_dim = match series.setting {
            FeatureSetting::Sic3 => dim - 8,
            _ => dim,
        };
        match target {
            FeatureSetting::Sic1 | FeatureSetting::Sic2 => (0..pca_dim).collect(),
            FeatureSetting::Sic3 if series.setting == FeatureSetting::Sic3 => (0..dim).collect(),
            _ => return Err(incompatible()),
        }
    } else {
        return Err(incompatible());
    };
    Ok(TimeSeries {
        setting: target,
        origin: series.origin.clone(),
        label: series.label,
        provenance: series.provenance.clone(),
        data: series.data.select_columns(&cols),
    })
}

// ---------------------------------------------------------------------------
// Distance model
// ---------------------------------------------------------------------------

/// Least-squares quadratic `distance_cm = a·h² + b·h + c` over face height
/// in pixels, valid within the calibrated height range plus a margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDistanceModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root-mean-square fit residual in cm.
    pub residual_rms: f64,
    pub height_range: (f64, f64),
    /// Heights this far outside the calibrated range are flagged as
    /// extrapolations (fraction of the range span).
    pub extrapolation_margin: f64,
}

pub const DEFAULT_EXTRAPOLATION_MARGIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceEstimate {
    pub distance_cm: f64,
    /// Set when the height fell outside the trusted range or the raw
    /// polynomial went negative and was clamped.
    pub extrapolated: bool,
}

pub fn fit_distance_model(
    calibration: &[(f64, f64)],
) -> Result<QuadraticDistanceModel, SignalError> {
    let mut heights: Vec<f64> = calibration.iter().map(|&(h, _)| h).collect();
    heights.sort_by(f64::total_cmp);
    heights.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if calibration.len() < 3 {
        return Err(SignalError::TooFewCalibrationPoints { got: calibration.len() });
    }
    if heights.len() < 3 {
        return Err(SignalError::FitDegenerate);
    }

    // Normal equations on centered, scaled heights; raw pixel heights make
    // the Vandermonde gram too ill-conditioned to pivot reliably.
    let mean: f64 = calibration.iter().map(|&(h, _)| h).sum::<f64>() / calibration.len() as f64;
    let spread = calibration
        .iter()
        .map(|&(h, _)| (h - mean).abs())
        .fold(0.0f64, f64::max);
    if spread <= 0.0 {
        return Err(SignalError::FitDegenerate);
    }
    let mut gram = Matrix::zeros(3, 3);
    let mut rhs = [0.0f64; 3];
    for &(h, d) in calibration {
        let u = (h - mean) / spread;
        let basis = [u * u, u, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                gram.set(i, j, gram.get(i, j) + basis[i] * basis[j]);
            }
            rhs[i] += basis[i] * d;
        }
    }
    let scaled = linalg::solve(&gram, &rhs).ok_or(SignalError::FitDegenerate)?;
    // d = α·u² + β·u + γ with u = (h − m)/s, expanded back to powers of h.
    let (alpha, beta, gamma) = (scaled[0], scaled[1], scaled[2]);
    let coef = [
        alpha / (spread * spread),
        beta / spread - 2.0 * mean * alpha / (spread * spread),
        gamma - mean * beta / spread + mean * mean * alpha / (spread * spread),
    ];

    let mut sq_sum = 0.0;
    for &(h, d) in calibration {
        let fit = coef[0] * h * h + coef[1] * h + coef[2];
        sq_sum += (fit - d) * (fit - d);
    }
    let residual_rms = (sq_sum / calibration.len() as f64).sqrt();

    let min = calibration.iter().map(|&(h, _)| h).fold(f64::INFINITY, f64::min);
    let max = calibration.iter().map(|&(h, _)| h).fold(f64::NEG_INFINITY, f64::max);
    Ok(QuadraticDistanceModel {
        a: coef[0],
        b: coef[1],
        c: coef[2],
        residual_rms,
        height_range: (min, max),
        extrapolation_margin: DEFAULT_EXTRAPOLATION_MARGIN,
    })
}

impl QuadraticDistanceModel {
    /// Distance in cm for a face height in pixels, clamped to ≥ 0.
    pub fn estimate(&self, face_height_px: f64) -> Result<DistanceEstimate, SignalError> {
        if face_height_px <= 0.0 || !face_height_px.is_finite() {
            return Err(SignalError::NonPositiveHeight(face_height_px));
        }
        let raw = self.a * face_height_px * face_height_px + self.b * face_height_px + self.c;
        let (lo, hi) = self.height_range;
        let margin = (hi - lo) * self.extrapolation_margin;
        let out_of_range = face_height_px < lo - margin || face_height_px > hi + margin;
        Ok(DistanceEstimate {
            distance_cm: raw.max(0.0),
            extrapolated: out_of_range || raw < 0.0,
        })
    }
}

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

fn check_distribution(probs: &[f64; 8]) -> Result<(), SignalError> {
    let mut sum = 0.0;
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(SignalError::InvalidDistribution { sum: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > crate::ingest::DISTRIBUTION_TOL {
        return Err(SignalError::InvalidDistribution { sum });
    }
    Ok(())
}

/// Index of the dominant expression, 1 (neutral) .. 8 (contempt); ties go
/// to the lowest index.
pub fn dominant_expression(probs: &[f64; 8]) -> Result<usize, SignalError> {
    check_distribution(probs)?;
    let mut best = 0usize;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    Ok(best + 1)
}

/// Componentwise mean expression over the faces of one frame. A frame with
/// no faces maps to the neutral one-hot.
pub fn mean_expression(observations: &[FrameObservation]) -> [f64; 8] {
    if observations.is_empty() {
        let mut out = [0.0; 8];
        out[0] = 1.0;
        return out;
    }
    let mut out = [0.0; 8];
    for obs in observations {
        for (o, p) in out.iter_mut().zip(&obs.expression_probs) {
            *o += p;
        }
    }
    let n = observations.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

// ---------------------------------------------------------------------------
// Detection series
// ---------------------------------------------------------------------------

/// Per-frame rows for one prototype, with occlusion gaps filled by carrying
/// the last observed row forward (the first observed row backward for
/// leading gaps). Rows cover every frame of the owning sequence.
pub fn build_detection_series(
    prototype: &Prototype,
    model: &QuadraticDistanceModel,
    setting: FeatureSetting,
) -> Result<TimeSeries, SignalError> {
    if !setting.is_detection() {
        return Err(SignalError::WrongTask { setting, expected: "detection" });
    }
    if prototype.observations.is_empty() {
        return Err(SignalError::EmptyPrototype {
            sequence_id: prototype.sequence_id.clone(),
            track_id: prototype.track_id,
        });
    }

    let mut by_frame: BTreeMap<u64, [f64; 5]> = BTreeMap::new();
    for obs in &prototype.observations {
        let distance = model.estimate(obs.face_height)?.distance_cm;
        let expr = dominant_expression(&obs.expression_probs)? as f64;
        by_frame.insert(obs.frame_id, [distance, obs.roll, obs.pitch, obs.yaw, expr]);
    }

    let frames: Vec<u64> = if prototype.sequence_frames.is_empty() {
        by_frame.keys().copied().collect()
    } else {
        prototype.sequence_frames.clone()
    };

    let first_row = *by_frame.values().next().expect("non-empty prototype");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(frames.len());
    let mut last = first_row;
    for frame_id in frames {
        if let Some(row) = by_frame.get(&frame_id) {
            last = *row;
        }
        rows.push(last.to_vec());
    }

    let full = Matrix::from_rows(rows);
    let data = full.select_columns(setting.detection_columns());
    Ok(TimeSeries {
        setting,
        origin: SeriesOrigin {
            sequence_id: prototype.sequence_id.clone(),
            track_id: Some(prototype.track_id),
        },
        label: prototype.label,
        provenance: None,
        data,
    })
}

// ---------------------------------------------------------------------------
// Descriptor quantization and PCA
// ---------------------------------------------------------------------------

/// `w_k = ⌊Q·f_k⌋` over the L2-normalized input; negative components floor
/// toward −∞.
pub fn quantize_descriptor(descriptor: &[f64], q: u32) -> Result<Vec<i64>, SignalError> {
    if q < 2 {
        return Err(SignalError::BadQuantizationFactor(q));
    }
    let norm = linalg::l2_norm(descriptor);
    if norm == 0.0 || !norm.is_finite() {
        return Err(SignalError::ZeroVector);
    }
    Ok(descriptor.iter().map(|&f| (q as f64 * f / norm).floor() as i64).collect())
}

/// Principal components retaining a configured fraction of variance.
/// Component rows are orthonormal, ordered by descending variance, with the
/// sign fixed so each component's largest-magnitude entry is positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `output_dim × input_dim`, one component per row.
    pub components: Matrix,
    /// Variance captured by each retained component.
    pub variances: Vec<f64>,
    pub retained_fraction: f64,
    pub threshold: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, SignalError> {
        if x.len() != self.input_dim() {
            return Err(SignalError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let mut out = vec![0.0; self.output_dim()];
        self.components.matvec(&centered, &mut out);
        Ok(out)
    }

    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>, SignalError> {
        if y.len() != self.output_dim() {
            return Err(SignalError::DimensionMismatch { expected: self.output_dim(), got: y.len() });
        }
        let mut out = self.mean.clone();
        self.components.matvec_transpose_add(y, &mut out);
        Ok(out)
    }
}

fn fix_component_signs(components: &mut Matrix) {
    for r in 0..components.rows() {
        let row = components.row_mut(r);
        let mut best = 0usize;
        for (k, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = k;
            }
        }
        if row[best] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Fits PCA on the rows of `data`, keeping the smallest component count
/// whose cumulative variance reaches `retained_variance`. When the input
/// dimension exceeds the sample count the equivalent Gram-matrix
/// eigenproblem is solved instead of the full covariance.
pub fn fit_pca(data: &Matrix, retained_variance: f64) -> Result<PcaModel, SignalError> {
    let n = data.rows();
    let d = data.cols();
    if n < 2 {
        return Err(SignalError::TooFewRows { got: n });
    }
    if !(retained_variance > 0.0 && retained_variance <= 1.0) {
        return Err(SignalError::BadRetainedVariance(retained_variance));
    }

    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut centered = Matrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            centered.set(r, c, data.get(r, c) - mean[c]);
        }
    }

    let denom = (n - 1) as f64;
    let total_variance: f64 =
        centered.as_slice().iter().map(|v| v * v).sum::<f64>() / denom;
    if total_variance <= 1e-300 {
        return Err(SignalError::ConstantData);
    }

    // (eigenvalue, component row) pairs in descending eigenvalue order.
    let (eigenvalues, mut components): (Vec<f64>, Matrix) = if d <= n {
        let mut cov = Matrix::zeros(d, d);
        for row in centered.iter_rows() {
            cov.add_outer(row, row);
        }
        for v in cov.as_mut_slice() {
            *v /= denom;
        }
        let eig = linalg::sym_eigen(&cov);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let mut gram = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = linalg::dot(centered.row(i), centered.row(j));
                gram.set(i, j, v);
                gram.set(j, i, v);
            }
        }
        let eig = linalg::sym_eigen(&gram);
        let scale = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let rank_tol = scale * 1e-12;
        let mut values = Vec::new();
        let mut rows = Vec::new();
        for (idx, &s) in eig.eigenvalues.iter().enumerate() {
            if s <= rank_tol {
                break;
            }
            let u = eig.eigenvectors.row(idx);
            let mut v = vec![0.0; d];
            centered.matvec_transpose_add(u, &mut v);
            let inv = 1.0 / s.sqrt();
            for x in &mut v {
                *x *= inv;
            }
            values.push(s / denom);
            rows.push(v);
        }
        (values, Matrix::from_rows(rows))
    };

    let mut cumulative = 0.0;
    let mut keep = 0usize;
    let target = retained_variance * total_variance - 1e-12 * total_variance;
    for &lambda in &eigenvalues {
        cumulative += lambda.max(0.0);
        keep += 1;
        if cumulative >= target {
            break;
        }
    }
    if keep == 0 {
        return Err(SignalError::ConstantData);
    }

    let kept_rows: Vec<Vec<f64>> = (0..keep).map(|r| components.row(r).to_vec()).collect();
    components = Matrix::from_rows(kept_rows);
    fix_component_signs(&mut components);
    let variances: Vec<f64> = eigenvalues[..keep].iter().map(|&l| l.max(0.0)).collect();
    let retained_fraction = variances.iter().sum::<f64>() / total_variance;

    Ok(PcaModel { mean, components, variances, retained_fraction, threshold: retained_variance })
}

// ---------------------------------------------------------------------------
// Categorization series
// ---------------------------------------------------------------------------

/// Per-frame categorization rows: quantized descriptor projected through
/// the PCA, plus the mean expression vector for SIC3. Fails fast on any
/// frame without a descriptor.
pub fn build_categorization_series(
    sequence: &SequenceRecord,
    pca: &PcaModel,
    q: u32,
    setting: FeatureSetting,
) -> Result<TimeSeries, SignalError> {
    if setting.is_detection() {
        return Err(SignalError::WrongTask { setting, expected: "categorization" });
    }
    let mut rows = Vec::with_capacity(sequence.frames.len());
    for frame in &sequence.frames {
        let descriptor = frame.descriptor.as_ref().ok_or_else(|| SignalError::MissingDescriptor {
            sequence_id: sequence.sequence_id.clone(),
            frame_id: frame.frame_id,
        })?;
        let as_f64: Vec<f64> = descriptor.iter().map(|&v| v as f64).collect();
        let words = quantize_descriptor(&as_f64, q)?;
        let word_f: Vec<f64> = words.iter().map(|&w| w as f64).collect();
        let mut row = pca.project(&word_f)?;
        if setting == FeatureSetting::Sic3 {
            row.extend_from_slice(&mean_expression(&frame.observations));
        }
        rows.push(row);
    }
    let label = sequence
        .labels
        .as_ref()
        .and_then(|l| l.category)
        .map(|c| c == crate::ingest::Category::Formal);
    Ok(TimeSeries {
        setting,
        origin: SeriesOrigin { sequence_id: sequence.sequence_id.clone(), track_id: None },
        label,
        provenance: None,
        data: Matrix::from_rows(rows),
    })
}
