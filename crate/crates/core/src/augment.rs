//! Label-preserving augmentation of training time-series: an
//! eigendecomposition of the frame-row covariance supplies directions, and
//! each augmented copy adds, per frame, eigenvectors scaled by their
//! eigenvalue times a small Gaussian draw. Discrete and probability
//! columns (the expression signals) are frozen and copied bit-exact.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::signals::{AugmentProvenance, TimeSeries};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("need at least 2 frames across the series set, got {got}")]
    TooFewFrames { got: usize },
    #[error("frozen column {index} is outside the series dimension {dim}")]
    FrozenOutOfRange { index: usize, dim: usize },
    #[error("non-frozen columns have zero covariance")]
    ZeroCovariance,
    #[error("series dimension {got} does not match the eigenbasis dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("multiplier must be at least 1")]
    BadMultiplier,
    #[error("series set is empty")]
    EmptySet,
}

/// How many copies to emit per source series and how to perturb them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Output size is `multiplier · N`; copy 0 of each series is the
    /// unperturbed original.
    pub multiplier: usize,
    /// Standard deviation of the per-(component, frame) Gaussian draw.
    pub noise_sigma: f64,
    /// Column indices copied verbatim.
    pub frozen_dims: BTreeSet<usize>,
    pub rng_seed: u64,
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

/// Eigenvectors and eigenvalues of the covariance over the non-frozen
/// columns of every frame row in the fitted set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenbasis {
    /// Non-frozen column indices, ascending; its length is K.
    pub active_dims: Vec<usize>,
    /// Full series dimension the basis was fitted on.
    pub series_dim: usize,
    /// `K × K`, one eigenvector per row, descending eigenvalue order.
    pub eigenvectors: Matrix,
    pub eigenvalues: Vec<f64>,
}

/// Eigendecomposition of the K×K covariance of all frame rows restricted
/// to non-frozen columns.
pub fn fit_eigenbasis(
    set: &[TimeSeries],
    frozen_dims: &BTreeSet<usize>,
) -> Result<Eigenbasis, AugmentError> {
    let first = set.first().ok_or(AugmentError::EmptySet)?;
    let dim = first.dim();
    for &f in frozen_dims {
        if f >= dim {
            return Err(AugmentError::FrozenOutOfRange { index: f, dim });
        }
    }
    for series in set {
        if series.dim() != dim {
            return Err(AugmentError::DimensionMismatch { expected: dim, got: series.dim() });
        }
    }
    let active_dims: Vec<usize> = (0..dim).filter(|d| !frozen_dims.contains(d)).collect();
    let k = active_dims.len();

    let total_frames: usize = set.iter().map(TimeSeries::timesteps).sum();
    if total_frames < 2 {
        return Err(AugmentError::TooFewFrames { got: total_frames });
    }

    let mut mean = vec![0.0; k];
    for series in set {
        for row in series.data.iter_rows() {
            for (m, &d) in mean.iter_mut().zip(&active_dims) {
                *m += row[d];
            }
        }
    }
    for m in &mut mean {
        *m /= total_frames as f64;
    }

    let mut cov = Matrix::zeros(k, k);
    let mut centered = vec![0.0; k];
    for series in set {
        for row in series.data.iter_rows() {
            for (c, (&d, m)) in centered.iter_mut().zip(active_dims.iter().zip(&mean)) {
                *c = row[d] - m;
            }
            cov.add_outer(&centered, &centered);
        }
    }
    for v in cov.as_mut_slice() {
        *v /= (total_frames - 1) as f64;
    }

    let eig = linalg::sym_eigen(&cov);
    if eig.eigenvalues.iter().all(|&l| l <= 1e-300) {
        return Err(AugmentError::ZeroCovariance);
    }
    let mut eigenvectors = eig.eigenvectors;
    fix_signs(&mut eigenvectors);
    Ok(Eigenbasis {
        active_dims,
        series_dim: dim,
        eigenvectors,
        eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
    })
}

fn fix_signs(vectors: &mut Matrix) {
    for r in 0..vectors.rows() {
        let row = vectors.row_mut(r);
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

/// θ draws of one augmented copy, for oracle-style verification.
#[derive(Clone, Debug)]
pub struct ThetaTrace {
    pub source_index: usize,
    pub copy_index: usize,
    /// `frames × K` draws.
    pub theta: Matrix,
}

fn series_rng(seed: u64, series_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(series_index as u64 + 1);
    rng
}

fn augment_one(
    series: &TimeSeries,
    basis: &Eigenbasis,
    spec: &AugmentSpec,
    series_index: usize,
    record_theta: bool,
) -> (Vec<TimeSeries>, Vec<ThetaTrace>) {
    let k = basis.active_dims.len();
    let frames = series.timesteps();
    let mut rng = series_rng(spec.rng_seed, series_index);
    let mut copies = Vec::with_capacity(spec.multiplier);
    let mut traces = Vec::new();

    for copy_index in 0..spec.multiplier {
        let mut copy = series.clone();
        copy.provenance = Some(AugmentProvenance { copy_index, rng_seed: spec.rng_seed });
        if copy_index == 0 {
            // Copy 0 keeps the original data so augmentation never
            // discards real samples.
            copies.push(copy);
            continue;
        }
        let mut theta = Matrix::zeros(frames, k);
        for t in 0..frames {
            for j in 0..k {
                theta.set(t, j, gaussian(&mut rng) * spec.noise_sigma);
            }
        }
        for t in 0..frames {
            let mut delta = vec![0.0; k];
            for j in 0..k {
                let scale = theta.get(t, j) * basis.eigenvalues[j];
                if scale == 0.0 {
                    continue;
                }
                for (d, &e) in delta.iter_mut().zip(basis.eigenvectors.row(j)) {
                    *d += scale * e;
                }
            }
            let row = copy.data.row_mut(t);
            for (j, &dim) in basis.active_dims.iter().enumerate() {
                row[dim] += delta[j];
            }
        }
        if record_theta {
            traces.push(ThetaTrace { source_index: series_index, copy_index, theta });
        }
        copies.push(copy);
    }
    (copies, traces)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Emits `multiplier` copies of every series (copy 0 unperturbed), frozen
/// columns bit-exact, labels carried over. Deterministic for a fixed seed:
/// each source series draws from its own derived stream, so parallel and
/// serial runs agree.
pub fn augment(
    set: &[TimeSeries],
    basis: &Eigenbasis,
    spec: &AugmentSpec,
) -> Result<Vec<TimeSeries>, AugmentError> {
    Ok(augment_impl(set, basis, spec, false)?.0)
}

/// Like [`augment`] but also returns the θ draws per perturbed copy so a
/// scalar oracle can reproduce the arithmetic.
pub fn augment_traced(
    set: &[TimeSeries],
    basis: &Eigenbasis,
    spec: &AugmentSpec,
) -> Result<(Vec<TimeSeries>, Vec<ThetaTrace>), AugmentError> {
    augment_impl(set, basis, spec, true)
}

fn augment_impl(
    set: &[TimeSeries],
    basis: &Eigenbasis,
    spec: &AugmentSpec,
    record_theta: bool,
) -> Result<(Vec<TimeSeries>, Vec<ThetaTrace>), AugmentError> {
    if spec.multiplier < 1 {
        return Err(AugmentError::BadMultiplier);
    }
    if set.is_empty() {
        return Err(AugmentError::EmptySet);
    }
    for series in set {
        if series.dim() != basis.series_dim {
            return Err(AugmentError::DimensionMismatch {
                expected: basis.series_dim,
                got: series.dim(),
            });
        }
    }
    let per_series: Vec<(Vec<TimeSeries>, Vec<ThetaTrace>)> = set
        .par_iter()
        .enumerate()
        .map(|(idx, series)| augment_one(series, basis, spec, idx, record_theta))
        .collect();

    let mut out = Vec::with_capacity(set.len() * spec.multiplier);
    let mut traces = Vec::new();
    for (copies, t) in per_series {
        out.extend(copies);
        traces.extend(t);
    }
    Ok((out, traces))
}
