//! From-scratch vanilla gated recurrent classifier for variable-length
//! time-series: input, forget and output gates, peephole connections, a
//! single sigmoid output neuron read at the final timestep, log loss,
//! exact full backpropagation through time (no truncation) and classical
//! momentum SGD over whole-sequence batches.
//!
//! Peephole convention: the input and forget gates read the previous cell
//! state, the output gate reads the freshly updated one. There is no full
//! gate recurrence and no gate-internal dropout; the single dropout layer
//! sits between the hidden state and the output neuron (inverted form).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const PROBABILITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("series dimension {got} does not match network input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("series must have at least one timestep")]
    EmptySeries,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite value encountered during {0}")]
    NumericalFailure(&'static str),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize, report: Box<TrainReport> },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("stratified {folds}-fold split needs at least {folds} series per class, got {got} for class {class}")]
    InsufficientFolds { folds: usize, class: bool, got: usize },
}

// ---------------------------------------------------------------------------
// Configuration, scaling, parameters
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub cell_count: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Sequences per parameter update; sequences are processed one by one,
    /// never padded, and their gradients averaged.
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub init_scale: f64,
}

pub const DEFAULT_INIT_SCALE: f64 = 0.08;

impl NetworkConfig {
    /// Small sensible defaults for tests and quick experiments.
    pub fn basic(input_dim: usize, cell_count: usize) -> Self {
        NetworkConfig {
            input_dim,
            cell_count,
            dropout_rate: 0.0,
            learning_rate: 0.01,
            momentum: 0.5,
            batch_size: 8,
            epochs: 50,
            rng_seed: 0,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let bad = |msg: String| Err(LstmError::BadConfig(msg));
        if self.input_dim == 0 || self.cell_count == 0 {
            return bad("input_dim and cell_count must be positive".into());
        }
        if !(0.0..=0.9).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 0.9]", self.dropout_rate));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.init_scale < 0.0 || !self.init_scale.is_finite() {
            return bad(format!("init_scale {} must be >= 0", self.init_scale));
        }
        Ok(())
    }
}

/// Per-column z-score statistics applied to every input row. Columns whose
/// values are categorical (the expression index, probability blocks) are
/// fitted as identity so they pass through raw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaling {
    pub fn identity(dim: usize) -> Self {
        FeatureScaling { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fits mean/std over the given rows; `raw_columns` keep identity
    /// statistics.
    pub fn fit(rows: &[&[f64]], dim: usize, raw_columns: &[usize]) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return FeatureScaling::identity(dim);
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(*row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std: Vec<f64> = var.iter().map(|s| (s / count as f64).sqrt()).collect();
        for s in &mut std {
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        for &c in raw_columns {
            mean[c] = 0.0;
            std[c] = 1.0;
        }
        FeatureScaling { mean, std }
    }

    fn apply_into(&self, row: &[f64], out: &mut [f64]) {
        for k in 0..row.len() {
            out[k] = (row[k] - self.mean[k]) / self.std[k];
        }
    }
}

/// Every trainable parameter of the network. The same shape doubles as the
/// gradient bundle and the momentum velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    /// Cell-input (block input) weights, `cells × input_dim`.
    pub w_cell: Matrix,
    pub w_igate: Matrix,
    pub w_fgate: Matrix,
    pub w_ogate: Matrix,
    /// Recurrent weights, `cells × cells`.
    pub r_cell: Matrix,
    pub r_igate: Matrix,
    pub r_fgate: Matrix,
    pub r_ogate: Matrix,
    /// Diagonal peephole weights.
    pub p_igate: Vec<f64>,
    pub p_fgate: Vec<f64>,
    pub p_ogate: Vec<f64>,
    pub b_cell: Vec<f64>,
    pub b_igate: Vec<f64>,
    pub b_fgate: Vec<f64>,
    pub b_ogate: Vec<f64>,
    /// Output layer, `cells → 1`.
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl ParamSet {
    pub fn zeros(input_dim: usize, cells: usize) -> Self {
        ParamSet {
            w_cell: Matrix::zeros(cells, input_dim),
            w_igate: Matrix::zeros(cells, input_dim),
            w_fgate: Matrix::zeros(cells, input_dim),
            w_ogate: Matrix::zeros(cells, input_dim),
            r_cell: Matrix::zeros(cells, cells),
            r_igate: Matrix::zeros(cells, cells),
            r_fgate: Matrix::zeros(cells, cells),
            r_ogate: Matrix::zeros(cells, cells),
            p_igate: vec![0.0; cells],
            p_fgate: vec![0.0; cells],
            p_ogate: vec![0.0; cells],
            b_cell: vec![0.0; cells],
            b_igate: vec![0.0; cells],
            b_fgate: vec![0.0; cells],
            b_ogate: vec![0.0; cells],
            w_out: vec![0.0; cells],
            b_out: 0.0,
        }
    }

    fn blocks(&self) -> [&[f64]; 17] {
        [
            self.w_cell.as_slice(),
            self.w_igate.as_slice(),
            self.w_fgate.as_slice(),
            self.w_ogate.as_slice(),
            self.r_cell.as_slice(),
            self.r_igate.as_slice(),
            self.r_fgate.as_slice(),
            self.r_ogate.as_slice(),
            &self.p_igate,
            &self.p_fgate,
            &self.p_ogate,
            &self.b_cell,
            &self.b_igate,
            &self.b_fgate,
            &self.b_ogate,
            &self.w_out,
            std::slice::from_ref(&self.b_out),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 17] {
        [
            self.w_cell.as_mut_slice(),
            self.w_igate.as_mut_slice(),
            self.w_fgate.as_mut_slice(),
            self.w_ogate.as_mut_slice(),
            self.r_cell.as_mut_slice(),
            self.r_igate.as_mut_slice(),
            self.r_fgate.as_mut_slice(),
            self.r_ogate.as_mut_slice(),
            &mut self.p_igate,
            &mut self.p_fgate,
            &mut self.p_ogate,
            &mut self.b_cell,
            &mut self.b_igate,
            &mut self.b_fgate,
            &mut self.b_ogate,
            &mut self.w_out,
            std::slice::from_mut(&mut self.b_out),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Parameters in a fixed, documented order (input weights, recurrent
    /// weights, peepholes, biases, output layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in self.blocks() {
            out.extend_from_slice(block);
        }
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for block in self.blocks_mut() {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for v in block {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Gradients share the parameter layout.
pub type Gradients = ParamSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub scaling: FeatureScaling,
    params: ParamSet,
}

/// Weights uniform in `[-init_scale, init_scale]` from the seeded
/// generator, then the forget-gate bias forced to 1 so memory survives the
/// first updates. Deterministic for a fixed seed.
pub fn init_network(config: &NetworkConfig) -> Result<Network, LstmError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut params = ParamSet::zeros(config.input_dim, config.cell_count);
    let s = config.init_scale;
    for block in params.blocks_mut() {
        for v in block {
            *v = rng.random_range(-s..=s);
        }
    }
    for b in &mut params.b_fgate {
        *b = 1.0;
    }
    Ok(Network {
        config: config.clone(),
        scaling: FeatureScaling::identity(config.input_dim),
        params,
    })
}

impl Network {
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_scaling(&mut self, scaling: FeatureScaling) -> Result<(), LstmError> {
        if scaling.mean.len() != self.config.input_dim {
            return Err(LstmError::DimensionMismatch {
                expected: self.config.input_dim,
                got: scaling.mean.len(),
            });
        }
        self.scaling = scaling;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Multiplicative factors applied to the final hidden state before the
/// output layer. Sampling yields `0` or `1/(1-rate)` (inverted dropout), so
/// an all-ones mask makes train mode identical to eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

impl DropoutMask {
    pub fn ones(cells: usize) -> Self {
        DropoutMask(vec![1.0; cells])
    }

    pub fn sample(rate: f64, cells: usize, rng: &mut impl Rng) -> Self {
        debug_assert!((0.0..=0.9).contains(&rate));
        if rate == 0.0 {
            return DropoutMask::ones(cells);
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        DropoutMask(
            (0..cells)
                .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Forward and backward passes
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepTrace {
    x: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    z: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn run_forward(
    network: &Network,
    series: &Matrix,
    trace: Option<&mut Vec<StepTrace>>,
) -> Result<(Vec<f64>, Vec<f64>), LstmError> {
    let cfg = &network.config;
    if series.cols() != cfg.input_dim {
        return Err(LstmError::DimensionMismatch { expected: cfg.input_dim, got: series.cols() });
    }
    if series.rows() == 0 {
        return Err(LstmError::EmptySeries);
    }
    let h_dim = cfg.cell_count;
    let p = &network.params;

    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut x = vec![0.0; cfg.input_dim];
    let mut pre_i = vec![0.0; h_dim];
    let mut pre_f = vec![0.0; h_dim];
    let mut pre_z = vec![0.0; h_dim];
    let mut pre_o = vec![0.0; h_dim];
    let mut trace = trace;

    for t in 0..series.rows() {
        network.scaling.apply_into(series.row(t), &mut x);

        p.w_igate.matvec(&x, &mut pre_i);
        p.r_igate.matvec_add(&h, &mut pre_i);
        p.w_fgate.matvec(&x, &mut pre_f);
        p.r_fgate.matvec_add(&h, &mut pre_f);
        p.w_cell.matvec(&x, &mut pre_z);
        p.r_cell.matvec_add(&h, &mut pre_z);
        p.w_ogate.matvec(&x, &mut pre_o);
        p.r_ogate.matvec_add(&h, &mut pre_o);

        let mut step = StepTrace {
            x: if trace.is_some() { x.clone() } else { Vec::new() },
            i: vec![0.0; h_dim],
            f: vec![0.0; h_dim],
            z: vec![0.0; h_dim],
            o: vec![0.0; h_dim],
            c: vec![0.0; h_dim],
            tanh_c: vec![0.0; h_dim],
            h: vec![0.0; h_dim],
        };
        for k in 0..h_dim {
            let c_prev = c[k];
            let i_k = sigmoid(pre_i[k] + p.p_igate[k] * c_prev + p.b_igate[k]);
            let f_k = sigmoid(pre_f[k] + p.p_fgate[k] * c_prev + p.b_fgate[k]);
            let z_k = (pre_z[k] + p.b_cell[k]).tanh();
            let c_k = f_k * c_prev + i_k * z_k;
            let o_k = sigmoid(pre_o[k] + p.p_ogate[k] * c_k + p.b_ogate[k]);
            let tanh_c = c_k.tanh();
            c[k] = c_k;
            h[k] = o_k * tanh_c;
            step.i[k] = i_k;
            step.f[k] = f_k;
            step.z[k] = z_k;
            step.o[k] = o_k;
            step.c[k] = c_k;
            step.tanh_c[k] = tanh_c;
            step.h[k] = h[k];
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(step);
        }
    }
    if h.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(LstmError::NumericalFailure("forward recurrence"));
    }
    Ok((h, c))
}

/// Probability that the series belongs to the positive class. A dropout
/// mask, when given, multiplies the final hidden state (train mode);
/// without one the pass is deterministic eval mode.
pub fn forward(
    network: &Network,
    series: &Matrix,
    dropout: Option<&DropoutMask>,
) -> Result<f64, LstmError> {
    let (h, _) = run_forward(network, series, None)?;
    let p = readout(network, &h, dropout)?;
    Ok(p)
}

fn readout(network: &Network, h: &[f64], dropout: Option<&DropoutMask>) -> Result<f64, LstmError> {
    let params = &network.params;
    let mut a = params.b_out;
    match dropout {
        Some(mask) => {
            debug_assert_eq!(mask.0.len(), h.len());
            for ((w, hv), m) in params.w_out.iter().zip(h).zip(&mask.0) {
                a += w * hv * m;
            }
        }
        None => {
            for (w, hv) in params.w_out.iter().zip(h) {
                a += w * hv;
            }
        }
    }
    let p = sigmoid(a);
    if !p.is_finite() {
        return Err(LstmError::NumericalFailure("output layer"));
    }
    Ok(p)
}

/// Log loss with the probability clamped away from 0 and 1.
pub fn log_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Exact gradients of the log loss with respect to every parameter,
/// unrolled over all timesteps.
pub fn compute_gradients(
    network: &Network,
    series: &Matrix,
    label: bool,
    dropout: Option<&DropoutMask>,
) -> Result<(Gradients, f64), LstmError> {
    let cfg = &network.config;
    let h_dim = cfg.cell_count;
    let params = &network.params;

    let mut steps: Vec<StepTrace> = Vec::with_capacity(series.rows());
    run_forward(network, series, Some(&mut steps))?;
    let timesteps = steps.len();
    let h_last = &steps[timesteps - 1].h;
    let p = readout(network, h_last, dropout)?;
    let loss = log_loss(p, label);
    if !loss.is_finite() {
        return Err(LstmError::NumericalFailure("loss"));
    }

    let mut grads = ParamSet::zeros(cfg.input_dim, h_dim);

    // d(loss)/d(output pre-activation) for the sigmoid + log-loss pair.
    let da = p - if label { 1.0 } else { 0.0 };
    let ones;
    let mask = match dropout {
        Some(m) => &m.0,
        None => {
            ones = vec![1.0; h_dim];
            &ones
        }
    };
    for k in 0..h_dim {
        grads.w_out[k] = da * h_last[k] * mask[k];
    }
    grads.b_out = da;

    // Carried from t+1 while walking backwards.
    let mut dpre_i_next = vec![0.0; h_dim];
    let mut dpre_f_next = vec![0.0; h_dim];
    let mut dpre_z_next = vec![0.0; h_dim];
    let mut dpre_o_next = vec![0.0; h_dim];
    let mut dc_next = vec![0.0; h_dim];

    let mut dh = vec![0.0; h_dim];
    let mut dc = vec![0.0; h_dim];
    let mut dpre_i = vec![0.0; h_dim];
    let mut dpre_f = vec![0.0; h_dim];
    let mut dpre_z = vec![0.0; h_dim];
    let mut dpre_o = vec![0.0; h_dim];

    for t in (0..timesteps).rev() {
        let step = &steps[t];
        let last_step = t == timesteps - 1;

        for v in dh.iter_mut() {
            *v = 0.0;
        }
        if last_step {
            for k in 0..h_dim {
                dh[k] = da * params.w_out[k] * mask[k];
            }
        } else {
            params.r_cell.matvec_transpose_add(&dpre_z_next, &mut dh);
            params.r_igate.matvec_transpose_add(&dpre_i_next, &mut dh);
            params.r_fgate.matvec_transpose_add(&dpre_f_next, &mut dh);
            params.r_ogate.matvec_transpose_add(&dpre_o_next, &mut dh);
        }

        for k in 0..h_dim {
            let o = step.o[k];
            dpre_o[k] = dh[k] * step.tanh_c[k] * o * (1.0 - o);
        }
        for k in 0..h_dim {
            let mut v = dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k])
                + params.p_ogate[k] * dpre_o[k];
            if !last_step {
                let f_next = steps[t + 1].f[k];
                v += dc_next[k] * f_next
                    + params.p_igate[k] * dpre_i_next[k]
                    + params.p_fgate[k] * dpre_f_next[k];
            }
            dc[k] = v;
        }
        let c_prev_of = |k: usize| if t == 0 { 0.0 } else { steps[t - 1].c[k] };
        for k in 0..h_dim {
            let i = step.i[k];
            let f = step.f[k];
            let z = step.z[k];
            dpre_i[k] = dc[k] * z * i * (1.0 - i);
            dpre_f[k] = dc[k] * c_prev_of(k) * f * (1.0 - f);
            dpre_z[k] = dc[k] * i * (1.0 - z * z);
        }

        grads.w_cell.add_outer(&dpre_z, &step.x);
        grads.w_igate.add_outer(&dpre_i, &step.x);
        grads.w_fgate.add_outer(&dpre_f, &step.x);
        grads.w_ogate.add_outer(&dpre_o, &step.x);
        if t > 0 {
            let h_prev = &steps[t - 1].h;
            grads.r_cell.add_outer(&dpre_z, h_prev);
            grads.r_igate.add_outer(&dpre_i, h_prev);
            grads.r_fgate.add_outer(&dpre_f, h_prev);
            grads.r_ogate.add_outer(&dpre_o, h_prev);
        }
        for k in 0..h_dim {
            grads.b_cell[k] += dpre_z[k];
            grads.b_igate[k] += dpre_i[k];
            grads.b_fgate[k] += dpre_f[k];
            grads.b_ogate[k] += dpre_o[k];
            grads.p_igate[k] += dpre_i[k] * c_prev_of(k);
            grads.p_fgate[k] += dpre_f[k] * c_prev_of(k);
            grads.p_ogate[k] += dpre_o[k] * step.c[k];
        }

        std::mem::swap(&mut dpre_i_next, &mut dpre_i);
        std::mem::swap(&mut dpre_f_next, &mut dpre_f);
        std::mem::swap(&mut dpre_z_next, &mut dpre_z);
        std::mem::swap(&mut dpre_o_next, &mut dpre_o);
        std::mem::swap(&mut dc_next, &mut dc);
    }

    if !grads.is_finite() {
        return Err(LstmError::NumericalFailure("backward pass"));
    }
    Ok((grads, loss))
}

/// Eval-mode prediction: `(label, probability)` with ties at 0.5 going to
/// the positive class.
pub fn predict(network: &Network, series: &Matrix) -> Result<(bool, f64), LstmError> {
    let p = forward(network, series, None)?;
    Ok((p >= 0.5, p))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// One labeled training series.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub series: &'a Matrix,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_mean_loss: Vec<f64>,
    pub final_train_accuracy: f64,
    pub wall_clock_s: f64,
    pub rng_seed: u64,
}

/// Classical momentum SGD over whole-sequence batches:
/// `v ← momentum·v − lr·ḡ`, `w ← w + v` with ḡ the mean gradient of the
/// batch. Per-sequence gradients may be computed in parallel; they are
/// reduced in index order so results do not depend on the thread count.
pub fn train(network: Network, data: &[Sample<'_>]) -> Result<(Network, TrainReport), LstmError> {
    let started = Instant::now();
    let mut network = network;
    let cfg = network.config.clone();
    cfg.validate()?;
    if data.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    for sample in data {
        if sample.series.cols() != cfg.input_dim {
            return Err(LstmError::DimensionMismatch {
                expected: cfg.input_dim,
                got: sample.series.cols(),
            });
        }
        if sample.series.rows() == 0 {
            return Err(LstmError::EmptySeries);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(0x5eed));
    let mut velocity = ParamSet::zeros(cfg.input_dim, cfg.cell_count);
    let mut epoch_mean_loss = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        // Fisher-Yates with the epoch rng; main thread only, so the
        // schedule is identical no matter how gradients are computed.
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let masks: Vec<Option<DropoutMask>> = batch
                .iter()
                .map(|_| {
                    if cfg.dropout_rate > 0.0 {
                        Some(DropoutMask::sample(cfg.dropout_rate, cfg.cell_count, &mut rng))
                    } else {
                        None
                    }
                })
                .collect();

            let results: Vec<Result<(Gradients, f64), LstmError>> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&idx, mask)| {
                    compute_gradients(&network, data[idx].series, data[idx].label, mask.as_ref())
                })
                .collect();

            let mut mean_grad = ParamSet::zeros(cfg.input_dim, cfg.cell_count);
            let mut ok = true;
            for result in results {
                match result {
                    Ok((grad, loss)) if loss.is_finite() => {
                        mean_grad.add_assign(&grad);
                        loss_sum += loss;
                    }
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                let report = TrainReport {
                    epoch_mean_loss,
                    final_train_accuracy: f64::NAN,
                    wall_clock_s: started.elapsed().as_secs_f64(),
                    rng_seed: cfg.rng_seed,
                };
                return Err(LstmError::Diverged { epoch, report: Box::new(report) });
            }
            mean_grad.scale(1.0 / batch.len() as f64);

            let params = network.params.blocks_mut();
            let vel = velocity.blocks_mut();
            for (block_idx, (w_block, v_block)) in params.into_iter().zip(vel).enumerate() {
                let g_block = mean_grad.blocks()[block_idx];
                for ((w, v), g) in w_block.iter_mut().zip(v_block.iter_mut()).zip(g_block) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g;
                    *w += *v;
                }
            }
        }
        let mean = loss_sum / data.len() as f64;
        if !mean.is_finite() {
            let report = TrainReport {
                epoch_mean_loss,
                final_train_accuracy: f64::NAN,
                wall_clock_s: started.elapsed().as_secs_f64(),
                rng_seed: cfg.rng_seed,
            };
            return Err(LstmError::Diverged { epoch, report: Box::new(report) });
        }
        epoch_mean_loss.push(mean);
    }

    let mut correct = 0usize;
    for sample in data {
        let (label, _) = predict(&network, sample.series)?;
        if label == sample.label {
            correct += 1;
        }
    }
    let report = TrainReport {
        epoch_mean_loss,
        final_train_accuracy: correct as f64 / data.len() as f64,
        wall_clock_s: started.elapsed().as_secs_f64(),
        rng_seed: cfg.rng_seed,
    };
    Ok((network, report))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

/// Standard precision / recall / accuracy; empty denominators (no predicted
/// or no actual positives) yield 0.
pub fn evaluate(network: &Network, data: &[Sample<'_>]) -> Result<Metrics, LstmError> {
    if data.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    let (mut tp, mut fp, mut fn_count, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for sample in data {
        let (predicted, _) = predict(network, sample.series)?;
        match (predicted, sample.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_count += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_count, tn))
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_count: usize, tn: usize) -> Metrics {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Metrics {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_count,
            true_negatives: tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_count),
            accuracy: ratio(tp + tn, tp + fp + fn_count + tn),
        }
    }
}

// ---------------------------------------------------------------------------
// Grid search with stratified cross-validation
// ---------------------------------------------------------------------------

/// One hyperparameter axis: pinned, an explicit candidate list, or a
/// log-uniform sampled interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Axis {
    Fixed(f64),
    Values(Vec<f64>),
    LogRange { lo: f64, hi: f64 },
}

impl Axis {
    /// Deterministic log-uniform spacing. A zero lower bound contributes an
    /// exact 0 followed by log-spaced points from `hi/30` up to `hi`.
    fn samples(&self, count: usize) -> Vec<f64> {
        match self {
            Axis::Fixed(v) => vec![*v],
            Axis::Values(vs) => vs.clone(),
            Axis::LogRange { lo, hi } => {
                let count = count.max(1);
                if *lo == 0.0 {
                    let mut out = vec![0.0];
                    if count > 1 {
                        out.extend(log_spaced(hi / 30.0, *hi, count - 1));
                    }
                    return out;
                }
                log_spaced(*lo, *hi, count)
            }
        }
    }

    fn integer_samples(&self, count: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.samples(count).into_iter().map(|v| v.round().max(1.0) as usize).collect();
        out.dedup();
        out
    }
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let ratio = hi / lo;
    (0..count).map(|j| lo * ratio.powf(j as f64 / (count - 1) as f64)).collect()
}

/// Search intervals per hyperparameter axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Axis,
    pub momentum: Axis,
    pub dropout: Axis,
    pub batch_size: Axis,
    pub epochs: Axis,
    pub cells: Axis,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: Axis::LogRange { lo: 1e-4, hi: 0.1 },
            momentum: Axis::LogRange { lo: 0.1, hi: 0.9 },
            dropout: Axis::LogRange { lo: 0.0, hi: 0.9 },
            batch_size: Axis::LogRange { lo: 100.0, hi: 1000.0 },
            epochs: Axis::LogRange { lo: 10.0, hi: 100.0 },
            cells: Axis::LogRange { lo: 10.0, hi: 200.0 },
        }
    }
}

impl SearchSpace {
    /// Cartesian candidate grid, outermost axis first: learning rate,
    /// momentum, dropout, batch size, epochs, cells.
    pub fn candidates(
        &self,
        samples_per_axis: usize,
        input_dim: usize,
        rng_seed: u64,
    ) -> Vec<NetworkConfig> {
        let lrs = self.learning_rate.samples(samples_per_axis);
        let moms = self.momentum.samples(samples_per_axis);
        let drops = self.dropout.samples(samples_per_axis);
        let batches = self.batch_size.integer_samples(samples_per_axis);
        let epochs = self.epochs.integer_samples(samples_per_axis);
        let cells = self.cells.integer_samples(samples_per_axis);

        let mut out = Vec::new();
        for &lr in &lrs {
            for &mom in &moms {
                for &drop in &drops {
                    for &batch in &batches {
                        for &ep in &epochs {
                            for &cell in &cells {
                                out.push(NetworkConfig {
                                    input_dim,
                                    cell_count: cell,
                                    dropout_rate: drop,
                                    learning_rate: lr,
                                    momentum: mom,
                                    batch_size: batch,
                                    epochs: ep,
                                    rng_seed,
                                    init_scale: DEFAULT_INIT_SCALE,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config: NetworkConfig,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub folds: usize,
    pub rows: Vec<CvRow>,
}

fn mix_seed(base: u64, candidate: usize, fold: usize) -> u64 {
    // splitmix64 over the combined identifiers.
    let mut z = base ^ (candidate as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (fold as u64).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Grid search with stratified k-fold cross-validation over the training
/// set. The best candidate maximizes mean validation accuracy; ties break
/// toward fewer cells, then fewer epochs, then grid order.
pub fn grid_search(
    data: &[Sample<'_>],
    space: &SearchSpace,
    folds: usize,
    samples_per_axis: usize,
    rng_seed: u64,
) -> Result<(NetworkConfig, CvTable), LstmError> {
    if data.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    let folds = folds.max(2);
    let input_dim = data[0].series.cols();

    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    for (idx, sample) in data.iter().enumerate() {
        if sample.label {
            positives.push(idx);
        } else {
            negatives.push(idx);
        }
    }
    for (class, members) in [(true, &positives), (false, &negatives)] {
        if members.len() < folds {
            return Err(LstmError::InsufficientFolds { folds, class, got: members.len() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(0xf01d));
    for class in [&mut positives, &mut negatives] {
        for i in (1..class.len()).rev() {
            let j = rng.random_range(0..=i);
            class.swap(i, j);
        }
    }
    let mut fold_of = vec![0usize; data.len()];
    for (pos, &idx) in positives.iter().enumerate() {
        fold_of[idx] = pos % folds;
    }
    for (pos, &idx) in negatives.iter().enumerate() {
        fold_of[idx] = pos % folds;
    }

    let candidates = space.candidates(samples_per_axis, input_dim, rng_seed);
    let mut rows = Vec::with_capacity(candidates.len());
    for (candidate_idx, base_config) in candidates.iter().enumerate() {
        let mut fold_accuracies = Vec::with_capacity(folds);
        for fold in 0..folds {
            let train_set: Vec<Sample<'_>> = data
                .iter()
                .enumerate()
                .filter(|(idx, _)| fold_of[*idx] != fold)
                .map(|(_, s)| *s)
                .collect();
            let val_set: Vec<Sample<'_>> = data
                .iter()
                .enumerate()
                .filter(|(idx, _)| fold_of[*idx] == fold)
                .map(|(_, s)| *s)
                .collect();
            let mut config = base_config.clone();
            config.rng_seed = mix_seed(rng_seed, candidate_idx, fold);
            let network = init_network(&config)?;
            let (trained, _) = train(network, &train_set)?;
            let metrics = evaluate(&trained, &val_set)?;
            fold_accuracies.push(metrics.accuracy);
        }
        let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;
        rows.push(CvRow { config: base_config.clone(), fold_accuracies, mean_accuracy });
    }

    let best = rows
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.mean_accuracy
                .partial_cmp(&b.mean_accuracy)
                .unwrap()
                .then(b.config.cell_count.cmp(&a.config.cell_count))
                .then(b.config.epochs.cmp(&a.config.epochs))
                .then(ib.cmp(ia))
        })
        .map(|(_, row)| row.config.clone())
        .expect("non-empty candidate grid");

    Ok((best, CvTable { folds, rows }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_series(value: f64, len: usize) -> Matrix {
        Matrix::from_rows(vec![vec![value]; len])
    }

    fn separable_data() -> Vec<(Matrix, bool)> {
        let mut out = Vec::new();
        for k in 0..10 {
            out.push((constant_series(1.0, 3 + k % 6), true));
            out.push((constant_series(-1.0, 4 + k % 5), false));
        }
        out
    }

    fn samples(data: &[(Matrix, bool)]) -> Vec<Sample<'_>> {
        data.iter().map(|(m, l)| Sample { series: m, label: *l }).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let config = NetworkConfig::basic(5, 7);
        let a = init_network(&config).unwrap();
        let b = init_network(&config).unwrap();
        assert_eq!(a, b);
        let mut config2 = config.clone();
        config2.rng_seed = 1;
        let c = init_network(&config2).unwrap();
        assert_ne!(a.params().flatten(), c.params().flatten());
    }

    #[test]
    fn init_shapes_and_forget_bias() {
        let config = NetworkConfig { cell_count: 100, ..NetworkConfig::basic(5, 100) };
        let net = init_network(&config).unwrap();
        assert_eq!(net.params().w_out.len(), 100);
        assert_eq!(net.params().w_cell.rows(), 100);
        assert_eq!(net.params().w_cell.cols(), 5);
        assert!(net.params().b_fgate.iter().all(|&b| b == 1.0));

        let zero = NetworkConfig { init_scale: 0.0, ..NetworkConfig::basic(3, 4) };
        let net = init_network(&zero).unwrap();
        for (idx, block) in net.params().blocks().iter().enumerate() {
            // Block 13 is the forget-gate bias.
            let expect = if idx == 13 { 1.0 } else { 0.0 };
            assert!(block.iter().all(|&v| v == expect), "block {idx}");
        }
    }

    #[test]
    fn forward_all_zero_weights_gives_half() {
        let config = NetworkConfig { init_scale: 0.0, ..NetworkConfig::basic(3, 4) };
        let mut net = init_network(&config).unwrap();
        // Forget bias forced to zero as well for this check.
        for b in &mut net.params_mut().b_fgate {
            *b = 0.0;
        }
        let series = Matrix::from_rows(vec![vec![0.3, -0.7, 2.0]; 9]);
        let p = forward(&net, &series, None).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn forward_matches_hand_computed_single_cell_step() {
        let config = NetworkConfig { init_scale: 0.0, ..NetworkConfig::basic(1, 1) };
        let mut net = init_network(&config).unwrap();
        {
            let p = net.params_mut();
            p.w_cell.set(0, 0, 0.3);
            p.w_igate.set(0, 0, 0.5);
            p.w_fgate.set(0, 0, -0.2);
            p.w_ogate.set(0, 0, 0.4);
            p.p_igate[0] = 0.7;
            p.p_fgate[0] = 0.6;
            p.p_ogate[0] = 0.25;
            p.b_cell[0] = 0.1;
            p.b_igate[0] = -0.3;
            p.b_fgate[0] = 1.0;
            p.b_ogate[0] = 0.2;
            p.w_out[0] = 1.5;
            p.b_out = -0.1;
        }
        let series = Matrix::from_rows(vec![vec![0.8]]);
        let p = forward(&net, &series, None).unwrap();

        // Independent arithmetic for one cell, one step (c0 = h0 = 0).
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let i = sig(0.5 * 0.8 - 0.3);
        let z = (0.3 * 0.8 + 0.1f64).tanh();
        let c = i * z;
        let o = sig(0.4 * 0.8 + 0.25 * c + 0.2);
        let h = o * c.tanh();
        let expect = sig(1.5 * h - 0.1);
        assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
    }

    #[test]
    fn dropout_mask_of_ones_is_identity() {
        let config =
            NetworkConfig { dropout_rate: 0.5, rng_seed: 3, ..NetworkConfig::basic(2, 6) };
        let net = init_network(&config).unwrap();
        let series = Matrix::from_rows(vec![vec![0.4, -0.2]; 12]);
        let eval = forward(&net, &series, None).unwrap();
        let masked = forward(&net, &series, Some(&DropoutMask::ones(6))).unwrap();
        assert_eq!(eval, masked);
    }

    #[test]
    fn loss_at_half_is_ln2() {
        assert!((log_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(0.0, true).is_finite());
        assert!(log_loss(1.0, false).is_finite());
    }

    fn finite_difference_check(seed: u64, timesteps: usize, dropout: Option<DropoutMask>) -> f64 {
        let config = NetworkConfig {
            rng_seed: seed,
            init_scale: 0.4,
            ..NetworkConfig::basic(3, 4)
        };
        let net = init_network(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let rows: Vec<Vec<f64>> =
            (0..timesteps).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let series = Matrix::from_rows(rows);
        let label = seed.is_multiple_of(2);

        let (grads, _) = compute_gradients(&net, &series, label, dropout.as_ref()).unwrap();
        let analytic = grads.flatten();
        let base_flat = net.params().flatten();
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for k in 0..base_flat.len() {
            let mut probe = net.clone();
            let mut flat = base_flat.clone();
            flat[k] += eps;
            probe.params_mut().assign_from_flat(&flat);
            let plus = log_loss(forward(&probe, &series, dropout.as_ref()).unwrap(), label);
            flat[k] -= 2.0 * eps;
            probe.params_mut().assign_from_flat(&flat);
            let minus = log_loss(forward(&probe, &series, dropout.as_ref()).unwrap(), label);
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            let err = finite_difference_check(seed, 10, None);
            assert!(err < 1e-5, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout_mask() {
        let mask = DropoutMask(vec![2.0, 0.0, 2.0, 0.0]);
        let err = finite_difference_check(11, 6, Some(mask));
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradients_on_length_one_series() {
        let err = finite_difference_check(5, 1, None);
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn train_learns_separable_fixture() {
        let data = separable_data();
        let config = NetworkConfig {
            learning_rate: 0.2,
            momentum: 0.5,
            batch_size: 4,
            epochs: 50,
            rng_seed: 7,
            ..NetworkConfig::basic(1, 4)
        };
        let net = init_network(&config).unwrap();
        let (trained, report) = train(net, &samples(&data)).unwrap();
        assert_eq!(report.final_train_accuracy, 1.0, "losses: {:?}", report.epoch_mean_loss);
        assert!(report.epoch_mean_loss[49] < report.epoch_mean_loss[0]);
        // Check post hoc that a single threshold separates the fixture.
        for (series, label) in &data {
            let (pred, _) = predict(&trained, series).unwrap();
            assert_eq!(pred, *label);
        }
    }

    #[test]
    fn train_with_zero_rates_is_a_no_op() {
        let data = separable_data();
        let config = NetworkConfig {
            learning_rate: 0.0,
            momentum: 0.0,
            epochs: 3,
            ..NetworkConfig::basic(1, 4)
        };
        let net = init_network(&config).unwrap();
        let before = net.params().flatten();
        let (after, _) = train(net, &samples(&data)).unwrap();
        assert_eq!(before, after.params().flatten());
    }

    #[test]
    fn train_is_deterministic() {
        let data = separable_data();
        let config = NetworkConfig {
            dropout_rate: 0.3,
            epochs: 8,
            rng_seed: 21,
            ..NetworkConfig::basic(1, 5)
        };
        let run = || {
            let net = init_network(&config).unwrap();
            train(net, &samples(&data)).unwrap()
        };
        let (net_a, report_a) = run();
        let (net_b, report_b) = run();
        assert_eq!(net_a.params().flatten(), net_b.params().flatten());
        assert_eq!(report_a.epoch_mean_loss, report_b.epoch_mean_loss);
        assert_eq!(report_a.final_train_accuracy, report_b.final_train_accuracy);
    }

    #[test]
    fn train_accepts_mixed_lengths() {
        let mut data = Vec::new();
        for len in [1usize, 2, 7, 33, 60] {
            data.push((constant_series(1.0, len), true));
            data.push((constant_series(-1.0, len), false));
        }
        let config = NetworkConfig { epochs: 5, ..NetworkConfig::basic(1, 3) };
        let net = init_network(&config).unwrap();
        assert!(train(net, &samples(&data)).is_ok());
    }

    #[test]
    fn predict_rules() {
        let config = NetworkConfig { init_scale: 0.0, ..NetworkConfig::basic(2, 3) };
        let mut net = init_network(&config).unwrap();
        for b in &mut net.params_mut().b_fgate {
            *b = 0.0;
        }
        let series = Matrix::from_rows(vec![vec![1.0, -1.0]; 4]);
        // All-zero network yields exactly 0.5: the tie goes positive.
        let (label, p) = predict(&net, &series).unwrap();
        assert_eq!(p, 0.5);
        assert!(label);
        // Stateless: repeated calls agree bit for bit.
        let again = predict(&net, &series).unwrap();
        assert_eq!((label, p), again);

        net.params_mut().b_out = 0.85;
        let (label, p) = predict(&net, &series).unwrap();
        assert!(p > 0.5);
        assert!(label);
    }

    #[test]
    fn evaluate_rules() {
        let data = separable_data();
        let config = NetworkConfig {
            learning_rate: 0.2,
            momentum: 0.5,
            batch_size: 4,
            epochs: 50,
            rng_seed: 7,
            ..NetworkConfig::basic(1, 4)
        };
        let net = init_network(&config).unwrap();
        let (trained, _) = train(net, &samples(&data)).unwrap();
        let metrics = evaluate(&trained, &samples(&data)).unwrap();
        assert_eq!(metrics.precision, 1.0);
        assert_eq!(metrics.recall, 1.0);
        assert_eq!(metrics.accuracy, 1.0);

        // A network stuck below 0.5 never predicts positive.
        let mut stuck = init_network(&NetworkConfig {
            init_scale: 0.0,
            ..NetworkConfig::basic(1, 4)
        })
        .unwrap();
        stuck.params_mut().b_out = -2.0;
        let metrics = evaluate(&stuck, &samples(&data)).unwrap();
        assert_eq!(metrics.precision, 0.0);
        assert_eq!(metrics.recall, 0.0);
    }

    #[test]
    fn metrics_match_counting_oracle() {
        let outcomes: Vec<(bool, bool)> = (0..200)
            .map(|k| {
                let h = mix_seed(99, k, 0);
                ((h & 1) == 0, (h & 2) == 0)
            })
            .collect();
        let (mut tp, mut fp, mut fn_c, mut tn) = (0, 0, 0, 0);
        for &(pred, actual) in &outcomes {
            match (pred, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_c += 1,
                (false, false) => tn += 1,
            }
        }
        let metrics = Metrics::from_counts(tp, fp, fn_c, tn);
        assert!((metrics.precision - tp as f64 / (tp + fp) as f64).abs() < 1e-15);
        assert!((metrics.recall - tp as f64 / (tp + fn_c) as f64).abs() < 1e-15);
        assert!(
            (metrics.accuracy - (tp + tn) as f64 / outcomes.len() as f64).abs() < 1e-15
        );
    }

    #[test]
    fn grid_search_degenerate_space_returns_single_candidate() {
        let data = separable_data();
        let space = SearchSpace {
            learning_rate: Axis::Fixed(0.2),
            momentum: Axis::Fixed(0.5),
            dropout: Axis::Fixed(0.0),
            batch_size: Axis::Fixed(4.0),
            epochs: Axis::Fixed(10.0),
            cells: Axis::Fixed(3.0),
        };
        let (best, table) = grid_search(&samples(&data), &space, 3, 3, 5).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(best.learning_rate, 0.2);
        assert_eq!(best.cell_count, 3);
    }

    #[test]
    fn grid_search_prefers_learnable_config() {
        let data = separable_data();
        let space = SearchSpace {
            learning_rate: Axis::Values(vec![0.0, 0.2]),
            momentum: Axis::Fixed(0.5),
            dropout: Axis::Fixed(0.0),
            batch_size: Axis::Fixed(4.0),
            epochs: Axis::Fixed(30.0),
            cells: Axis::Fixed(4.0),
        };
        let (best, table) = grid_search(&samples(&data), &space, 3, 2, 5).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(best.learning_rate, 0.2);
    }

    #[test]
    fn grid_search_samples_stay_inside_intervals() {
        let space = SearchSpace::default();
        let candidates = space.candidates(3, 5, 0);
        assert!(!candidates.is_empty());
        for c in &candidates {
            assert!((1e-4..=0.1).contains(&c.learning_rate));
            assert!((0.1..=0.9).contains(&c.momentum));
            assert!((0.0..=0.9).contains(&c.dropout_rate));
            assert!((100..=1000).contains(&c.batch_size));
            assert!((10..=100).contains(&c.epochs));
            assert!((10..=200).contains(&c.cell_count));
            c.validate().unwrap();
        }
    }

    #[test]
    fn grid_search_requires_enough_per_class() {
        let data = vec![
            (constant_series(1.0, 3), true),
            (constant_series(-1.0, 3), false),
            (constant_series(-1.0, 4), false),
            (constant_series(-1.0, 5), false),
        ];
        let space = SearchSpace {
            learning_rate: Axis::Fixed(0.1),
            momentum: Axis::Fixed(0.5),
            dropout: Axis::Fixed(0.0),
            batch_size: Axis::Fixed(2.0),
            epochs: Axis::Fixed(5.0),
            cells: Axis::Fixed(2.0),
        };
        match grid_search(&samples(&data), &space, 3, 1, 0) {
            Err(LstmError::InsufficientFolds { class: true, got: 1, .. }) => {}
            other => panic!("expected InsufficientFolds, got {other:?}"),
        }
    }
}
