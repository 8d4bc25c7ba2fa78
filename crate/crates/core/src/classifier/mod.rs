//! Single-hidden-layer classifier over binary feature vectors.
//!
//! Hidden activations are binary (spike / no spike); backprop substitutes a
//! surrogate for their nonexistent derivative. Surrogate 1 uses the
//! derivative of a ReLU saturating at `tau_sat`; surrogate 2 reuses the
//! activation itself. The output layer is a softmax over floored logits
//! (integer exponent lookup in hardware) with a cross-entropy cost. An
//! exact-gradient baseline replaces both: ReLU activations on hidden and
//! output layers with a quadratic cost.
//!
//! Because inputs and hidden activations are binary, every matrix-vector
//! product in the forward and backward passes routes through the
//! addition-only kernels in [`kernels`].

mod kernels;

pub use kernels::{binary_matvec, masked_backward_matvec, transcription_outer};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataio::ClassGroupMap;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Which gradient (and cost) the classifier trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// ReLU hidden and output activations, quadratic cost, exact gradients.
    ExactRelu,
    /// Binary activations; surrogate gradient = derivative of the saturating
    /// ReLU (1 on `[0, tau_sat)`, else 0); floor-softmax + cross-entropy.
    Surrogate1,
    /// Binary activations; surrogate gradient = the activation itself.
    Surrogate2,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ExactRelu => "exact-relu",
            Mode::Surrogate1 => "surrogate1",
            Mode::Surrogate2 => "surrogate2",
        }
    }
}

/// Binary activation and its surrogate gradient at net input `z`.
///
/// Only meaningful for the surrogate modes; the exact-gradient baseline uses
/// a real-valued ReLU instead.
pub fn binary_activation(z: f64, mode: Mode, tau_sat: f64) -> (u8, u8) {
    let a = (z >= 0.0) as u8;
    let grad = match mode {
        Mode::Surrogate1 => (z >= 0.0 && z < tau_sat) as u8,
        Mode::Surrogate2 => a,
        Mode::ExactRelu => panic!("binary_activation is undefined in exact-ReLU mode"),
    };
    (a, grad)
}

/// Softmax over floored logits: `p_i = exp(floor(z_i)) / sum exp(floor(z_j))`.
///
/// The maximum floored logit is subtracted before exponentiation; floors are
/// integers, so the subtraction is exact and the result identical.
pub fn floor_softmax(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let floored: Vec<f64> = z.iter().map(|v| v.floor()).collect();
    let max = floored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = floored.iter().map(|&f| (f - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn plain_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Classifier weights and hyperparameters.
///
/// `w_hidden_t` is stored input-major (`input x hidden`) so that the binary
/// forward pass streams contiguous rows per set input bit; `w_out` is
/// `classes x hidden`. Snapshots persist these layouts directly.
#[derive(Debug, Clone)]
pub struct MlpState {
    pub w_hidden_t: Array2<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Vec<f64>,
    pub mode: Mode,
    pub tau_sat: f64,
    pub eta: f64,
    pub dropout_p: f64,
    pub batch_size: usize,
}

impl MlpState {
    pub fn input_dim(&self) -> usize {
        self.w_hidden_t.dim().0
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden_t.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.w_out.dim().0
    }
}

/// Initialize weights from N(0, 0.01), resampling any draw with `|w| > 0.02`;
/// biases start at zero.
pub fn init_mlp(
    input_dim: usize,
    hidden: usize,
    classes: usize,
    mode: Mode,
    seed: u64,
) -> Result<MlpState> {
    if input_dim == 0 || hidden == 0 || classes == 0 {
        return Err(Error::BadDims(format!("{input_dim} x {hidden} x {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::<f64>::new(0.0, 0.01).expect("valid std");
    let mut truncated = || loop {
        let w = normal.sample(&mut rng);
        if w.abs() <= 0.02 {
            return w;
        }
    };
    let w_hidden_t = Array2::from_shape_simple_fn((input_dim, hidden), &mut truncated);
    let w_out = Array2::from_shape_simple_fn((classes, hidden), &mut truncated);
    Ok(MlpState {
        w_hidden_t,
        b_hidden: vec![0.0; hidden],
        w_out,
        b_out: vec![0.0; classes],
        mode,
        tau_sat: 0.125,
        eta: 0.01,
        dropout_p: 0.5,
        batch_size: 5,
    })
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub z_hidden: Vec<f64>,
    /// Post-activation (and post-dropout during training) hidden values.
    pub hidden: Vec<f64>,
    /// Hidden spikes after dropout masking; empty in exact-ReLU mode.
    pub hidden_bits: Vec<u8>,
    pub z_out: Vec<f64>,
    /// Floor-softmax probabilities (plain softmax in exact-ReLU mode).
    pub probs: Vec<f64>,
}

/// Run the network on one binary feature vector.
///
/// `dropout_mask`, when given, zeroes masked hidden units and scales kept
/// ones by `1/(1-p)` (inverted dropout); inference passes `None` and needs no
/// scaling.
pub fn forward(bits: &[u8], state: &MlpState, dropout_mask: Option<&[u8]>) -> Result<Forward> {
    if bits.len() != state.input_dim() {
        return Err(Error::DimMismatch(format!(
            "feature length {} vs input dim {}",
            bits.len(),
            state.input_dim()
        )));
    }
    if let Some(m) = dropout_mask {
        if m.len() != state.hidden_dim() {
            return Err(Error::DimMismatch(format!(
                "mask length {} vs hidden dim {}",
                m.len(),
                state.hidden_dim()
            )));
        }
    }
    let inv_keep = match dropout_mask {
        Some(_) if state.dropout_p > 0.0 => 1.0 / (1.0 - state.dropout_p),
        _ => 1.0,
    };
    let kept = |i: usize| dropout_mask.map_or(true, |m| m[i] != 0);

    let mut z_hidden = kernels::binary_matvec_t(&state.w_hidden_t.view(), bits);
    for (z, b) in z_hidden.iter_mut().zip(state.b_hidden.iter()) {
        *z += b;
    }

    let hidden_dim = state.hidden_dim();
    let (hidden, hidden_bits, z_out) = match state.mode {
        Mode::ExactRelu => {
            let hidden: Vec<f64> = (0..hidden_dim)
                .map(|i| if kept(i) { z_hidden[i].max(0.0) * inv_keep } else { 0.0 })
                .collect();
            let mut z_out: Vec<f64> = (0..state.num_classes())
                .map(|k| {
                    let mut acc = 0.0;
                    for (w, h) in state.w_out.row(k).iter().zip(hidden.iter()) {
                        acc += w * h;
                    }
                    acc
                })
                .collect();
            for (z, b) in z_out.iter_mut().zip(state.b_out.iter()) {
                *z += b;
            }
            (hidden, Vec::new(), z_out)
        }
        Mode::Surrogate1 | Mode::Surrogate2 => {
            let hidden_bits: Vec<u8> = (0..hidden_dim)
                .map(|i| {
                    let (a, _) = binary_activation(z_hidden[i], state.mode, state.tau_sat);
                    if kept(i) {
                        a
                    } else {
                        0
                    }
                })
                .collect();
            let hidden: Vec<f64> =
                hidden_bits.iter().map(|&a| a as f64 * inv_keep).collect();
            let mut z_out = binary_matvec(&state.w_out.view(), &hidden_bits)?;
            for (z, b) in z_out.iter_mut().zip(state.b_out.iter()) {
                *z = *z * inv_keep + b;
            }
            (hidden, hidden_bits, z_out)
        }
    };

    let probs = match state.mode {
        Mode::ExactRelu => plain_softmax(&z_out),
        _ => floor_softmax(&z_out),
    };
    Ok(Forward { z_hidden, hidden, hidden_bits, z_out, probs })
}

/// One mini-batch SGD step; returns the mean sample loss.
///
/// Gradients for all samples are computed against the pre-step weights, then
/// applied together (true mini-batch semantics). Cross-entropy over the
/// floor-softmax in the surrogate modes; quadratic cost over ReLU outputs in
/// exact mode.
pub fn backprop_batch(
    state: &mut MlpState,
    batch: &[(&[u8], usize)],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = state.num_classes();
    let hidden_dim = state.hidden_dim();
    let keep = 1.0 - state.dropout_p;
    let inv_keep = 1.0 / keep;

    struct SampleGrad {
        delta_out: Vec<f64>,
        hidden: Vec<f64>,
        delta_hidden: Vec<f64>,
    }

    let mut grads: Vec<SampleGrad> = Vec::with_capacity(batch.len());
    let mut loss_sum = 0.0;

    for &(bits, label) in batch {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, num_classes: classes });
        }
        let mask: Option<Vec<u8>> = if state.dropout_p > 0.0 {
            Some((0..hidden_dim).map(|_| (rng.gen::<f64>() < keep) as u8).collect())
        } else {
            None
        };
        let fwd = forward(bits, state, mask.as_deref())?;

        let (delta_out, loss) = match state.mode {
            Mode::ExactRelu => {
                let mut delta = vec![0.0; classes];
                let mut loss = 0.0;
                for k in 0..classes {
                    let a = fwd.z_out[k].max(0.0);
                    let y = (k == label) as usize as f64;
                    loss += 0.5 * (a - y) * (a - y);
                    delta[k] = if fwd.z_out[k] > 0.0 { a - y } else { 0.0 };
                }
                (delta, loss)
            }
            _ => {
                let mut delta = fwd.probs.clone();
                delta[label] -= 1.0;
                // Stable -ln p from the floored logits.
                let floored: Vec<f64> = fwd.z_out.iter().map(|z| z.floor()).collect();
                let max = floored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = floored.iter().map(|&f| (f - max).exp()).sum::<f64>().ln();
                (delta, lse - (floored[label] - max))
            }
        };
        loss_sum += loss;

        let delta_hidden = match state.mode {
            Mode::ExactRelu => {
                let raw = kernels::masked_backward_matvec(
                    &state.w_out.t(),
                    &delta_out,
                    &vec![1u8; hidden_dim],
                )?;
                (0..hidden_dim)
                    .map(|i| {
                        let kept = mask.as_ref().map_or(true, |m| m[i] != 0);
                        if kept && fwd.z_hidden[i] > 0.0 {
                            raw[i] * inv_keep
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            _ => {
                let combined: Vec<u8> = (0..hidden_dim)
                    .map(|i| {
                        let (_, g) = binary_activation(fwd.z_hidden[i], state.mode, state.tau_sat);
                        let kept = mask.as_ref().map_or(true, |m| m[i] != 0);
                        g & (kept as u8)
                    })
                    .collect();
                let raw = kernels::masked_backward_matvec(&state.w_out.t(), &delta_out, &combined)?;
                let scale = if mask.is_some() { inv_keep } else { 1.0 };
                raw.into_iter().map(|v| v * scale).collect()
            }
        };

        grads.push(SampleGrad { delta_out, hidden: fwd.hidden, delta_hidden });
    }

    // Apply the averaged step. Hidden-weight updates only touch rows whose
    // input bit is set; output-weight updates only columns whose hidden unit
    // was active.
    let step = state.eta / batch.len() as f64;
    for (s, &(bits, _)) in grads.iter().zip(batch.iter()) {
        for (k, &d) in s.delta_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let mut row = state.w_out.row_mut(k);
            for (w, &h) in row.iter_mut().zip(s.hidden.iter()) {
                if h != 0.0 {
                    *w -= step * d * h;
                }
            }
        }
        for (b, &d) in state.b_out.iter_mut().zip(s.delta_out.iter()) {
            *b -= step * d;
        }
        for (j, &bit) in bits.iter().enumerate() {
            if bit != 0 {
                let mut row = state.w_hidden_t.row_mut(j);
                for (w, &d) in row.iter_mut().zip(s.delta_hidden.iter()) {
                    *w -= step * d;
                }
            }
        }
        for (b, &d) in state.b_hidden.iter_mut().zip(s.delta_hidden.iter()) {
            *b -= step * d;
        }
    }
    Ok(loss_sum / batch.len() as f64)
}

/// Accuracy, per-class accuracy, and confusion matrix of a labeled set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[[true_class, predicted]]`.
    pub confusion: Array2<u32>,
    pub conditioned_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn to_confusion_csv(&self) -> String {
        let n = self.confusion.dim().0;
        let mut out = String::from("true_class");
        for c in 0..n {
            out.push_str(&format!(",pred_{c}"));
        }
        out.push('\n');
        for t in 0..n {
            out.push_str(&t.to_string());
            for c in 0..n {
                out.push_str(&format!(",{}", self.confusion[[t, c]]));
            }
            out.push('\n');
        }
        out
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,accuracy\n");
        for (c, a) in self.per_class_accuracy.iter().enumerate() {
            out.push_str(&format!("{c},{a}\n"));
        }
        out
    }
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn tally(
    predictions: &[usize],
    features: &[FeatureVector],
    classes: usize,
    conditioned: bool,
) -> EvalReport {
    let mut confusion = Array2::<u32>::zeros((classes, classes));
    for (f, &p) in features.iter().zip(predictions.iter()) {
        confusion[[f.label as usize, p]] += 1;
    }
    let correct: u32 = (0..classes).map(|c| confusion[[c, c]]).sum();
    let accuracy = correct as f64 / features.len() as f64;
    let per_class_accuracy = (0..classes)
        .map(|c| {
            let row: u32 = confusion.row(c).sum();
            if row == 0 {
                0.0
            } else {
                confusion[[c, c]] as f64 / row as f64
            }
        })
        .collect();
    EvalReport {
        accuracy,
        per_class_accuracy,
        confusion,
        conditioned_accuracy: conditioned.then_some(accuracy),
    }
}

/// Evaluate on a labeled feature set: argmax prediction (ties to the lowest
/// class, which floor-softmax makes possible), confusion matrix, per-class
/// accuracy. Dropout is inference-disabled.
pub fn evaluate(state: &MlpState, features: &[FeatureVector]) -> Result<EvalReport> {
    if features.is_empty() {
        return Err(Error::EmptySet);
    }
    let classes = state.num_classes();
    if let Some(f) = features.iter().find(|f| f.label as usize >= classes) {
        return Err(Error::LabelOutOfRange { label: f.label as usize, num_classes: classes });
    }
    let predictions: Vec<usize> = features
        .par_iter()
        .map(|f| forward(&f.bits, state, None).map(|fwd| argmax_lowest(&fwd.probs)))
        .collect::<Result<_>>()?;
    Ok(tally(&predictions, features, classes, false))
}

/// Evaluate with the argmax restricted to the classes sharing the true
/// label's group (digit / upper / lower). No retraining: same weights, the
/// competitors outside the group are simply removed.
pub fn conditioned_evaluate(
    state: &MlpState,
    features: &[FeatureVector],
    groups: &ClassGroupMap,
) -> Result<EvalReport> {
    if features.is_empty() {
        return Err(Error::EmptySet);
    }
    let classes = state.num_classes();
    if groups.num_classes() != classes {
        return Err(Error::DimMismatch(format!(
            "group map covers {} classes, model has {}",
            groups.num_classes(),
            classes
        )));
    }
    if let Some(f) = features.iter().find(|f| f.label as usize >= classes) {
        return Err(Error::LabelOutOfRange { label: f.label as usize, num_classes: classes });
    }
    let members: Vec<Vec<usize>> = (0..classes).map(|c| groups.members_of_group(c)).collect();
    let predictions: Vec<usize> = features
        .par_iter()
        .map(|f| {
            forward(&f.bits, state, None).map(|fwd| {
                let allowed = &members[f.label as usize];
                let mut best = allowed[0];
                for &c in allowed {
                    if fwd.probs[c] > fwd.probs[best] {
                        best = c;
                    }
                }
                best
            })
        })
        .collect::<Result<_>>()?;
    Ok(tally(&predictions, features, classes, true))
}

/// Training hyperparameters for [`train_classifier`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: usize,
    pub num_classes: usize,
    pub mode: Mode,
    pub tau_sat: f64,
    pub eta: f64,
    pub dropout_p: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 900,
            num_classes: 10,
            mode: Mode::Surrogate1,
            tau_sat: 0.125,
            eta: 0.01,
            dropout_p: 0.5,
            batch_size: 5,
            epochs: 30,
            seed: 0,
        }
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone)]
pub struct LearningCurves {
    /// `(epoch, mean train loss, validation accuracy)`.
    pub rows: Vec<(usize, f64, f64)>,
    /// Epoch whose state was retained (best validation accuracy).
    pub best_epoch: usize,
}

impl LearningCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_acc\n");
        for (e, l, a) in &self.rows {
            out.push_str(&format!("{e},{l},{a}\n"));
        }
        out
    }
}

/// Epoch loop with seeded shuffling; retains the best-validation state and
/// evaluates it on the test set.
pub fn train_classifier(
    train: &[FeatureVector],
    validation: &[FeatureVector],
    test: &[FeatureVector],
    cfg: &TrainConfig,
) -> Result<(MlpState, EvalReport, LearningCurves)> {
    if train.is_empty() {
        return Err(Error::ConfigInvalid("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::ConfigInvalid("batch_size must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout_p) {
        return Err(Error::ConfigInvalid(format!("dropout_p {} outside [0,1)", cfg.dropout_p)));
    }
    if !(cfg.tau_sat > 0.0 && cfg.tau_sat <= 1.0) {
        return Err(Error::ConfigInvalid(format!("tau_sat {} outside (0,1]", cfg.tau_sat)));
    }
    let input_dim = train[0].bits.len();
    if train.iter().any(|f| f.bits.len() != input_dim)
        || validation.iter().any(|f| f.bits.len() != input_dim)
        || test.iter().any(|f| f.bits.len() != input_dim)
    {
        return Err(Error::ConfigInvalid("inconsistent feature lengths".into()));
    }

    let mut state = init_mlp(input_dim, cfg.hidden, cfg.num_classes, cfg.mode, cfg.seed)?;
    state.tau_sat = cfg.tau_sat;
    state.eta = cfg.eta;
    state.dropout_p = cfg.dropout_p;
    state.batch_size = cfg.batch_size;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = LearningCurves { rows: Vec::with_capacity(cfg.epochs), best_epoch: 0 };
    let mut best: Option<(f64, MlpState, usize)> = None;

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[u8], usize)> =
                chunk.iter().map(|&i| (train[i].bits.as_slice(), train[i].label as usize)).collect();
            loss_sum += backprop_batch(&mut state, &batch, &mut rng)? * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_acc = if validation.is_empty() {
            f64::NAN
        } else {
            evaluate(&state, validation)?.accuracy
        };
        curves.rows.push((epoch, train_loss, val_acc));
        if !validation.is_empty() {
            let improved = best.as_ref().map_or(true, |(acc, _, _)| val_acc > *acc);
            if improved {
                best = Some((val_acc, state.clone(), epoch));
            }
        }
    }

    let (final_state, best_epoch) = match best {
        Some((_, s, e)) => (s, e),
        None => (state, cfg.epochs.saturating_sub(1)),
    };
    curves.best_epoch = best_epoch;
    let report = evaluate(&final_state, test)?;
    Ok((final_state, report, curves))
}

#[cfg(test)]
mod tests;
