//! Feed-forward network with manual backpropagation.
//!
//! The hot path works on flat [`ParamVector`]s: `forward` produces softmax
//! class probabilities, `loss_and_grad` evaluates masked cross-entropy plus
//! the L1 penalty and its exact gradient, and [`OptimizerState`] applies SGD
//! or Adam updates. Dropout is inverted dropout driven by an explicit seed so
//! that training-mode evaluation is reproducible; the same seed always yields
//! the same masks for a given batch shape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelSpec, ParamVector};

/// Dropout behaviour for a single forward/backward evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Evaluation mode: dropout disabled.
    Eval,
    /// Training mode: masks drawn from the given seed. With a dropout rate
    /// of zero this is bitwise identical to `Eval`.
    Train { seed: u64 },
}

struct LayerSlices<'a> {
    weights: &'a [f64],
    biases: &'a [f64],
    input: usize,
    output: usize,
}

fn layer_slices<'a>(params: &'a ParamVector, spec: &ModelSpec) -> Vec<LayerSlices<'a>> {
    let mut out = Vec::with_capacity(spec.widths.len() - 1);
    let mut offset = 0;
    for shape in params.shapes() {
        let w = shape.weight_count();
        out.push(LayerSlices {
            weights: &params.values()[offset..offset + w],
            biases: &params.values()[offset + w..offset + w + shape.output],
            input: shape.input,
            output: shape.output,
        });
        offset += shape.param_count();
    }
    out
}

fn check_consistent(params: &ParamVector, spec: &ModelSpec, batch: &Matrix) -> Result<()> {
    if params.shapes() != spec.layer_shapes().as_slice() {
        return Err(Error::Config("param vector does not match model spec".into()));
    }
    if batch.cols() != spec.input_dim() {
        return Err(Error::Dimension(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            spec.input_dim()
        )));
    }
    Ok(())
}

struct ForwardTrace {
    /// Post-activation (and post-dropout) outputs per layer; index 0 is the
    /// input batch itself.
    activations: Vec<Matrix>,
    /// Pre-activations of hidden layers (for the ReLU derivative).
    pre_activations: Vec<Matrix>,
    /// Dropout scale per hidden activation entry: 0 for dropped, 1/(1-p)
    /// for kept, or `None` when dropout was inactive for that layer.
    dropout_scales: Vec<Option<Vec<f64>>>,
    /// Output-layer logits.
    logits: Matrix,
}

fn forward_trace(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Matrix,
    dropout: DropoutMode,
) -> Result<ForwardTrace> {
    check_consistent(params, spec, batch)?;
    let layers = layer_slices(params, spec);
    let last = layers.len() - 1;

    let mut dropout_rng = match dropout {
        DropoutMode::Train { seed } if spec.dropout > 0.0 => {
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
        _ => None,
    };

    let mut activations: Vec<Matrix> = vec![batch.clone()];
    let mut pre_activations: Vec<Matrix> = Vec::with_capacity(last);
    let mut dropout_scales: Vec<Option<Vec<f64>>> = Vec::with_capacity(last);
    let mut logits = Matrix::zeros(0, 0);

    for (idx, layer) in layers.iter().enumerate() {
        let input = activations.last().unwrap();
        let mut z = Matrix::zeros(batch.rows(), layer.output);
        for r in 0..batch.rows() {
            let x = input.row(r);
            let zr = z.row_mut(r);
            zr.copy_from_slice(layer.biases);
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w = &layer.weights[i * layer.output..(i + 1) * layer.output];
                for (j, &wij) in w.iter().enumerate() {
                    zr[j] += xi * wij;
                }
            }
        }
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("layer {idx} pre-activation")));
        }

        if idx == last {
            logits = z;
        } else {
            let mut a = z.clone();
            for v in a.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let scales = if let Some(rng) = dropout_rng.as_mut() {
                let keep = 1.0 - spec.dropout;
                let mut s = vec![0.0; a.rows() * a.cols()];
                for v in s.iter_mut() {
                    *v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                for (av, sv) in a.data_mut().iter_mut().zip(&s) {
                    *av *= sv;
                }
                Some(s)
            } else {
                None
            };
            pre_activations.push(z);
            dropout_scales.push(scales);
            activations.push(a);
        }
    }

    Ok(ForwardTrace { activations, pre_activations, dropout_scales, logits })
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Class probabilities for a batch, evaluation mode (no dropout).
pub fn forward(params: &ParamVector, spec: &ModelSpec, batch: &Matrix) -> Result<Matrix> {
    forward_with(params, spec, batch, DropoutMode::Eval)
}

/// Class probabilities with explicit dropout control.
pub fn forward_with(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Matrix,
    dropout: DropoutMode,
) -> Result<Matrix> {
    let trace = forward_trace(params, spec, batch, dropout)?;
    Ok(softmax_rows(&trace.logits))
}

/// Masked rows are excluded from the loss, so only unmasked target rows must
/// be one-hot.
fn validate_targets(targets: &Matrix, classes: usize, mask: &[bool]) -> Result<()> {
    if targets.rows() != mask.len() || targets.cols() != classes {
        return Err(Error::Dimension(format!(
            "targets are {}x{}, expected {}x{classes}",
            targets.rows(),
            targets.cols(),
            mask.len()
        )));
    }
    for (r, &keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let row = targets.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Input(format!("target row {r} is not one-hot")));
        }
    }
    Ok(())
}

/// Mean cross-entropy over unmasked rows plus `l1 * ||params||_1`, and its
/// gradient with respect to every parameter.
///
/// Masked rows contribute nothing to either term; with zero unmasked rows
/// the data term is 0 and only the L1 subgradient remains (with
/// `sign(0) = 0`, so parameters already at zero stay untouched).
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Matrix,
    targets: &Matrix,
    mask: &[bool],
    dropout: DropoutMode,
) -> Result<(f64, ParamVector)> {
    if mask.len() != batch.rows() {
        return Err(Error::Dimension(format!(
            "mask length {} does not match batch rows {}",
            mask.len(),
            batch.rows()
        )));
    }
    validate_targets(targets, spec.class_count(), mask)?;

    let trace = forward_trace(params, spec, batch, dropout)?;
    let classes = spec.class_count();
    let unmasked = mask.iter().filter(|&&m| m).count();

    // Data loss from logits (log-sum-exp form keeps it finite).
    let mut data_loss = 0.0;
    let mut dlogits = Matrix::zeros(batch.rows(), classes);
    if unmasked > 0 {
        let scale = 1.0 / unmasked as f64;
        for r in 0..batch.rows() {
            if !mask[r] {
                continue;
            }
            let z = trace.logits.row(r);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = z.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = max + sum_exp.ln();
            let target_class = targets.row(r).iter().position(|&v| v == 1.0).unwrap();
            data_loss += (log_sum - z[target_class]) * scale;
            let dz = dlogits.row_mut(r);
            for (j, &v) in z.iter().enumerate() {
                let p = (v - max).exp() / sum_exp;
                dz[j] = (p - targets.get(r, j)) * scale;
            }
        }
    }

    // Backpropagate through the dense stack.
    let layers = layer_slices(params, spec);
    let mut grad = params.zeros_like();
    let mut offsets = Vec::with_capacity(layers.len());
    {
        let mut off = 0;
        for shape in params.shapes() {
            offsets.push(off);
            off += shape.param_count();
        }
    }

    let mut delta = dlogits; // gradient wrt current layer's pre-activation
    for idx in (0..layers.len()).rev() {
        let layer = &layers[idx];
        let input = &trace.activations[idx];
        let off = offsets[idx];
        let wlen = layer.input * layer.output;
        {
            let gvals = grad.values_mut();
            for r in 0..delta.rows() {
                let d = delta.row(r);
                let x = input.row(r);
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let gw = &mut gvals[off + i * layer.output..off + (i + 1) * layer.output];
                    for (j, &dj) in d.iter().enumerate() {
                        gw[j] += xi * dj;
                    }
                }
                let gb = &mut gvals[off + wlen..off + wlen + layer.output];
                for (j, &dj) in d.iter().enumerate() {
                    gb[j] += dj;
                }
            }
        }

        if idx > 0 {
            // Gradient wrt this layer's input, then through dropout and ReLU.
            let prev = &layers[idx - 1];
            let mut dinput = Matrix::zeros(delta.rows(), layer.input);
            for r in 0..delta.rows() {
                let d = delta.row(r);
                let di = dinput.row_mut(r);
                for i in 0..layer.input {
                    let w = &layer.weights[i * layer.output..(i + 1) * layer.output];
                    let mut acc = 0.0;
                    for (j, &wij) in w.iter().enumerate() {
                        acc += wij * d[j];
                    }
                    di[i] = acc;
                }
                let _ = prev;
            }
            let pre = &trace.pre_activations[idx - 1];
            if let Some(scales) = &trace.dropout_scales[idx - 1] {
                for (v, s) in dinput.data_mut().iter_mut().zip(scales) {
                    *v *= s;
                }
            }
            for (v, &z) in dinput.data_mut().iter_mut().zip(pre.data()) {
                if z <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = dinput;
        }
    }

    // L1 penalty over the whole vector; subgradient at 0 is 0.
    let mut loss = data_loss;
    if spec.l1 > 0.0 {
        loss += spec.l1 * params.l1_norm();
        for (g, &p) in grad.values_mut().iter_mut().zip(params.values()) {
            if p > 0.0 {
                *g += spec.l1;
            } else if p < 0.0 {
                *g -= spec.l1;
            }
        }
    }

    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

/// Optimizer with its per-parameter state. Construct one per training pass;
/// Adam moments are not carried across protocol rounds.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    learning_rate: f64,
    adam: Option<AdamState>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self { learning_rate, adam: None }
    }

    /// Adam with the standard (0.9, 0.999, 1e-8) defaults.
    pub fn adam(learning_rate: f64, param_len: usize) -> Self {
        Self {
            learning_rate,
            adam: Some(AdamState {
                m: vec![0.0; param_len],
                v: vec![0.0; param_len],
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                step: 0,
            }),
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, param_len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(learning_rate),
            OptimizerKind::Adam => Self::adam(learning_rate, param_len),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.adam.as_ref().map_or(0, |a| a.step)
    }

    /// Applies one update in place. SGD is exactly `p -= lr * g`; Adam is the
    /// standard bias-corrected update.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Dimension(format!(
                "gradient length {} does not match params {}",
                grad.len(),
                params.len()
            )));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let lr = self.learning_rate;
        match self.adam.as_mut() {
            None => {
                for (p, &g) in params.values_mut().iter_mut().zip(grad.values()) {
                    *p -= lr * g;
                }
            }
            Some(adam) => {
                adam.step += 1;
                let b1 = adam.beta1;
                let b2 = adam.beta2;
                let c1 = 1.0 - b1.powi(adam.step as i32);
                let c2 = 1.0 - b2.powi(adam.step as i32);
                for (i, (p, &g)) in
                    params.values_mut().iter_mut().zip(grad.values()).enumerate()
                {
                    adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * g;
                    adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * g * g;
                    let m_hat = adam.m[i] / c1;
                    let v_hat = adam.v[i] / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + adam.epsilon);
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("updated parameters".into()));
        }
        Ok(())
    }
}
