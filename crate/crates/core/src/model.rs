//! Model parameters as a flat vector plus the shape metadata needed to
//! interpret it. The flat representation is the unit of aggregation and
//! transport: every protocol-level operation is arithmetic over `values`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
}

/// One layer's slot in the flat vector: `input * output` weights followed by
/// `output` biases. Weights are input-major: `w[i * output + j]` connects
/// input `i` to output `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub input: usize,
    pub output: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.input * self.output
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Architecture and regularization settings for the feed-forward network:
/// ReLU hidden layers, softmax output, optional inverted dropout on hidden
/// activations and an L1 penalty on all parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub dropout: f64,
    pub l1: f64,
}

impl ModelSpec {
    pub fn new(widths: Vec<usize>, dropout: f64, l1: f64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("model needs at least input and output widths".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0,1)")));
        }
        if l1 < 0.0 || !l1.is_finite() {
            return Err(Error::Config(format!("l1 coefficient {l1} must be nonnegative")));
        }
        Ok(Self { widths, dropout, l1 })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.widths
            .windows(2)
            .map(|w| LayerShape { kind: LayerKind::Dense, input: w[0], output: w[1] })
            .collect()
    }

    pub fn param_len(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::param_count).sum()
    }
}

/// Flat parameter vector. Invariants: `values.len()` equals the sum of the
/// per-layer parameter counts, and every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, shapes: Vec<LayerShape>) -> Result<Self> {
        let expected: usize = shapes.iter().map(LayerShape::param_count).sum();
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "param vector length {} does not match shapes (expected {expected})",
                values.len()
            )));
        }
        Ok(Self { values, shapes })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Self { values: vec![0.0; spec.param_len()], shapes: spec.layer_shapes() }
    }

    /// He-normal weights for the ReLU stack, Xavier-ish for the softmax
    /// layer, zero biases.
    pub fn random_init(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Self {
        let shapes = spec.layer_shapes();
        let last = shapes.len() - 1;
        let mut values = Vec::with_capacity(spec.param_len());
        for (idx, shape) in shapes.iter().enumerate() {
            let scale = if idx == last {
                (1.0 / shape.input as f64).sqrt()
            } else {
                (2.0 / shape.input as f64).sqrt()
            };
            for _ in 0..shape.weight_count() {
                values.push(gaussian(rng) * scale);
            }
            values.extend(std::iter::repeat(0.0).take(shape.output));
        }
        Self { values, shapes }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Same shape metadata, all-zero values.
    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], shapes: self.shapes.clone() }
    }

    /// FNV-1a over the little-endian bytes of the values. Used for
    /// determinism checks and run summaries.
    pub fn checksum(&self) -> u64 {
        crate::transport::fnv1a(self.values.iter().flat_map(|v| v.to_le_bytes()))
    }
}

/// Box-Muller; two uniforms per draw, deterministic for a seeded stream.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A parameter vector tagged with the global round it was derived from.
/// The tag is the basis of all staleness arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionedModel {
    pub params: ParamVector,
    pub version: u64,
}
