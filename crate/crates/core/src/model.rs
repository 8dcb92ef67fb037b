//! Small fully connected classifiers with hand-written backprop.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! row-major as `(out, in)` followed by its bias of length `out`. Hidden
//! layers use ReLU; the output layer produces `K` logits.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GerneError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden layer widths; empty for a linear softmax classifier.
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            num_classes,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.num_classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(GerneError::InvalidArgument(
                "architecture needs input_dim >= 1 and at least 2 classes".into(),
            ));
        }
        if self.hidden.len() > 2 || self.hidden.contains(&0) {
            return Err(GerneError::InvalidArgument(
                "supported architectures: linear or 1-2 non-empty hidden layers".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = slot.bias_offset + w[1];
                slot
            })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layout().last().map_or(0, |s| s.bias_offset + s.fan_out)
    }
}

/// Position of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    theta: Vec<f64>,
    layout: Vec<LayerSlot>,
}

/// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every weight and bias.
pub fn init_model<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Model> {
    arch.validate()?;
    let layout = arch.layout();
    let mut theta = vec![0.0; arch.num_parameters()];
    for slot in &layout {
        let bound = 1.0 / (slot.fan_in as f64).sqrt();
        let end = slot.bias_offset + slot.fan_out;
        for v in &mut theta[slot.weight_offset..end] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(Model {
        arch: arch.clone(),
        theta,
        layout,
    })
}

impl Model {
    pub fn from_parameters(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.num_parameters() {
            return Err(GerneError::InvalidArgument(format!(
                "{} parameters for an architecture with {}",
                theta.len(),
                arch.num_parameters()
            )));
        }
        let layout = arch.layout();
        Ok(Self {
            arch,
            theta,
            layout,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn layout(&self) -> &[LayerSlot] {
        &self.layout
    }

    fn weight(&self, slot: &LayerSlot) -> ArrayView2<'_, f64> {
        let w = &self.theta[slot.weight_offset..slot.bias_offset];
        ArrayView2::from_shape((slot.fan_out, slot.fan_in), w).expect("layout matches theta")
    }

    fn bias(&self, slot: &LayerSlot) -> &[f64] {
        &self.theta[slot.bias_offset..slot.bias_offset + slot.fan_out]
    }

    fn affine(&self, slot: &LayerSlot, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weight(slot).t());
        let bias = self.bias(slot);
        for mut row in z.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        z
    }

    /// Returns the pre-activations of every layer; the last one is the logits.
    fn forward_trace(&self, features: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.layout.len());
        for (l, slot) in self.layout.iter().enumerate() {
            let z = if l == 0 {
                self.affine(slot, features)
            } else {
                let act = pre[l - 1].mapv(relu);
                self.affine(slot, act.view())
            };
            pre.push(z);
        }
        pre
    }

    /// Logits, `n x K`.
    pub fn forward(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(features.ncols(), self.arch.input_dim, "feature dimension mismatch");
        self.forward_trace(features)
            .pop()
            .expect("at least one layer")
    }

    /// Cross-entropy of every sample.
    pub fn per_sample_losses(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Vec<f64> {
        let logits = self.forward(features);
        logits
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(z, &y)| log_sum_exp(z.as_slice().expect("row-major logits")) - z[y])
            .collect()
    }

    /// Weighted mean cross-entropy; uniform weights when `weights` is `None`.
    pub fn batch_loss(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<f64> {
        let losses = self.per_sample_losses(features, labels);
        let weights = resolve_weights(weights, losses.len())?;
        Ok(losses.iter().zip(weights.iter()).map(|(l, w)| l * w).sum())
    }

    /// Loss and its analytic gradient with respect to the flat parameters.
    pub fn batch_gradient(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<(f64, GradientVector)> {
        assert_eq!(features.ncols(), self.arch.input_dim, "feature dimension mismatch");
        let n = labels.len();
        let weights = resolve_weights(weights, n)?;
        let pre = self.forward_trace(features);
        let logits = pre.last().expect("at least one layer");

        // d loss / d logits = w_i * (softmax - onehot)
        let mut delta = Array2::<f64>::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for (i, (z, mut d)) in logits.rows().into_iter().zip(delta.rows_mut()).enumerate() {
            let z = z.as_slice().expect("row-major logits");
            let lse = log_sum_exp(z);
            loss += weights[i] * (lse - z[labels[i]]);
            for (dv, &zv) in d.iter_mut().zip(z) {
                *dv = weights[i] * (zv - lse).exp();
            }
            d[labels[i]] -= weights[i];
        }
        if !loss.is_finite() {
            return Err(GerneError::NonFiniteLoss);
        }

        let mut grad = vec![0.0; self.theta.len()];
        for l in (0..self.layout.len()).rev() {
            let slot = &self.layout[l];
            let input_act;
            let input = if l == 0 {
                features
            } else {
                input_act = pre[l - 1].mapv(relu);
                input_act.view()
            };
            let dw = delta.t().dot(&input);
            grad[slot.weight_offset..slot.bias_offset]
                .copy_from_slice(dw.as_standard_layout().as_slice().expect("contiguous"));
            let db = delta.sum_axis(Axis(0));
            grad[slot.bias_offset..slot.bias_offset + slot.fan_out]
                .copy_from_slice(db.as_slice().expect("contiguous"));
            if l > 0 {
                let mut upstream = delta.dot(&self.weight(slot));
                upstream.zip_mut_with(&pre[l - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = upstream;
            }
        }
        Ok((loss, GradientVector(grad)))
    }

    /// Fraction of `theta`'s absolute first-layer weight mass on the given
    /// input coordinates. Only meaningful for linear models.
    pub fn weight_mass_on(&self, inputs: std::ops::Range<usize>) -> f64 {
        let w = self.weight(&self.layout[0]);
        let total: f64 = w.iter().map(|v| v.abs()).sum();
        let part: f64 = w
            .rows()
            .into_iter()
            .map(|r| r.iter().skip(inputs.start).take(inputs.len()).map(|v| v.abs()).sum::<f64>())
            .sum();
        if total > 0.0 {
            part / total
        } else {
            0.0
        }
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn resolve_weights(weights: Option<&[f64]>, n: usize) -> Result<std::borrow::Cow<'_, [f64]>> {
    match weights {
        None => {
            if n == 0 {
                return Err(GerneError::InvalidArgument("empty batch".into()));
            }
            Ok(std::borrow::Cow::Owned(vec![1.0 / n as f64; n]))
        }
        Some(w) => {
            if w.len() != n {
                return Err(GerneError::InvalidArgument(format!(
                    "{} weights for {n} samples",
                    w.len()
                )));
            }
            if w.iter().any(|&v| !(v >= 0.0)) {
                return Err(GerneError::InvalidArgument("negative sample weight".into()));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(GerneError::InvalidArgument(format!(
                    "sample weights sum to {sum}, expected 1"
                )));
            }
            Ok(std::borrow::Cow::Borrowed(w))
        }
    }
}

/// Central-difference gradient of the batch loss. Verification only.
pub fn finite_difference_gradient(
    model: &Model,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: Option<&[f64]>,
    epsilon: f64,
) -> Result<GradientVector> {
    let mut probe = model.clone();
    let mut grad = vec![0.0; model.theta.len()];
    for (j, g) in grad.iter_mut().enumerate() {
        let orig = probe.theta[j];
        probe.theta[j] = orig + epsilon;
        let up = probe.batch_loss(features, labels, weights)?;
        probe.theta[j] = orig - epsilon;
        let down = probe.batch_loss(features, labels, weights)?;
        probe.theta[j] = orig;
        *g = (up - down) / (2.0 * epsilon);
    }
    Ok(GradientVector(grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(GerneError::InvalidConfig(format!(
                "optimizer needs learning_rate > 0, momentum in [0,1), weight_decay >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and coupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub settings: OptimizerSettings,
    pub velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(settings: OptimizerSettings, num_parameters: usize) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            settings,
            velocity: vec![0.0; num_parameters],
        })
    }
}

/// `v <- mu*v + g + lambda*theta; theta <- theta - eta*v`.
pub fn sgd_step(model: &mut Model, state: &mut OptimizerState, grad: &GradientVector) {
    let OptimizerSettings {
        learning_rate,
        momentum,
        weight_decay,
    } = state.settings;
    assert_eq!(grad.len(), model.theta.len(), "gradient dimension mismatch");
    for ((theta, v), g) in model.theta.iter_mut().zip(&mut state.velocity).zip(&grad.0) {
        *v = momentum * *v + g + weight_decay * *theta;
        *theta -= learning_rate * *v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: Architecture,
    /// Always `"f64-le-base64"`.
    pub encoding: String,
    pub parameters: String,
}

impl Checkpoint {
    pub const ENCODING: &'static str = "f64-le-base64";

    pub fn from_model(model: &Model) -> Self {
        let bytes: Vec<u8> = model.theta.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            architecture: model.arch.clone(),
            encoding: Self::ENCODING.into(),
            parameters: BASE64.encode(bytes),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.encoding != Self::ENCODING {
            return Err(GerneError::InvalidArgument(format!(
                "unsupported parameter encoding `{}`",
                self.encoding
            )));
        }
        let bytes = BASE64
            .decode(self.parameters.as_bytes())
            .map_err(|e| GerneError::InvalidArgument(format!("parameter payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(GerneError::InvalidArgument(
                "parameter payload is not a whole number of f64 values".into(),
            ));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Model::from_parameters(self.architecture, theta)
    }
}
