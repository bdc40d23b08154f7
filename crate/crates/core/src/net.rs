//! Dense feedforward network: a trunk of fully connected layers producing the
//! feature layer `F`, followed by a linear softmax head.
//!
//! Weights use the row-vector convention: a layer maps a batch `A` (batch × in)
//! to `act(A·W + b)` with `W` of shape in × out. The head weights `θ` are
//! d_f × m, one column per class.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Weights and bias of one dense layer. Also used for their gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vector,
}

/// All trainable parameters: trunk layers plus the classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetParams")]
pub struct NetParams {
    layers: Vec<LayerSpec>,
    hidden: Vec<Dense>,
    head_weights: Matrix,
    head_bias: Vector,
}

#[derive(Deserialize)]
struct RawNetParams {
    layers: Vec<LayerSpec>,
    hidden: Vec<Dense>,
    head_weights: Matrix,
    head_bias: Vector,
}

impl TryFrom<RawNetParams> for NetParams {
    type Error = Error;

    fn try_from(raw: RawNetParams) -> Result<Self> {
        NetParams::new(raw.layers, raw.hidden, raw.head_weights, raw.head_bias)
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::input("network needs at least one layer"));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(Error::input(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && layers[i - 1].out_dim != l.in_dim {
            return Err(Error::input(format!(
                "layer {} expects {} inputs but layer {} produces {}",
                i,
                l.in_dim,
                i - 1,
                layers[i - 1].out_dim
            )));
        }
    }
    Ok(())
}

impl NetParams {
    pub fn new(
        layers: Vec<LayerSpec>,
        hidden: Vec<Dense>,
        head_weights: Matrix,
        head_bias: Vector,
    ) -> Result<Self> {
        validate_layers(&layers)?;
        if hidden.len() != layers.len() {
            return Err(Error::input(format!(
                "{} layer specs but {} parameter blocks",
                layers.len(),
                hidden.len()
            )));
        }
        for (i, (spec, p)) in layers.iter().zip(&hidden).enumerate() {
            if p.weights.shape() != (spec.in_dim, spec.out_dim) || p.bias.len() != spec.out_dim {
                return Err(Error::input(format!("layer {i} parameters do not match its spec")));
            }
            if !p.weights.is_finite() || p.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("layer {i} has non-finite parameters")));
            }
        }
        let d_f = layers.last().map(|l| l.out_dim).unwrap_or(0);
        if head_weights.rows() != d_f || head_weights.cols() == 0 {
            return Err(Error::input(format!(
                "head weights are {}x{}, expected {}xm",
                head_weights.rows(),
                head_weights.cols(),
                d_f
            )));
        }
        if head_bias.len() != head_weights.cols() {
            return Err(Error::input("head bias length differs from class count"));
        }
        if !head_weights.is_finite() || head_bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("head has non-finite parameters"));
        }
        Ok(Self {
            layers,
            hidden,
            head_weights,
            head_bias,
        })
    }

    /// Uniform Glorot initialisation in `[-s, s]`, `s = sqrt(6 / (in + out))`, zero biases.
    pub fn init<R: Rng>(layers: &[LayerSpec], num_classes: usize, rng: &mut R) -> Result<Self> {
        validate_layers(layers)?;
        if num_classes == 0 {
            return Err(Error::input("need at least one class"));
        }
        let mut glorot = |rows: usize, cols: usize| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-s..=s))
        };
        let hidden = layers
            .iter()
            .map(|l| Dense {
                weights: glorot(l.in_dim, l.out_dim),
                bias: Vector::zeros(l.out_dim),
            })
            .collect();
        let d_f = layers.last().expect("validated").out_dim;
        let head_weights = glorot(d_f, num_classes);
        Self::new(
            layers.to_vec(),
            hidden,
            head_weights,
            Vector::zeros(num_classes),
        )
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn hidden(&self) -> &[Dense] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [Dense] {
        &mut self.hidden
    }

    pub fn head_weights(&self) -> &Matrix {
        &self.head_weights
    }

    pub fn head_weights_mut(&mut self) -> &mut Matrix {
        &mut self.head_weights
    }

    pub fn head_bias(&self) -> &Vector {
        &self.head_bias
    }

    pub fn head_bias_mut(&mut self) -> &mut Vector {
        &mut self.head_bias
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.head_weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weights.cols()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("bad checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    /// Pre-activation of each trunk layer.
    pub pre: Vec<Matrix>,
    /// Output of each trunk layer; the last one is the feature layer.
    pub post: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardCache {
    pub fn features(&self) -> &Matrix {
        self.post.last().expect("at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

fn affine(input: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    let mut out = input.matmul(weights)?;
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

/// Applies the classifier head to arbitrary feature rows.
pub fn head_logits(params: &NetParams, features: &Matrix) -> Result<Matrix> {
    if features.cols() != params.feature_dim() {
        return Err(Error::input(format!(
            "features have {} columns, head expects {}",
            features.cols(),
            params.feature_dim()
        )));
    }
    affine(features, &params.head_weights, &params.head_bias)
}

pub fn forward(params: &NetParams, batch: &Matrix) -> Result<ForwardCache> {
    if batch.rows() == 0 {
        return Err(Error::input("empty batch"));
    }
    if batch.cols() != params.input_dim() {
        return Err(Error::input(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(params.layers.len());
    for (i, (spec, layer)) in params.layers.iter().zip(&params.hidden).enumerate() {
        let input = post.last().unwrap_or(batch);
        let z = affine(input, &layer.weights, &layer.bias)?;
        let a = z.map(|v| spec.activation.apply(v));
        if !a.is_finite() {
            return Err(Error::Numeric(format!("non-finite activation in layer {i}")));
        }
        pre.push(z);
        post.push(a);
    }
    let logits = head_logits(params, post.last().expect("at least one layer"))?;
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(ForwardCache {
        input: batch.clone(),
        pre,
        post,
        logits,
    })
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::input(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::input("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::input(format!(
            "label {} out of range for {} classes",
            bad,
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of softmax(logits) and its gradient with respect to the logits.
pub fn softmax_loss_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(logits, labels)?;
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(i);
        let mut sum = 0.0;
        for (gj, &l) in g.iter_mut().zip(row) {
            *gj = (l - max).exp();
            sum += *gj;
        }
        total += sum.ln() - (row[y] - max);
        for (j, gj) in g.iter_mut().enumerate() {
            let p = *gj / sum;
            let target = if j == y { 1.0 } else { 0.0 };
            *gj = (p - target) / batch;
        }
    }
    Ok((total / batch, grad))
}

pub fn softmax_loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    softmax_loss_grad(logits, labels).map(|(loss, _)| loss)
}

/// Softmax loss plus `(λ/2)·‖θ‖²` over the head weights (biases excluded).
pub fn objective_j_lambda(
    params: &NetParams,
    cache: &ForwardCache,
    labels: &[usize],
    lambda: f64,
) -> Result<f64> {
    let loss = softmax_loss(&cache.logits, labels)?;
    Ok(loss + 0.5 * lambda * params.head_weights.frobenius_sq())
}

/// Gradients of `J_λ` for the head evaluated at some feature matrix.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    /// `J_λ` at the given features.
    pub objective: f64,
    pub weights: Matrix,
    pub bias: Vector,
    /// `∂J_λ/∂features`.
    pub features: Matrix,
}

pub fn head_backward(
    params: &NetParams,
    features: &Matrix,
    labels: &[usize],
    lambda: f64,
) -> Result<HeadGradients> {
    let logits = head_logits(params, features)?;
    let (loss, dlogits) = softmax_loss_grad(&logits, labels)?;
    let objective = loss + 0.5 * lambda * params.head_weights.frobenius_sq();

    let mut weights = features.t_matmul(&dlogits)?;
    for (g, &w) in weights.data_mut().iter_mut().zip(params.head_weights.data()) {
        *g += lambda * w;
    }
    let bias = column_sums(&dlogits);
    let dfeatures = dlogits.matmul_t(&params.head_weights)?;
    Ok(HeadGradients {
        objective,
        weights,
        bias,
        features: dfeatures,
    })
}

fn column_sums(m: &Matrix) -> Vector {
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Vector::from(out)
}

/// Backpropagates a gradient arriving at the feature layer through the trunk.
pub fn trunk_backward(
    params: &NetParams,
    cache: &ForwardCache,
    feature_grad: &Matrix,
) -> Result<Vec<Dense>> {
    feature_grad.same_shape(cache.features(), "feature gradient")?;
    if cache.post.len() != params.layers.len() {
        return Err(Error::input("cache does not belong to these parameters"));
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut delta = feature_grad.clone();
    for l in (0..params.layers.len()).rev() {
        let act = params.layers[l].activation;
        let pre = &cache.pre[l];
        let post = &cache.post[l];
        let mut dpre = delta;
        for ((d, &z), &a) in dpre.data_mut().iter_mut().zip(pre.data()).zip(post.data()) {
            *d *= act.derivative(z, a);
        }
        let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let weights = input.t_matmul(&dpre)?;
        let bias = column_sums(&dpre);
        delta = if l > 0 {
            dpre.matmul_t(&params.hidden[l].weights)?
        } else {
            Matrix::zeros(0, 0)
        };
        grads.push(Dense { weights, bias });
    }
    grads.reverse();
    Ok(grads)
}

/// Gradients with the same layout as [`NetParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub hidden: Vec<Dense>,
    pub head_weights: Matrix,
    pub head_bias: Vector,
    /// `∂J_λ/∂F` from the head at the actual features.
    pub features: Matrix,
}

/// Exact gradients of [`objective_j_lambda`].
///
/// With `feature_grad_override` the trunk receives that matrix at the feature
/// layer instead of `∂J_λ/∂F`; the head gradients still come from the actual logits.
pub fn backward(
    params: &NetParams,
    cache: &ForwardCache,
    labels: &[usize],
    lambda: f64,
    feature_grad_override: Option<&Matrix>,
) -> Result<Gradients> {
    let head = head_backward(params, cache.features(), labels, lambda)?;
    let into_trunk = feature_grad_override.unwrap_or(&head.features);
    let hidden = trunk_backward(params, cache, into_trunk)?;
    Ok(Gradients {
        hidden,
        head_weights: head.weights,
        head_bias: head.bias,
        features: head.features,
    })
}

fn descend(p: &mut [f64], g: &[f64], alpha: f64) {
    for (p, g) in p.iter_mut().zip(g) {
        *p -= alpha * g;
    }
}

/// Applies only the head part of a gradient in place.
pub fn descend_head(params: &mut NetParams, weights: &Matrix, bias: &[f64], alpha: f64) -> Result<()> {
    params.head_weights.same_shape(weights, "head gradient")?;
    if bias.len() != params.head_bias.len() {
        return Err(Error::input("head bias gradient has the wrong length"));
    }
    descend(params.head_weights.data_mut(), weights.data(), alpha);
    descend(&mut params.head_bias, bias, alpha);
    Ok(())
}

/// Applies trunk gradients in place.
pub fn descend_trunk(params: &mut NetParams, grads: &[Dense], alpha: f64) -> Result<()> {
    if grads.len() != params.hidden.len() {
        return Err(Error::input("trunk gradient has the wrong number of layers"));
    }
    for (p, g) in params.hidden.iter().zip(grads) {
        p.weights.same_shape(&g.weights, "trunk gradient")?;
        if p.bias.len() != g.bias.len() {
            return Err(Error::input("trunk bias gradient has the wrong length"));
        }
    }
    for (p, g) in params.hidden.iter_mut().zip(grads) {
        descend(p.weights.data_mut(), g.weights.data(), alpha);
        descend(&mut p.bias, &g.bias, alpha);
    }
    Ok(())
}

/// `p ← p − α·∇p` for every parameter.
pub fn sgd_step(params: &NetParams, grads: &Gradients, alpha: f64) -> Result<NetParams> {
    let mut next = params.clone();
    descend_trunk(&mut next, &grads.hidden, alpha)?;
    descend_head(&mut next, &grads.head_weights, &grads.head_bias, alpha)?;
    Ok(next)
}

/// Index of the largest entry in each row, lowest index on ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}
