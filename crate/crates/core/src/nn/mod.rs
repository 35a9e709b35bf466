//! Dense feed-forward networks with hand-written backpropagation.

mod gradcheck;
mod sgd;

pub use gradcheck::grad_check;
pub use sgd::{sgd_step, SgdConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StageError};

/// Version tag written into every persisted model.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Activations recorded by [`DenseNet::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` feeds layer `l`; `inputs[len]` is the network output.
    inputs: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients with the same shapes as a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights *= k;
            l.bias *= k;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers.iter().position(|l| {
            l.weights.iter().any(|v| !v.is_finite()) || l.bias.iter().any(|v| !v.is_finite())
        })
    }
}

impl DenseNet {
    /// Network with layer widths `widths[0] -> ... -> widths[last]`, `hidden`
    /// activation on inner layers and `output` on the last one.
    pub fn new<R: Rng>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|w| *w == 0) {
            return Err(StageError::validation(format!(
                "invalid layer widths {widths:?}"
            )));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| Layer::glorot(w[0], w[1], if l == last { output } else { hidden }, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(StageError::validation("a network needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.ncols() {
                return Err(StageError::shape(format!(
                    "layer {l}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.weights.ncols()
                )));
            }
            if l > 0 && layers[l - 1].weights.ncols() != layer.weights.nrows() {
                return Err(StageError::shape(format!(
                    "layer {l} expects {} inputs but the previous layer emits {}",
                    layer.weights.nrows(),
                    layers[l - 1].weights.ncols()
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(StageError::Numeric(format!("layer {l} holds non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.weights.ncols()));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_width() {
            return Err(StageError::shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            x = layer_forward(layer, x.view());
        }
        Ok(x)
    }

    pub fn forward_trace(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(batch.to_owned());
        for layer in &self.layers {
            let next = layer_forward(layer, inputs.last().expect("non-empty").view());
            inputs.push(next);
        }
        Ok(Trace { inputs })
    }

    /// Backpropagate `grad_output` (d loss / d output) through a recorded
    /// forward pass. Returns parameter gradients and d loss / d input.
    pub fn backward(&self, trace: &Trace, grad_output: &Array2<f64>) -> (NetGrads, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.inputs[l + 1];
            ndarray::Zip::from(&mut delta)
                .and(out)
                .for_each(|d, &y| *d *= layer.activation.derivative_from_output(y));
            let input = &trace.inputs[l];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&layer.weights.t());
            grads.push(LayerGrads {
                weights: gw,
                bias: gb,
            });
            delta = next;
        }
        grads.reverse();
        (NetGrads { layers: grads }, delta)
    }

    /// Sum of squared weight-matrix entries (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Gradient of `k * weight_sq_norm()`.
    pub fn weight_penalty_grads(&self, k: f64) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: &l.weights * (2.0 * k),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Overwrite parameters from a flat slice in [`params_flat`] order;
    /// returns the number of values consumed.
    pub fn set_params_flat(&mut self, params: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = params[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = params[k];
                k += 1;
            }
        }
        k
    }

    pub fn to_document(&self) -> NetDocument {
        NetDocument {
            format_version: FORMAT_VERSION,
            widths: self.widths(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &NetDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(StageError::validation(format!(
                "model format {} is not supported (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        if doc.widths.len() != doc.layers.len() + 1 || doc.activations.len() != doc.layers.len() {
            return Err(StageError::shape("network document widths and layers disagree"));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (l, p) in doc.layers.iter().enumerate() {
            let (fi, fo) = (doc.widths[l], doc.widths[l + 1]);
            let weights = Array2::from_shape_vec((fi, fo), p.weights.clone())
                .map_err(|e| StageError::shape(format!("layer {l}: {e}")))?;
            layers.push(Layer {
                weights,
                bias: Array1::from(p.bias.clone()),
                activation: doc.activations[l],
            });
        }
        Self::from_layers(layers)
    }
}

fn layer_forward(layer: &Layer, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weights);
    z += &layer.bias;
    if layer.activation != Activation::Identity {
        z.mapv_inplace(|v| layer.activation.apply(v));
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Row-major `fan_in x fan_out`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Persisted form of a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetDocument {
    pub format_version: u32,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<LayerParams>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;
    use ndarray::array;

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![Layer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn tanh_output_is_open_interval() {
        let mut rng = rng_from_seed(1);
        let net = DenseNet::new(&[4, 8, 3], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let x = Array2::from_shape_fn((16, 4), |(i, j)| 0.1 * (i as f64 - 8.0) * (j as f64 + 1.0));
        let y = net.forward(x.view()).unwrap();
        assert!(y.iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn zero_weights_with_sigmoid_give_half() {
        let mut rng = rng_from_seed(2);
        let mut net =
            DenseNet::new(&[3, 5, 2], Activation::Tanh, Activation::Sigmoid, &mut rng).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_params_flat(&zeros);
        let y = net.forward(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert!(y.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let mut rng = rng_from_seed(3);
        let net = DenseNet::new(&[3, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert!(matches!(
            net.forward(Array2::zeros((1, 4)).view()),
            Err(StageError::Shape(_))
        ));
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = rng_from_seed(4);
        let net = DenseNet::new(&[3, 6, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        assert_eq!(net.forward(x.view()).unwrap(), net.forward(x.view()).unwrap());
    }

    #[test]
    fn glorot_limits_hold() {
        let mut rng = rng_from_seed(5);
        let net = DenseNet::new(&[10, 20], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn document_round_trip_is_exact() {
        let mut rng = rng_from_seed(6);
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let json = serde_json::to_string(&net.to_document()).unwrap();
        let doc: NetDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(DenseNet::from_document(&doc).unwrap(), net);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from_seed(7);
        let net = DenseNet::new(&[3, 5, 4, 2], Activation::Tanh, Activation::Sigmoid, &mut rng)
            .unwrap();
        let x = array![[0.3, -0.2, 0.9], [-1.0, 0.4, 0.1]];
        let target = array![[0.2, 0.9], [0.7, 0.1]];
        let loss = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut n = net.clone();
            n.set_params_flat(p);
            let trace = n.forward_trace(x.view())?;
            let diff = trace.output() - &target;
            let value = diff.iter().map(|d| d * d).sum::<f64>();
            let (g, _) = n.backward(&trace, &(&diff * 2.0));
            Ok((value, g.flat()))
        };
        let err = grad_check(loss, &net.params_flat(), 1e-6).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }
}
