//! Dense feedforward network with a fixed layer graph and analytic gradients.
//!
//! All computation is batched: inputs are `(batch, features)` matrices and every
//! layer computes `y = act(x Wᵀ + b)` with `W` stored row-major as `(out, in)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Activation {
    Linear = 0,
    Tanh = 1,
    Relu = 2,
}

impl Activation {
    pub fn from_u8(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiplies `grad` in place by the activation derivative, expressed in
    /// terms of the activation output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

/// One affine layer. An empty `bias` means the layer is bias-free.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }
}

/// Feedforward network: hidden layers share one activation, the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Mlp::forward_tape`]; consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `values[l]` is the input to layer `l`; the last entry is the network output.
    values: Vec<Array2<f64>>,
}

impl Tape {
    pub fn input(&self) -> &Array2<f64> {
        &self.values[0]
    }

    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("tape always holds the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.values.pop().expect("tape always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }
}

impl Mlp {
    /// Builds a network from `dims = [in, hidden.., out]` with weights and biases
    /// uniform in `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        Self::with_output_bias(dims, hidden, true, rng)
    }

    pub fn with_output_bias<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer dims must have at least two positive entries, got {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                let last = i + 1 == n;
                let bias = if last && !output_bias {
                    Array1::zeros(0)
                } else {
                    Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound))
                };
                Layer {
                    weights,
                    bias,
                    activation: if last { Activation::Linear } else { hidden },
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape("layer chain", pair[0].out_dim(), pair[1].in_dim()));
            }
        }
        for l in &layers {
            if l.has_bias() && l.bias.len() != l.out_dim() {
                return Err(Error::shape("layer bias", l.out_dim(), l.bias.len()));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.in_dim() {
            return Err(Error::shape("network input", self.in_dim(), cols));
        }
        Ok(())
    }

    fn layer_forward(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights.t());
        if layer.has_bias() {
            z += &layer.bias;
        }
        layer.activation.apply(&mut z);
        z
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = Self::layer_forward(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h = Self::layer_forward(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::shape("network input", self.in_dim(), x.len()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that keeps every intermediate activation for [`Mlp::backward`].
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<Tape> {
        self.check_input(x.ncols())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_owned());
        for layer in &self.layers {
            let next = Self::layer_forward(layer, &values[values.len() - 1].view());
            values.push(next);
        }
        Ok(Tape { values })
    }

    /// Gradients of `Σ_b upstream[b]·f(x_b)` with respect to every parameter and
    /// to the inputs.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(Error::shape("upstream gradient", out.len(), upstream.len()));
        }
        let mut grad = upstream.to_owned();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&tape.values[l + 1], &mut grad);
            let input = &tape.values[l];
            let weights = grad.t().dot(input);
            let bias = if layer.has_bias() {
                grad.sum_axis(Axis(0))
            } else {
                Array1::zeros(0)
            };
            grad = grad.dot(&layer.weights);
            layers.push(LayerGrad { weights, bias });
        }
        layers.reverse();
        Ok((MlpGrads { layers }, grad))
    }

    /// Single-sample convenience wrapper around [`Mlp::backward`].
    pub fn backward_one(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::shape("network input", self.in_dim(), x.len()))?;
        let tape = self.forward_tape(view)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|_| Error::shape("upstream gradient", self.out_dim(), upstream.len()))?;
        let (grads, dx) = self.backward(&tape, up)?;
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }
}

impl Parameters for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Parameters for MlpGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}
