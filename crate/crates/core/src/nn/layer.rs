use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. The ReLU kink at 0 takes slope 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::shape(format!(
                "weight buffer has {} entries, expected {out_dim}x{in_dim}",
                weights.len()
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::shape(format!(
                "bias has {} entries, expected {out_dim}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Square identity layer with identity activation.
    pub fn identity(dim: usize) -> Self {
        let mut layer = Self::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            layer.weights[i * dim + i] = 1.0;
        }
        layer
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn same_shape(&self, other: &DenseLayer) -> bool {
        self.in_dim == other.in_dim
            && self.out_dim == other.out_dim
            && self.activation == other.activation
    }

    /// Weights then bias, in storage order.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    /// Pre-activations `W x + b` for every row of `inputs`.
    pub(crate) fn pre_activations(&self, inputs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(inputs.rows(), self.out_dim);
        for (r, x) in inputs.iter_rows().enumerate() {
            let z = out.row_mut(r);
            for (o, zo) in z.iter_mut().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                *zo = self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    pub(crate) fn activate(&self, pre: &Matrix) -> Matrix {
        let mut out = pre.clone();
        for r in 0..out.rows() {
            for v in out.row_mut(r) {
                *v = self.activation.apply(*v);
            }
        }
        out
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.in_dim {
            return Err(Error::shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim,
                inputs.cols()
            )));
        }
        Ok(self.activate(&self.pre_activations(inputs)))
    }
}
