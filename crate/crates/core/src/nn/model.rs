use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Parameter block of the first `split_index` layers (the shared feature extractor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor(pub Vec<DenseLayer>);

/// Parameter block of the remaining layers (the personalizable classifier head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier(pub Vec<DenseLayer>);

impl FeatureExtractor {
    pub fn num_params(&self) -> usize {
        self.0.iter().map(DenseLayer::num_params).sum()
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.0.last().map(DenseLayer::out_dim)
    }
}

impl Classifier {
    pub fn num_params(&self) -> usize {
        self.0.iter().map(DenseLayer::num_params).sum()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.0.first().map(DenseLayer::in_dim)
    }
}

/// Stack of dense layers whose first `split_index` layers form the feature
/// extractor `g` and the rest the classifier `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    layers: Vec<DenseLayer>,
    split_index: usize,
}

impl LayeredModel {
    pub fn new(layers: Vec<DenseLayer>, split_index: usize) -> Result<Self> {
        if split_index == 0 || split_index >= layers.len() {
            return Err(Error::shape(format!(
                "split index {split_index} must lie in [1, {})",
                layers.len()
            )));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            split_index,
        })
    }

    /// ReLU MLP over `dims = [input, hidden..., output]` with an identity output layer.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], split_index: usize, rng: &mut R) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::shape("an MLP with a split needs at least two layers"));
        }
        if dims.contains(&0) {
            return Err(Error::shape("layer widths must be positive"));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers, split_index)
    }

    /// Same architecture as `mlp`, every parameter zero.
    pub fn zeros(dims: &[usize], split_index: usize) -> Result<Self> {
        if dims.len() < 3 || dims.contains(&0) {
            return Err(Error::shape("invalid MLP dimensions"));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::zeros(w[0], w[1], act)
            })
            .collect();
        Self::new(layers, split_index)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Width of the g|h boundary.
    pub fn feature_dim(&self) -> usize {
        self.layers[self.split_index - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(DenseLayer::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(DenseLayer::params_mut)
    }

    pub fn same_architecture(&self, other: &LayeredModel) -> bool {
        self.split_index == other.split_index
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "model expects inputs of length {}, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut a = inputs.clone();
        for layer in &self.layers {
            a = layer.forward(&a)?;
        }
        Ok(a)
    }

    /// Output of the feature extractor `g` only.
    pub fn feature_forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut a = inputs.clone();
        for layer in &self.layers[..self.split_index] {
            a = layer.forward(&a)?;
        }
        Ok(a)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward(&m)?.row(0).to_vec())
    }

    pub fn feature_forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.feature_forward(&m)?.row(0).to_vec())
    }

    pub fn split(&self) -> (FeatureExtractor, Classifier) {
        (
            FeatureExtractor(self.layers[..self.split_index].to_vec()),
            Classifier(self.layers[self.split_index..].to_vec()),
        )
    }

    /// `g ⊕ h`.
    pub fn combine(g: FeatureExtractor, h: Classifier) -> Result<Self> {
        match (g.output_dim(), h.input_dim()) {
            (Some(out), Some(inp)) if out == inp => {}
            (Some(out), Some(inp)) => {
                return Err(Error::shape(format!(
                    "feature extractor emits {out} features, classifier expects {inp}"
                )))
            }
            _ => return Err(Error::shape("both parameter blocks must be non-empty")),
        }
        let split_index = g.0.len();
        let mut layers = g.0;
        layers.extend(h.0);
        Self::new(layers, split_index)
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(inputs)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    /// Fraction of rows whose argmax logit matches the label. Empty input gives 0.
    pub fn accuracy(&self, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.len() != inputs.rows() {
            return Err(Error::shape("label count differs from row count"));
        }
        if labels.is_empty() {
            return Ok(0.0);
        }
        let hits = self
            .predict(inputs)?
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
