use serde::{Deserialize, Serialize};

use super::backprop::{GradientBundle, LayerGrad};
use super::model::LayeredModel;
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_MOMENTUM: f64 = 0.5;
pub const DEFAULT_DECAY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplicative learning-rate decay applied once per communication round.
    pub decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            decay: DEFAULT_DECAY,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, round_index: usize) -> f64 {
        self.learning_rate * self.decay.powi(round_index as i32)
    }
}

/// Heavy-ball momentum buffers plus the current step size.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffers: Vec<LayerGrad>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
}

impl OptimizerState {
    pub fn new(model: &LayeredModel, cfg: SgdConfig) -> Self {
        Self {
            momentum_buffers: GradientBundle::zeros_like(model).layers,
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            decay: cfg.decay,
        }
    }

    pub fn reset_buffers(&mut self) {
        for b in &mut self.momentum_buffers {
            b.weights.iter_mut().for_each(|v| *v = 0.0);
            b.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `buffer <- momentum * buffer + grad; param <- param - lr * buffer`.
    pub fn step(&mut self, model: &mut LayeredModel, grads: &GradientBundle) -> Result<()> {
        if !grads.matches(model) {
            return Err(Error::shape("gradient bundle does not match model"));
        }
        if self.momentum_buffers.len() != model.layers().len() {
            return Err(Error::shape("momentum buffers do not match model"));
        }
        let (lr, beta) = (self.learning_rate, self.momentum);
        for ((layer, grad), buf) in model
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.momentum_buffers)
        {
            if buf.weights.len() != grad.weights.len() || buf.bias.len() != grad.bias.len() {
                return Err(Error::shape("momentum buffers do not match model"));
            }
            for ((p, g), b) in layer
                .weights_mut()
                .iter_mut()
                .zip(&grad.weights)
                .zip(&mut buf.weights)
            {
                *b = beta * *b + g;
                *p -= lr * *b;
            }
            for ((p, g), b) in layer
                .bias_mut()
                .iter_mut()
                .zip(&grad.bias)
                .zip(&mut buf.bias)
            {
                *b = beta * *b + g;
                *p -= lr * *b;
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn sgd_step(
    model: &LayeredModel,
    grads: &GradientBundle,
    opt: &OptimizerState,
) -> Result<(LayeredModel, OptimizerState)> {
    let mut model = model.clone();
    let mut opt = opt.clone();
    opt.step(&mut model, grads)?;
    Ok((model, opt))
}
