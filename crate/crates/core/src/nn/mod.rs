//! Minimal dense network with manual backpropagation and momentum SGD.
//!
//! Models carry a split boundary: the first `split_index` layers are the
//! feature extractor `g`, the rest the classifier `h`. [`LayeredModel::split`]
//! and [`LayeredModel::combine`] move between the whole model and the two
//! parameter blocks.

mod backprop;
mod layer;
mod loss;
mod model;
mod optim;

pub use backprop::{backward, objective, GradientBundle, LayerGrad};
pub use layer::{Activation, DenseLayer};
pub use loss::{cross_entropy, cross_entropy_logits, softmax};
pub use model::{Classifier, FeatureExtractor, LayeredModel};
pub use optim::{
    sgd_step, OptimizerState, SgdConfig, DEFAULT_DECAY, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM,
};

/// Layer widths of the default desk-scale network, excluding input and output.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];
pub const DEFAULT_SPLIT_INDEX: usize = 2;
