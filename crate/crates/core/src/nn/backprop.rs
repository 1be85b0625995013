//! Hand-derived gradients of the local objective
//!
//! ```text
//! J(w) = CE(h(g(X)), y) + mu * || g(x_unit) - aux_target ||^2
//! ```
//!
//! where `CE` is the batch-mean cross-entropy on softmax of the logits. The
//! proximal term is differentiated through the feature extractor only, since
//! `h` does not appear in it.

use super::layer::DenseLayer;
use super::loss::log_sum_exp;
use super::model::LayeredModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights().len()],
            bias: vec![0.0; layer.bias().len()],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

/// Per-layer gradients plus the objective value they were computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    /// Full objective: `data_loss + proximal_loss`.
    pub loss: f64,
    pub data_loss: f64,
    pub proximal_loss: f64,
}

impl GradientBundle {
    pub fn zeros_like(model: &LayeredModel) -> Self {
        Self {
            layers: model.layers().iter().map(LayerGrad::zeros_like).collect(),
            loss: 0.0,
            data_loss: 0.0,
            proximal_loss: 0.0,
        }
    }

    /// Flattened in the same order as [`LayeredModel::params`].
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(LayerGrad::values)
    }

    pub fn matches(&self, model: &LayeredModel) -> bool {
        self.layers.len() == model.layers().len()
            && self.layers.iter().zip(model.layers()).all(|(g, l)| {
                g.weights.len() == l.weights().len() && g.bias.len() == l.bias().len()
            })
    }
}

/// Activations cached by a forward pass: `outputs[0]` is the input, `outputs[k+1]`
/// the post-activation of layer `k`, `pre[k]` its pre-activation.
struct Trace {
    outputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

fn trace(layers: &[DenseLayer], inputs: &Matrix) -> Trace {
    let mut outputs = Vec::with_capacity(layers.len() + 1);
    let mut pre = Vec::with_capacity(layers.len());
    outputs.push(inputs.clone());
    for layer in layers {
        let z = layer.pre_activations(outputs.last().expect("input pushed above"));
        outputs.push(layer.activate(&z));
        pre.push(z);
    }
    Trace { outputs, pre }
}

/// Backpropagates `d_out` (gradient w.r.t. the last traced layer's output) and
/// accumulates parameter gradients into `grads`.
fn accumulate(layers: &[DenseLayer], tr: &Trace, mut d_out: Matrix, grads: &mut [LayerGrad]) {
    for k in (0..layers.len()).rev() {
        let layer = &layers[k];
        let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
        let act = layer.activation();
        let z = &tr.pre[k];
        let a_in = &tr.outputs[k];
        let mut d_z = d_out;
        for r in 0..d_z.rows() {
            for (d, zv) in d_z.row_mut(r).iter_mut().zip(z.row(r)) {
                *d *= act.derivative(*zv);
            }
        }
        let g = &mut grads[k];
        for r in 0..d_z.rows() {
            let dz = d_z.row(r);
            let x = a_in.row(r);
            for o in 0..n_out {
                if dz[o] == 0.0 {
                    continue;
                }
                g.bias[o] += dz[o];
                let gw = &mut g.weights[o * n_in..(o + 1) * n_in];
                for (gi, xi) in gw.iter_mut().zip(x) {
                    *gi += dz[o] * xi;
                }
            }
        }
        if k == 0 {
            break;
        }
        let mut d_prev = Matrix::zeros(d_z.rows(), n_in);
        let w = layer.weights();
        for r in 0..d_z.rows() {
            let dz = d_z.row(r);
            let dp = d_prev.row_mut(r);
            for o in 0..n_out {
                if dz[o] == 0.0 {
                    continue;
                }
                for (dpi, wi) in dp.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *dpi += dz[o] * wi;
                }
            }
        }
        d_out = d_prev;
    }
}

/// Gradient of batch cross-entropy plus the optional proximal term.
///
/// The proximal branch is skipped entirely when `aux_target` is `None` or
/// `mu == 0`, so those cases reproduce plain cross-entropy gradients exactly.
pub fn backward(
    model: &LayeredModel,
    inputs: &Matrix,
    labels: &[usize],
    unit_input: &[f64],
    aux_target: Option<&[f64]>,
    mu: f64,
) -> Result<GradientBundle> {
    if !(mu >= 0.0) {
        return Err(Error::Precondition(format!("mu must be >= 0, got {mu}")));
    }
    if inputs.cols() != model.input_dim() {
        return Err(Error::shape(format!(
            "model expects inputs of length {}, got {}",
            model.input_dim(),
            inputs.cols()
        )));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::shape("batch rows and labels differ in count"));
    }
    if labels.is_empty() {
        return Err(Error::shape("empty mini-batch"));
    }
    let classes = model.output_dim();
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!("label {y} outside {classes} classes")));
    }
    if let Some(t) = aux_target {
        if t.len() != model.feature_dim() {
            return Err(Error::shape(format!(
                "auxiliary target has length {}, feature extractor emits {}",
                t.len(),
                model.feature_dim()
            )));
        }
    }

    let layers = model.layers();
    let mut bundle = GradientBundle::zeros_like(model);

    let tr = trace(layers, inputs);
    let logits = tr.outputs.last().expect("at least one layer");
    let batch = labels.len() as f64;
    let mut d_logits = Matrix::zeros(logits.rows(), classes);
    let mut data_loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        data_loss += lse - row[y];
        let d = d_logits.row_mut(r);
        for (c, dv) in d.iter_mut().enumerate() {
            *dv = (row[c] - lse).exp() / batch;
        }
        d[y] -= 1.0 / batch;
    }
    data_loss = (data_loss / batch).max(0.0);
    accumulate(layers, &tr, d_logits, &mut bundle.layers);

    let mut proximal_loss = 0.0;
    if let Some(target) = aux_target.filter(|_| mu > 0.0) {
        if unit_input.len() != model.input_dim() {
            return Err(Error::shape(format!(
                "unit input has length {}, model expects {}",
                unit_input.len(),
                model.input_dim()
            )));
        }
        let g_layers = &layers[..model.split_index()];
        let u = Matrix::from_vec(1, unit_input.len(), unit_input.to_vec())?;
        let tr_u = trace(g_layers, &u);
        let feats = tr_u.outputs.last().expect("split index >= 1");
        let mut d_feat = Matrix::zeros(1, target.len());
        for ((d, f), t) in d_feat.row_mut(0).iter_mut().zip(feats.row(0)).zip(target) {
            let diff = f - t;
            proximal_loss += diff * diff;
            *d = 2.0 * mu * diff;
        }
        proximal_loss *= mu;
        accumulate(g_layers, &tr_u, d_feat, &mut bundle.layers[..g_layers.len()]);
    }

    bundle.data_loss = data_loss;
    bundle.proximal_loss = proximal_loss;
    bundle.loss = data_loss + proximal_loss;
    Ok(bundle)
}

/// Evaluates the objective `backward` differentiates, without gradients.
pub fn objective(
    model: &LayeredModel,
    inputs: &Matrix,
    labels: &[usize],
    unit_input: &[f64],
    aux_target: Option<&[f64]>,
    mu: f64,
) -> Result<f64> {
    let logits = model.forward(inputs)?;
    let mut loss = super::loss::cross_entropy_logits(&logits, labels)?;
    if let Some(target) = aux_target.filter(|_| mu > 0.0) {
        let feats = model.feature_forward_one(unit_input)?;
        if feats.len() != target.len() {
            return Err(Error::shape("auxiliary target length mismatch"));
        }
        loss += mu
            * feats
                .iter()
                .zip(target)
                .map(|(f, t)| (f - t) * (f - t))
                .sum::<f64>();
    }
    Ok(loss)
}
