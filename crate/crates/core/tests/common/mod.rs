#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uapdfl_core::harness::{probe_divergence, ExperimentSpec, ProbeSpec};
use uapdfl_core::nn::{backward, Activation, LayeredModel};
use uapdfl_core::protocol::{Algorithm, PeerPayload};
use uapdfl_core::representation::{AuxRep, UnitRep};
use uapdfl_core::Matrix;

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Identity => z,
    }
}

/// Forward pass through layers `[from, to)` with plain loops.
fn ref_layers(model: &LayeredModel, x: &[f64], from: usize, to: usize) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in &model.layers()[from..to] {
        let w = l.weights();
        h = (0..l.out_dim())
            .map(|o| {
                let z: f64 = l.bias()[o]
                    + (0..l.in_dim()).map(|i| w[o * l.in_dim() + i] * h[i]).sum::<f64>();
                act(l.activation(), z)
            })
            .collect();
    }
    h
}

/// Batch-mean cross entropy plus `mu * |g(unit) - target|^2`, computed without
/// touching the library's forward or loss code.
pub fn ref_objective(
    model: &LayeredModel,
    xs: &[Vec<f64>],
    labels: &[usize],
    unit: &[f64],
    target: Option<&[f64]>,
    mu: f64,
) -> f64 {
    let n = model.layers().len();
    let mut ce = 0.0;
    for (x, &y) in xs.iter().zip(labels) {
        let z = ref_layers(model, x, 0, n);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        ce += lse - z[y];
    }
    ce /= xs.len() as f64;
    if let Some(t) = target {
        let f = ref_layers(model, unit, 0, model.split_index());
        ce += mu * f.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    ce
}

/// Max over parameters of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`
/// for one seeded (model, batch, mu) case, using central differences.
pub fn gradient_case(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let input = rng.random_range(2..6);
    let h1 = rng.random_range(3..8);
    let h2 = rng.random_range(2..6);
    let classes = rng.random_range(2..5);
    let split = rng.random_range(1..=2);
    let mut model = LayeredModel::mlp(&[input, h1, h2, classes], split, &mut rng).unwrap();
    // zero biases put dead units exactly on the ReLU kink, where differences are meaningless
    for l in model.layers_mut() {
        for b in l.bias_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let batch = rng.random_range(1..9);
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..input).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let unit = vec![1.0; input];
    // every other case exercises the proximal term
    let mu = if seed % 2 == 0 { 0.0 } else { rng.random_range(0.05..2.0) };
    let feat = model.feature_dim();
    let target: Vec<f64> = (0..feat).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tgt = (mu > 0.0).then_some(target.as_slice());

    let rows = Matrix::from_rows(&xs).unwrap();
    let grads = backward(&model, &rows, &labels, &unit, tgt, mu).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let count = model.num_params();
    for k in 0..count {
        let mut plus = model.clone();
        *plus.params_mut().nth(k).unwrap() += h;
        let mut minus = model.clone();
        *minus.params_mut().nth(k).unwrap() -= h;
        let numeric = (ref_objective(&plus, &xs, &labels, &unit, tgt, mu)
            - ref_objective(&minus, &xs, &labels, &unit, tgt, mu))
            / (2.0 * h);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    (worst, mu)
}

/// Divergences after local training on the three-client layout
/// (clients 0 and 1 on classes {0,1}, client 2 on {2,3}).
pub struct LabelSetProbe {
    pub same: f64,
    pub cross: [f64; 2],
    pub accuracy: Vec<f64>,
}

pub fn label_set_probe(seed: u64, shared_init: bool) -> LabelSetProbe {
    let mut spec = ExperimentSpec::default();
    spec.model.shared_init = shared_init;
    spec.probe = ProbeSpec {
        class_sets: vec![vec![0, 1], vec![0, 1], vec![2, 3]],
        rounds: 10,
        n_com: 2,
        arm: Algorithm::Local,
    };
    let out = probe_divergence(&spec, seed).unwrap();
    let d = out.matrices.last().unwrap();
    LabelSetProbe {
        same: d[0][1],
        cross: [d[0][2], d[1][2]],
        accuracy: out.final_accuracy,
    }
}

/// Payload carrying a peer's full split model, as sent in an aggregation round.
pub fn full_payload(sender: usize, model: &LayeredModel, n: usize) -> PeerPayload {
    let (g, h) = model.split();
    PeerPayload {
        sender,
        unit_rep: UnitRep::uniform(model.output_dim()).unwrap(),
        aux_rep: AuxRep::new(vec![0.0; model.feature_dim()]).unwrap(),
        n_samples: n,
        g_params: Some(g),
        h_params: Some(h),
    }
}

/// Entry-by-entry weighted sum: extractor parameters over everyone, head
/// parameters over the client and the peers with `div < th`.
pub fn brute_force_aggregate(
    own: &LayeredModel,
    own_n: usize,
    peers: &[(&LayeredModel, usize)],
    divs: &[f64],
    th: f64,
) -> Vec<f64> {
    let g_len: usize = own.layers()[..own.split_index()]
        .iter()
        .map(|l| l.num_params())
        .sum();
    let own_p: Vec<f64> = own.params().copied().collect();
    let peer_p: Vec<Vec<f64>> = peers.iter().map(|(m, _)| m.params().copied().collect()).collect();
    (0..own_p.len())
        .map(|k| {
            let mut num = own_n as f64 * own_p[k];
            let mut den = own_n as f64;
            for (j, (_, n)) in peers.iter().enumerate() {
                if k < g_len || divs[j] < th {
                    num += *n as f64 * peer_p[j][k];
                    den += *n as f64;
                }
            }
            num / den
        })
        .collect()
}
