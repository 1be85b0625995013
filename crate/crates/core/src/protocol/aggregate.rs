use rand::Rng;

use super::train::ClientState;
use super::PeerPayload;
use crate::error::{Error, Result};
use crate::nn::{Classifier, DenseLayer, FeatureExtractor, LayeredModel};
use crate::representation::{js_div, AuxRep, UnitRep};

/// Divergence from `own` to each peer's unit representation, in queue order.
pub fn compute_divergences(own: &UnitRep, peers: &[PeerPayload]) -> Result<Vec<(usize, f64)>> {
    peers
        .iter()
        .map(|p| Ok((p.sender, js_div(own, &p.unit_rep)?)))
        .collect()
}

/// True iff every divergence is `<= th_i`.
pub fn should_dropout(divs: &[f64], th_i: f64) -> Result<bool> {
    if divs.is_empty() {
        return Err(Error::Precondition(
            "dropout decision needs at least one divergence".into(),
        ));
    }
    Ok(divs.iter().all(|&d| d <= th_i))
}

/// Uniformly chosen donor from the queue.
pub fn pick_donor<R: Rng + ?Sized>(queue: &[usize], rng: &mut R) -> Result<usize> {
    if queue.is_empty() {
        return Err(Error::Precondition("cannot pick a donor from an empty queue".into()));
    }
    Ok(queue[rng.random_range(0..queue.len())])
}

/// Replaces `client.model` with an exact copy of one random queue peer's model,
/// taken from `snapshots` (indexed by client id). Returns the donor id.
pub fn dropout_replace<R: Rng + ?Sized>(
    client: &mut ClientState,
    queue: &[usize],
    snapshots: &[ClientState],
    rng: &mut R,
) -> Result<usize> {
    let donor = pick_donor(queue, rng)?;
    let source = snapshots.get(donor).ok_or(Error::UnknownClient(donor))?;
    if !source.model.same_architecture(&client.model) {
        return Err(Error::Protocol(format!(
            "donor {donor} has a different architecture"
        )));
    }
    client.model = source.model.clone();
    Ok(donor)
}

/// `Σ_u (w_u / Σ w) · block_u`, entry by entry.
pub fn weighted_average_layers(blocks: &[(&[DenseLayer], f64)]) -> Result<Vec<DenseLayer>> {
    let (first, _) = blocks
        .first()
        .ok_or_else(|| Error::Precondition("nothing to average".into()))?;
    for (b, w) in blocks {
        if b.len() != first.len() || b.iter().zip(first.iter()).any(|(x, y)| !x.same_shape(y)) {
            return Err(Error::Protocol("cannot average blocks of different shapes".into()));
        }
        if !(*w >= 0.0 && w.is_finite()) {
            return Err(Error::Protocol(format!("invalid aggregation weight {w}")));
        }
    }
    let total: f64 = blocks.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::Protocol("aggregation weights sum to zero".into()));
    }
    let mut out: Vec<DenseLayer> = first
        .iter()
        .map(|l| DenseLayer::zeros(l.in_dim(), l.out_dim(), l.activation()))
        .collect();
    for (block, w) in blocks {
        let coef = w / total;
        for (dst, src) in out.iter_mut().zip(block.iter()) {
            for (d, s) in dst.params_mut().zip(src.params()) {
                *d += coef * s;
            }
        }
    }
    Ok(out)
}

/// Result of a layer-wise aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub model: LayeredModel,
    /// Peers whose classifier head entered the average.
    pub h_peers: Vec<usize>,
}

/// Feature extractor averaged over the client and every queue peer; classifier
/// head averaged over the client and the peers with `div < th_i` only. Weights
/// are training-set sizes.
///
/// Every peer payload must carry `g_params`; peers passing the head gate must
/// also carry `h_params`.
pub fn layerwise_aggregate(
    own: &LayeredModel,
    own_samples: usize,
    peers: &[PeerPayload],
    divs: &[f64],
    th_i: f64,
) -> Result<Aggregated> {
    if peers.len() != divs.len() {
        return Err(Error::shape("one divergence per peer required"));
    }
    let (own_g, own_h) = own.split();
    let mut g_blocks: Vec<(&[DenseLayer], f64)> = vec![(&own_g.0, own_samples as f64)];
    let mut h_blocks: Vec<(&[DenseLayer], f64)> = vec![(&own_h.0, own_samples as f64)];
    let mut h_peers = Vec::new();
    for (p, &d) in peers.iter().zip(divs) {
        if d < th_i {
            let h = p.h_params.as_ref().ok_or_else(|| {
                Error::Protocol(format!("peer {} passed the gate but sent no head", p.sender))
            })?;
            h_blocks.push((&h.0, p.n_samples as f64));
            h_peers.push(p.sender);
        }
        let g = p.g_params.as_ref().ok_or_else(|| {
            Error::Protocol(format!("peer {} sent no feature extractor", p.sender))
        })?;
        g_blocks.push((&g.0, p.n_samples as f64));
    }
    let g = FeatureExtractor(weighted_average_layers(&g_blocks)?);
    let h = Classifier(weighted_average_layers(&h_blocks)?);
    let model = LayeredModel::combine(g, h)?;
    if !model.same_architecture(own) {
        return Err(Error::Protocol("aggregated model changed architecture".into()));
    }
    Ok(Aggregated { model, h_peers })
}

/// Whole-model average of the client and its peers, weighted by sample count.
pub fn average_models(
    own: &LayeredModel,
    own_samples: usize,
    peers: &[(&LayeredModel, usize)],
) -> Result<LayeredModel> {
    let mut blocks: Vec<(&[DenseLayer], f64)> = vec![(own.layers(), own_samples as f64)];
    for (m, n) in peers {
        if !m.same_architecture(own) {
            return Err(Error::Protocol("peer model has a different architecture".into()));
        }
        blocks.push((m.layers(), *n as f64));
    }
    LayeredModel::new(weighted_average_layers(&blocks)?, own.split_index())
}

/// Unweighted mean of the client's auxiliary representation and its peers'.
pub fn aux_average(own: &AuxRep, peers: &[&AuxRep]) -> Result<AuxRep> {
    let n = own.len();
    if peers.iter().any(|p| p.len() != n) {
        return Err(Error::shape("auxiliary representations differ in length"));
    }
    let mut sum = own.features().to_vec();
    for p in peers {
        for (s, v) in sum.iter_mut().zip(p.features()) {
            *s += v;
        }
    }
    let count = (peers.len() + 1) as f64;
    AuxRep::new(sum.into_iter().map(|s| s / count).collect())
}
