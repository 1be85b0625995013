use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{
    aux_average, average_models, compute_divergences, dropout_replace, layerwise_aggregate,
    should_dropout,
};
use super::ledger::{CommCounts, CommLedger};
use super::queue::build_queue;
use super::train::{local_train, ClientState};
use super::{Algorithm, PeerPayload, RoundConfig};
use crate::datagen::{
    dirichlet_partition, gen_gaussian_mixture, class_set_partition, shard_partition, Partition,
    SyntheticDataset, DEFAULT_INPUT_DIM, DEFAULT_MIN_SAMPLES, DEFAULT_NUM_CLASSES,
    DEFAULT_SAMPLES_PER_CLASS, DEFAULT_SPREAD,
};
use crate::error::{Error, Result};
use crate::nn::{LayeredModel, OptimizerState, DEFAULT_HIDDEN, DEFAULT_SPLIT_INDEX};
use crate::representation::{js_div, make_unit_tensor, UnitTensor};
use crate::seed::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: DEFAULT_NUM_CLASSES,
            input_dim: DEFAULT_INPUT_DIM,
            samples_per_class: DEFAULT_SAMPLES_PER_CLASS,
            spread: DEFAULT_SPREAD,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self, seed: u64) -> Result<SyntheticDataset> {
        gen_gaussian_mixture(
            self.num_classes,
            self.input_dim,
            self.samples_per_class,
            self.spread,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionScheme {
    Dirichlet { beta: f64 },
    Shards { classes_per_client: usize },
    /// Client `m` holds exactly the classes `class_sets[m]`.
    ClassSets { class_sets: Vec<Vec<usize>> },
}

impl PartitionScheme {
    pub fn apply(
        &self,
        ds: &SyntheticDataset,
        clients: usize,
        min_samples: usize,
        seed: u64,
    ) -> Result<Partition> {
        match self {
            PartitionScheme::Dirichlet { beta } => {
                dirichlet_partition(ds, clients, *beta, min_samples, seed)
            }
            PartitionScheme::Shards { classes_per_client } => {
                shard_partition(ds, clients, *classes_per_client, min_samples, seed)
            }
            PartitionScheme::ClassSets { class_sets } => {
                if class_sets.len() != clients {
                    return Err(Error::config(format!(
                        "{} class sets given for {clients} clients",
                        class_sets.len()
                    )));
                }
                class_set_partition(ds, class_sets, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub split_index: usize,
    /// All clients start from one common initialization.
    pub shared_init: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            split_index: DEFAULT_SPLIT_INDEX,
            shared_init: true,
        }
    }
}

impl ModelSpec {
    pub fn dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(num_classes);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("model.hidden needs at least one positive width"));
        }
        if self.split_index < 1 || self.split_index > self.hidden.len() {
            return Err(Error::config(format!(
                "model.split_index must lie in [1, {}]",
                self.hidden.len()
            )));
        }
        Ok(())
    }
}

/// Everything needed to run one (arm, seed) simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetup {
    pub clients: usize,
    pub dataset: DatasetSpec,
    pub partition: PartitionScheme,
    pub min_samples: usize,
    pub model: ModelSpec,
    pub protocol: RoundConfig,
    pub record_divergences: bool,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        Self {
            clients: super::DEFAULT_CLIENTS,
            dataset: DatasetSpec::default(),
            partition: PartitionScheme::Dirichlet { beta: 0.5 },
            min_samples: DEFAULT_MIN_SAMPLES,
            model: ModelSpec::default(),
            protocol: RoundConfig::default(),
            record_divergences: false,
        }
    }
}

impl ExperimentSetup {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients must be >= 1"));
        }
        if self.dataset.num_classes == 0
            || self.dataset.input_dim == 0
            || self.dataset.samples_per_class == 0
        {
            return Err(Error::config("dataset sizes must be positive"));
        }
        if !(self.dataset.spread >= 0.0 && self.dataset.spread.is_finite()) {
            return Err(Error::config("dataset.spread must be finite and >= 0"));
        }
        self.model.validate()?;
        self.protocol.validate(self.clients)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub client: usize,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub dropout: bool,
    pub donor: Option<usize>,
    /// Peers whose classifier head entered this client's aggregate.
    pub h_peers: usize,
    pub queue: Vec<usize>,
    pub divergences: Vec<(usize, f64)>,
    pub comm: CommCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: Vec<ClientRoundRecord>,
}

impl RoundMetrics {
    pub fn mean_accuracy(&self) -> f64 {
        if self.clients.is_empty() {
            return 0.0;
        }
        self.clients.iter().map(|c| c.test_accuracy).sum::<f64>() / self.clients.len() as f64
    }

    pub fn dropout_count(&self) -> usize {
        self.clients.iter().filter(|c| c.dropout).count()
    }
}

struct RoundContext<'a> {
    ds: &'a SyntheticDataset,
    unit: &'a UnitTensor,
    cfg: &'a RoundConfig,
    round: usize,
    seed: u64,
}

fn client_round(
    state: &mut ClientState,
    snapshots: &[ClientState],
    ctx: &RoundContext<'_>,
) -> Result<ClientRoundRecord> {
    let cfg = ctx.cfg;
    let alg = cfg.algorithm;
    let id = state.id;
    let round = ctx.round as u64;
    let mut rec = ClientRoundRecord {
        client: id,
        test_accuracy: 0.0,
        train_loss: 0.0,
        dropout: false,
        donor: None,
        h_peers: 0,
        queue: Vec::new(),
        divergences: Vec::new(),
        comm: CommCounts::default(),
    };
    let mut aux_avg = None;

    if alg.communicates() {
        let mut qrng = rng_for(ctx.seed, &[stream::QUEUE, round, id as u64]);
        let queue = build_queue(id, snapshots.len(), cfg.n_com, &mut qrng)?;
        let own = &snapshots[id];
        let (g0, h0) = own.model.split();
        let (g_count, h_count) = (g0.num_params() as u64, h0.num_params() as u64);
        let full_count = g_count + h_count;
        let q = queue.len() as u64;
        let n_samples = state.n_samples();

        match alg {
            Algorithm::UaPdfl | Algorithm::UaPdflNoCd | Algorithm::UaPdflNoLp => {
                let mut payloads: Vec<PeerPayload> = queue
                    .iter()
                    .map(|&j| PeerPayload::representations(&snapshots[j]))
                    .collect();
                let per_peer = own.unit_rep.len() as u64
                    + if alg.uses_layerwise() {
                        own.aux_rep.len() as u64
                    } else {
                        0
                    };
                rec.comm.representations = per_peer * q;
                let divs = compute_divergences(&own.unit_rep, &payloads)?;
                let div_values: Vec<f64> = divs.iter().map(|(_, d)| *d).collect();
                rec.divergences = divs;
                if alg.uses_layerwise() {
                    let auxes: Vec<_> = payloads.iter().map(|p| &p.aux_rep).collect();
                    aux_avg = Some(aux_average(&own.aux_rep, &auxes)?);
                }
                if alg.uses_dropout() && should_dropout(&div_values, cfg.th_i)? {
                    let mut drng = rng_for(ctx.seed, &[stream::DROPOUT, round, id as u64]);
                    let donor = dropout_replace(state, &queue, snapshots, &mut drng)?;
                    rec.dropout = true;
                    rec.donor = Some(donor);
                    rec.comm.full_model = full_count;
                } else if alg.uses_layerwise() {
                    for (p, &d) in payloads.iter_mut().zip(&div_values) {
                        let (g, h) = snapshots[p.sender].model.split();
                        p.g_params = Some(g);
                        rec.comm.g_params += g_count;
                        if d < cfg.th_i {
                            p.h_params = Some(h);
                            rec.comm.h_params += h_count;
                        }
                    }
                    let agg =
                        layerwise_aggregate(&state.model, n_samples, &payloads, &div_values, cfg.th_i)?;
                    state.model = agg.model;
                    rec.h_peers = agg.h_peers.len();
                } else {
                    let peers: Vec<(&LayeredModel, usize)> = queue
                        .iter()
                        .map(|&j| (&snapshots[j].model, snapshots[j].n_samples()))
                        .collect();
                    state.model = average_models(&state.model, n_samples, &peers)?;
                    rec.comm.full_model = full_count * q;
                    rec.h_peers = queue.len();
                }
            }
            Algorithm::DFedAvg => {
                let peers: Vec<(&LayeredModel, usize)> = queue
                    .iter()
                    .map(|&j| (&snapshots[j].model, snapshots[j].n_samples()))
                    .collect();
                state.model = average_models(&state.model, n_samples, &peers)?;
                rec.comm.full_model = full_count * q;
                rec.h_peers = queue.len();
            }
            Algorithm::DFedPer => {
                let payloads: Vec<PeerPayload> = queue
                    .iter()
                    .map(|&j| {
                        let mut p = PeerPayload::representations(&snapshots[j]);
                        p.g_params = Some(snapshots[j].model.split().0);
                        p
                    })
                    .collect();
                // heads are never shared
                let never = vec![f64::INFINITY; payloads.len()];
                let agg = layerwise_aggregate(&state.model, n_samples, &payloads, &never, cfg.th_i)?;
                state.model = agg.model;
                rec.comm.g_params = g_count * q;
            }
            Algorithm::Local => unreachable!("local arm does not communicate"),
        }
        rec.queue = queue;
    }

    let losses = local_train(
        state,
        ctx.ds,
        ctx.unit,
        aux_avg.as_ref(),
        cfg,
        ctx.round.saturating_sub(1),
        derive_seed(ctx.seed, &[stream::BATCHES]),
    )?;
    rec.train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    rec.test_accuracy = state.test_accuracy(ctx.ds)?;
    Ok(rec)
}

/// Executes communication round `round` (1-based) for every client.
///
/// Peers serve the state they held at the start of the round, so the outcome
/// does not depend on the order in which clients are processed; clients are
/// updated in parallel. Randomness for client `i` comes from streams keyed by
/// `(seed, round, i)`.
pub fn run_round(
    states: &mut [ClientState],
    ds: &SyntheticDataset,
    unit: &UnitTensor,
    cfg: &RoundConfig,
    round: usize,
    seed: u64,
) -> Result<(RoundMetrics, Vec<CommCounts>)> {
    cfg.validate(states.len())?;
    if states.iter().enumerate().any(|(i, s)| s.id != i) {
        return Err(Error::Protocol("client ids must equal their positions".into()));
    }
    if let Some(first) = states.first() {
        if states.iter().any(|s| !s.model.same_architecture(&first.model)) {
            return Err(Error::Protocol("clients must share one architecture".into()));
        }
    }
    let snapshots = states.to_vec();
    let ctx = RoundContext {
        ds,
        unit,
        cfg,
        round,
        seed,
    };
    let records = states
        .par_iter_mut()
        .map(|s| client_round(s, &snapshots, &ctx))
        .collect::<Result<Vec<_>>>()?;
    let deltas = records.iter().map(|r| r.comm).collect();
    Ok((
        RoundMetrics {
            round,
            clients: records,
        },
        deltas,
    ))
}

/// A running simulation: dataset, clients and the communication ledger.
#[derive(Debug, Clone)]
pub struct Simulation {
    ds: SyntheticDataset,
    unit: UnitTensor,
    cfg: RoundConfig,
    states: Vec<ClientState>,
    ledger: CommLedger,
    seed: u64,
    round: usize,
}

impl Simulation {
    pub fn new(setup: &ExperimentSetup, seed: u64) -> Result<Self> {
        setup.validate()?;
        let ds = setup.dataset.generate(seed)?;
        let partition = setup
            .partition
            .apply(&ds, setup.clients, setup.min_samples, seed)?;
        Self::from_partition(ds, &partition, &setup.model, setup.protocol, seed)
    }

    pub fn from_partition(
        ds: SyntheticDataset,
        partition: &Partition,
        model: &ModelSpec,
        cfg: RoundConfig,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        cfg.validate(partition.num_clients())?;
        let dims = model.dims(ds.input_dim(), ds.num_classes());
        let unit = make_unit_tensor(ds.input_dim(), cfg.unit_fill)?;
        let shared = LayeredModel::mlp(&dims, model.split_index, &mut rng_for(seed, &[stream::INIT]))?;
        let states = (0..partition.num_clients())
            .map(|id| {
                let m = if model.shared_init {
                    shared.clone()
                } else {
                    LayeredModel::mlp(
                        &dims,
                        model.split_index,
                        &mut rng_for(seed, &[stream::INIT, id as u64]),
                    )?
                };
                let opt = OptimizerState::new(&m, cfg.sgd);
                ClientState::new(
                    id,
                    m,
                    opt,
                    partition.train[id].clone(),
                    partition.test[id].clone(),
                    &unit,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_states(ds, states, cfg, seed)
    }

    /// Wraps pre-built client states. Ids must equal positions.
    pub fn from_states(
        ds: SyntheticDataset,
        states: Vec<ClientState>,
        cfg: RoundConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate(states.len())?;
        let unit = make_unit_tensor(ds.input_dim(), cfg.unit_fill)?;
        let mut ledger = CommLedger::new();
        ledger.push_round(vec![CommCounts::default(); states.len()]);
        Ok(Self {
            ds,
            unit,
            cfg,
            states,
            ledger,
            seed,
            round: 0,
        })
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.ds
    }

    pub fn unit_tensor(&self) -> &UnitTensor {
        &self.unit
    }

    pub fn config(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[ClientState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [ClientState] {
        &mut self.states
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Evaluation of the current models without training (round 0 record).
    pub fn evaluate(&self) -> Result<RoundMetrics> {
        let clients = self
            .states
            .iter()
            .map(|s| {
                Ok(ClientRoundRecord {
                    client: s.id,
                    test_accuracy: s.test_accuracy(&self.ds)?,
                    train_loss: s.train_loss(&self.ds)?,
                    dropout: false,
                    donor: None,
                    h_peers: 0,
                    queue: Vec::new(),
                    divergences: Vec::new(),
                    comm: CommCounts::default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoundMetrics {
            round: self.round,
            clients,
        })
    }

    pub fn step(&mut self) -> Result<RoundMetrics> {
        let next = self.round + 1;
        let (metrics, deltas) = run_round(
            &mut self.states,
            &self.ds,
            &self.unit,
            &self.cfg,
            next,
            self.seed,
        )?;
        self.ledger.push_round(deltas);
        self.round = next;
        Ok(metrics)
    }

    /// Full pairwise divergence matrix of the current unit representations.
    pub fn divergence_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.states.len();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = js_div(&self.states[i].unit_rep, &self.states[j].unit_rep)?;
                out[i][j] = d;
                out[j][i] = d;
            }
        }
        Ok(out)
    }
}

/// Output of one (arm, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `records[r]` is round `r`; `records[0]` evaluates the initial models.
    pub records: Vec<RoundMetrics>,
    pub ledger: CommLedger,
    /// Pairwise divergence matrices per round, when requested.
    pub divergences: Option<Vec<Vec<Vec<f64>>>>,
}

impl RunOutput {
    pub fn final_round(&self) -> &RoundMetrics {
        self.records.last().expect("round 0 is always recorded")
    }

    pub fn final_mean_accuracy(&self) -> f64 {
        self.final_round().mean_accuracy()
    }
}

pub fn run_experiment(setup: &ExperimentSetup, seed: u64) -> Result<RunOutput> {
    let mut sim = Simulation::new(setup, seed)?;
    let mut records = vec![sim.evaluate()?];
    let mut divs = setup
        .record_divergences
        .then(|| sim.divergence_matrix().map(|d| vec![d]))
        .transpose()?;
    for _ in 0..setup.protocol.rounds {
        records.push(sim.step()?);
        if let Some(d) = divs.as_mut() {
            d.push(sim.divergence_matrix()?);
        }
    }
    Ok(RunOutput {
        algorithm: setup.protocol.algorithm,
        seed,
        records,
        ledger: sim.ledger,
        divergences: divs,
    })
}
