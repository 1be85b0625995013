//! TOML experiment specification.
//!
//! Every key is optional; missing keys take the documented defaults and
//! unknown keys are rejected. See `configs/experiment.toml` in the repository
//! root for an annotated document.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{DEFAULT_BATCH_SIZE, DEFAULT_MIN_SAMPLES};
use crate::error::{Error, Result};
use crate::nn::{SgdConfig, DEFAULT_DECAY, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM};
use crate::protocol::{
    Algorithm, DatasetSpec, ExperimentSetup, ModelSpec, PartitionScheme, RoundConfig,
    DEFAULT_CLIENTS,
};

pub const DEFAULT_OUT_DIR: &str = "results";

/// Divergence probe: a handful of clients with hand-picked label sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    /// One class set per probe client.
    pub class_sets: Vec<Vec<usize>>,
    pub rounds: usize,
    pub n_com: usize,
    pub arm: Algorithm,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            class_sets: vec![vec![0, 1], vec![0, 1], vec![2, 3]],
            rounds: 20,
            n_com: 2,
            arm: Algorithm::UaPdfl,
        }
    }
}

/// Quadratic convergence lab settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckSpec {
    pub clients: usize,
    pub dim: usize,
    pub mu: f64,
    pub smoothness: f64,
    pub heterogeneity: f64,
    pub sigma: f64,
    pub rounds: usize,
    pub trials: usize,
}

impl Default for BoundCheckSpec {
    fn default() -> Self {
        Self {
            clients: 10,
            dim: 10,
            mu: 0.1,
            smoothness: 1.0,
            heterogeneity: 1.0,
            sigma: 0.5,
            rounds: 200,
            trials: 100,
        }
    }
}

/// A validated experiment: one setup run for every (arm, seed) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub clients: usize,
    pub dataset: DatasetSpec,
    pub partition: PartitionScheme,
    pub min_samples: usize,
    pub model: ModelSpec,
    /// Round settings; `protocol.algorithm` is overridden per arm.
    pub protocol: RoundConfig,
    pub arms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub record_divergences: bool,
    pub probe: ProbeSpec,
    pub bound_check: BoundCheckSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let setup = ExperimentSetup::default();
        Self {
            clients: setup.clients,
            dataset: setup.dataset,
            partition: setup.partition,
            min_samples: setup.min_samples,
            model: setup.model,
            protocol: setup.protocol,
            arms: Algorithm::ALL.to_vec(),
            seeds: vec![0],
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            record_divergences: false,
            probe: ProbeSpec::default(),
            bound_check: BoundCheckSpec::default(),
        }
    }
}

impl ExperimentSpec {
    /// Setup for a single arm.
    pub fn setup(&self, arm: Algorithm) -> ExperimentSetup {
        ExperimentSetup {
            clients: self.clients,
            dataset: self.dataset,
            partition: self.partition.clone(),
            min_samples: self.min_samples,
            model: self.model.clone(),
            protocol: RoundConfig {
                algorithm: arm,
                ..self.protocol
            },
            record_divergences: self.record_divergences,
        }
    }

    /// Copy restricted to one arm and one seed, used as a run snapshot.
    pub fn single(&self, arm: Algorithm, seed: u64) -> Self {
        Self {
            arms: vec![arm],
            seeds: vec![seed],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::config("arms: at least one arm is required"));
        }
        let unique: BTreeSet<_> = self.arms.iter().collect();
        if unique.len() != self.arms.len() {
            return Err(Error::config("arms: duplicate arm"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds: at least one seed is required"));
        }
        if BTreeSet::from_iter(&self.seeds).len() != self.seeds.len() {
            return Err(Error::config("seeds: duplicate seed"));
        }
        if self.clients == 0 {
            return Err(Error::config("partition.clients must be >= 1"));
        }
        let p = &self.protocol;
        if self.arms.iter().any(|a| a.communicates()) && p.n_com + 1 > self.clients {
            return Err(Error::config(format!(
                "protocol.n_com = {} must be <= clients - 1 = {}",
                p.n_com,
                self.clients.saturating_sub(1)
            )));
        }
        let checks: [(&str, bool); 9] = [
            ("protocol.n_com", p.n_com >= 1),
            ("protocol.th_i", p.th_i >= 0.0 && p.th_i.is_finite()),
            ("protocol.mu", p.mu >= 0.0 && p.mu.is_finite()),
            ("protocol.local_epochs", p.local_epochs >= 1),
            ("protocol.batch_size", p.batch_size >= 1),
            ("protocol.learning_rate", p.sgd.learning_rate >= 0.0 && p.sgd.learning_rate.is_finite()),
            ("protocol.momentum", (0.0..1.0).contains(&p.sgd.momentum)),
            ("protocol.lr_decay", p.sgd.decay > 0.0 && p.sgd.decay <= 1.0),
            ("protocol.unit_fill", p.unit_fill.is_finite()),
        ];
        if let Some((key, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::config(format!("{key} is out of range")));
        }
        match &self.partition {
            PartitionScheme::Dirichlet { beta } if !(*beta > 0.0 && beta.is_finite()) => {
                return Err(Error::config("partition.beta must be > 0"));
            }
            PartitionScheme::Shards { classes_per_client }
                if *classes_per_client == 0 || *classes_per_client > self.dataset.num_classes =>
            {
                return Err(Error::config(format!(
                    "partition.classes_per_client must lie in [1, {}]",
                    self.dataset.num_classes
                )));
            }
            _ => {}
        }
        let d = &self.dataset;
        if d.num_classes < 2 {
            return Err(Error::config("dataset.num_classes must be >= 2"));
        }
        if d.input_dim == 0 {
            return Err(Error::config("dataset.input_dim must be >= 1"));
        }
        if d.samples_per_class < 2 {
            return Err(Error::config("dataset.samples_per_class must be >= 2"));
        }
        if !(d.spread >= 0.0 && d.spread.is_finite()) {
            return Err(Error::config("dataset.spread must be finite and >= 0"));
        }
        self.model
            .validate()
            .map_err(|e| Error::config(format!("model: {e}")))?;
        let probe = &self.probe;
        if probe.class_sets.len() < 2 {
            return Err(Error::config("probe.class_sets needs at least two clients"));
        }
        if probe
            .class_sets
            .iter()
            .any(|s| s.is_empty() || s.iter().any(|&c| c >= d.num_classes))
        {
            return Err(Error::config("probe.class_sets names a class outside the dataset"));
        }
        if probe.rounds == 0 {
            return Err(Error::config("probe.rounds must be >= 1"));
        }
        if probe.arm.communicates() && (probe.n_com == 0 || probe.n_com >= probe.class_sets.len()) {
            return Err(Error::config(format!(
                "probe.n_com must lie in [1, {}]",
                probe.class_sets.len() - 1
            )));
        }
        let b = &self.bound_check;
        if b.clients == 0 || b.dim == 0 || b.rounds == 0 || b.trials == 0 {
            return Err(Error::config(
                "bound_check.clients, dim, rounds and trials must be >= 1",
            ));
        }
        if !(b.mu > 0.0 && b.mu <= b.smoothness && b.smoothness.is_finite()) {
            return Err(Error::config("bound_check.mu must satisfy 0 < mu <= smoothness"));
        }
        if !(b.heterogeneity >= 0.0 && b.sigma >= 0.0 && b.sigma.is_finite()) {
            return Err(Error::config("bound_check.heterogeneity and sigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    arms: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    record_divergences: Option<bool>,
    #[serde(default)]
    dataset: RawDataset,
    #[serde(default)]
    partition: RawPartition,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    protocol: RawProtocol,
    #[serde(default)]
    probe: RawProbe,
    #[serde(default)]
    bound_check: RawBoundCheck,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    num_classes: Option<usize>,
    input_dim: Option<usize>,
    samples_per_class: Option<usize>,
    spread: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classes_per_client: Option<usize>,
    min_samples: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    hidden: Option<Vec<usize>>,
    split_index: Option<usize>,
    shared_init: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    n_com: Option<usize>,
    th_i: Option<f64>,
    mu: Option<f64>,
    local_epochs: Option<usize>,
    rounds: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    lr_decay: Option<f64>,
    unit_fill: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    class_sets: Option<Vec<Vec<usize>>>,
    rounds: Option<usize>,
    n_com: Option<usize>,
    arm: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundCheck {
    clients: Option<usize>,
    dim: Option<usize>,
    mu: Option<f64>,
    smoothness: Option<f64>,
    heterogeneity: Option<f64>,
    sigma: Option<f64>,
    rounds: Option<usize>,
    trials: Option<usize>,
}

fn parse_arm(key: &str, name: &str) -> Result<Algorithm> {
    name.parse()
        .map_err(|_| Error::config(format!("{key}: unknown arm `{name}`")))
}

/// Parses and validates a TOML experiment document.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    let d = ExperimentSpec::default();

    let partition = match (raw.partition.beta, raw.partition.classes_per_client) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "partition.beta and partition.classes_per_client are mutually exclusive",
            ))
        }
        (Some(beta), None) => PartitionScheme::Dirichlet { beta },
        (None, Some(classes_per_client)) => PartitionScheme::Shards { classes_per_client },
        (None, None) => d.partition.clone(),
    };
    let arms = match raw.arms {
        Some(names) => names
            .iter()
            .map(|n| parse_arm("arms", n))
            .collect::<Result<Vec<_>>>()?,
        None => d.arms.clone(),
    };
    let p = raw.protocol;
    let dp = d.protocol;
    let probe = ProbeSpec {
        class_sets: raw.probe.class_sets.unwrap_or(d.probe.class_sets),
        rounds: raw.probe.rounds.unwrap_or(d.probe.rounds),
        n_com: raw.probe.n_com.unwrap_or(d.probe.n_com),
        arm: match raw.probe.arm {
            Some(name) => parse_arm("probe.arm", &name)?,
            None => d.probe.arm,
        },
    };
    let b = raw.bound_check;
    let db = d.bound_check;
    let spec = ExperimentSpec {
        clients: raw.partition.clients.unwrap_or(DEFAULT_CLIENTS),
        dataset: DatasetSpec {
            num_classes: raw.dataset.num_classes.unwrap_or(d.dataset.num_classes),
            input_dim: raw.dataset.input_dim.unwrap_or(d.dataset.input_dim),
            samples_per_class: raw
                .dataset
                .samples_per_class
                .unwrap_or(d.dataset.samples_per_class),
            spread: raw.dataset.spread.unwrap_or(d.dataset.spread),
        },
        partition,
        min_samples: raw.partition.min_samples.unwrap_or(DEFAULT_MIN_SAMPLES),
        model: ModelSpec {
            hidden: raw.model.hidden.unwrap_or(d.model.hidden),
            split_index: raw.model.split_index.unwrap_or(d.model.split_index),
            shared_init: raw.model.shared_init.unwrap_or(d.model.shared_init),
        },
        protocol: RoundConfig {
            n_com: p.n_com.unwrap_or(dp.n_com),
            th_i: p.th_i.unwrap_or(dp.th_i),
            mu: p.mu.unwrap_or(dp.mu),
            local_epochs: p.local_epochs.unwrap_or(dp.local_epochs),
            rounds: p.rounds.unwrap_or(dp.rounds),
            batch_size: p.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            sgd: SgdConfig {
                learning_rate: p.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE),
                momentum: p.momentum.unwrap_or(DEFAULT_MOMENTUM),
                decay: p.lr_decay.unwrap_or(DEFAULT_DECAY),
            },
            algorithm: dp.algorithm,
            unit_fill: p.unit_fill.unwrap_or(dp.unit_fill),
        },
        arms,
        seeds: raw.seeds.unwrap_or(d.seeds),
        out_dir: raw.out_dir.unwrap_or(d.out_dir),
        record_divergences: raw.record_divergences.unwrap_or(d.record_divergences),
        probe,
        bound_check: BoundCheckSpec {
            clients: b.clients.unwrap_or(db.clients),
            dim: b.dim.unwrap_or(db.dim),
            mu: b.mu.unwrap_or(db.mu),
            smoothness: b.smoothness.unwrap_or(db.smoothness),
            heterogeneity: b.heterogeneity.unwrap_or(db.heterogeneity),
            sigma: b.sigma.unwrap_or(db.sigma),
            rounds: b.rounds.unwrap_or(db.rounds),
            trials: b.trials.unwrap_or(db.trials),
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Renders a spec as a complete TOML document with every key spelled out.
pub fn render(spec: &ExperimentSpec) -> Result<String> {
    let (beta, classes_per_client) = match &spec.partition {
        PartitionScheme::Dirichlet { beta } => (Some(*beta), None),
        PartitionScheme::Shards { classes_per_client } => (None, Some(*classes_per_client)),
        PartitionScheme::ClassSets { .. } => {
            return Err(Error::Unsupported(
                "class-set partitions are configured through [probe]".into(),
            ))
        }
    };
    let p = &spec.protocol;
    let b = &spec.bound_check;
    let raw = RawSpec {
        arms: Some(spec.arms.iter().map(|a| a.name().to_string()).collect()),
        seeds: Some(spec.seeds.clone()),
        out_dir: Some(spec.out_dir.clone()),
        record_divergences: Some(spec.record_divergences),
        dataset: RawDataset {
            num_classes: Some(spec.dataset.num_classes),
            input_dim: Some(spec.dataset.input_dim),
            samples_per_class: Some(spec.dataset.samples_per_class),
            spread: Some(spec.dataset.spread),
        },
        partition: RawPartition {
            clients: Some(spec.clients),
            beta,
            classes_per_client,
            min_samples: Some(spec.min_samples),
        },
        model: RawModel {
            hidden: Some(spec.model.hidden.clone()),
            split_index: Some(spec.model.split_index),
            shared_init: Some(spec.model.shared_init),
        },
        protocol: RawProtocol {
            n_com: Some(p.n_com),
            th_i: Some(p.th_i),
            mu: Some(p.mu),
            local_epochs: Some(p.local_epochs),
            rounds: Some(p.rounds),
            batch_size: Some(p.batch_size),
            learning_rate: Some(p.sgd.learning_rate),
            momentum: Some(p.sgd.momentum),
            lr_decay: Some(p.sgd.decay),
            unit_fill: Some(p.unit_fill),
        },
        probe: RawProbe {
            class_sets: Some(spec.probe.class_sets.clone()),
            rounds: Some(spec.probe.rounds),
            n_com: Some(spec.probe.n_com),
            arm: Some(spec.probe.arm.name().to_string()),
        },
        bound_check: RawBoundCheck {
            clients: Some(b.clients),
            dim: Some(b.dim),
            mu: Some(b.mu),
            smoothness: Some(b.smoothness),
            heterogeneity: Some(b.heterogeneity),
            sigma: Some(b.sigma),
            rounds: Some(b.rounds),
            trials: Some(b.trials),
        },
    };
    toml::to_string(&raw).map_err(|e| Error::config(e.to_string()))
}
