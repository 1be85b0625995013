//! Round engine for decentralized personalized federated learning.
//!
//! Each round every client draws a random communication queue of `n_com`
//! peers, receives their unit and auxiliary representations, and computes a
//! divergence to each. If every divergence is at most `th_i` the client drops
//! the queue and adopts one random peer's model ("client-wise dropout").
//! Otherwise it averages feature extractors over the whole queue and
//! classifier heads only over peers whose divergence is strictly below
//! `th_i` ("layer-wise personalization"). Local training then adds a proximal
//! pull of the client's auxiliary representation toward the queue average.
//!
//! Baselines (local training, decentralized FedAvg, decentralized FedPer) and
//! two ablations run under the same engine.

mod aggregate;
mod engine;
mod ledger;
mod queue;
mod train;

use serde::{Deserialize, Serialize};

pub use aggregate::{
    aux_average, average_models, compute_divergences, dropout_replace, layerwise_aggregate,
    pick_donor, should_dropout, weighted_average_layers, Aggregated,
};
pub use engine::{
    run_experiment, run_round, ClientRoundRecord, DatasetSpec, ExperimentSetup, ModelSpec,
    PartitionScheme, RoundMetrics, RunOutput, Simulation,
};
pub use ledger::{CommCounts, CommLedger};
pub use queue::build_queue;
pub use train::{local_train, ClientState};

use crate::error::{Error, Result};
use crate::nn::SgdConfig;
use crate::representation::{AuxRep, UnitRep};
use crate::nn::{Classifier, FeatureExtractor};

pub const DEFAULT_CLIENTS: usize = 30;
pub const DEFAULT_ROUNDS: usize = 150;
pub const DEFAULT_N_COM: usize = 5;
pub const DEFAULT_TH_I: f64 = 0.1;
pub const DEFAULT_MU: f64 = 0.1;
pub const DEFAULT_LOCAL_EPOCHS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    UaPdfl,
    /// Without client-wise dropout.
    UaPdflNoCd,
    /// Without layer-wise personalization (no head gating, no proximal term).
    UaPdflNoLp,
    DFedAvg,
    DFedPer,
    Local,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::UaPdfl,
        Algorithm::UaPdflNoCd,
        Algorithm::UaPdflNoLp,
        Algorithm::DFedAvg,
        Algorithm::DFedPer,
        Algorithm::Local,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::UaPdfl => "ua_pdfl",
            Algorithm::UaPdflNoCd => "ua_pdfl_no_cd",
            Algorithm::UaPdflNoLp => "ua_pdfl_no_lp",
            Algorithm::DFedAvg => "d_fedavg",
            Algorithm::DFedPer => "d_fedper",
            Algorithm::Local => "local",
        }
    }

    pub fn communicates(self) -> bool {
        self != Algorithm::Local
    }

    /// Exchanges unit representations and computes divergences.
    pub fn uses_representations(self) -> bool {
        matches!(
            self,
            Algorithm::UaPdfl | Algorithm::UaPdflNoCd | Algorithm::UaPdflNoLp
        )
    }

    pub fn uses_dropout(self) -> bool {
        matches!(self, Algorithm::UaPdfl | Algorithm::UaPdflNoLp)
    }

    /// Gated heads plus the auxiliary proximal term.
    pub fn uses_layerwise(self) -> bool {
        matches!(self, Algorithm::UaPdfl | Algorithm::UaPdflNoCd)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown algorithm arm {s:?}")))
    }
}

/// Per-round protocol settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub n_com: usize,
    pub th_i: f64,
    pub mu: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub algorithm: Algorithm,
    pub unit_fill: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            n_com: DEFAULT_N_COM,
            th_i: DEFAULT_TH_I,
            mu: DEFAULT_MU,
            local_epochs: DEFAULT_LOCAL_EPOCHS,
            rounds: DEFAULT_ROUNDS,
            batch_size: crate::datagen::DEFAULT_BATCH_SIZE,
            sgd: SgdConfig::default(),
            algorithm: Algorithm::UaPdfl,
            unit_fill: crate::representation::DEFAULT_UNIT_FILL,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.algorithm.communicates() {
            if clients < 2 {
                return Err(Error::config("communicating arms need at least 2 clients"));
            }
            if self.n_com < 1 || self.n_com > clients - 1 {
                return Err(Error::config(format!(
                    "n_com must lie in [1, {}], got {}",
                    clients - 1,
                    self.n_com
                )));
            }
        }
        if !(self.th_i >= 0.0) {
            return Err(Error::config("th_i must be >= 0"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu must be finite and >= 0"));
        }
        if self.local_epochs < 1 {
            return Err(Error::config("local_epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !self.unit_fill.is_finite() {
            return Err(Error::config("unit_fill must be finite"));
        }
        self.sgd.validate()
    }

    /// Proximal coefficient actually applied for this arm.
    pub fn effective_mu(&self) -> f64 {
        if self.algorithm.uses_layerwise() {
            self.mu
        } else {
            0.0
        }
    }
}

/// What a peer sends to the client that queued it.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerPayload {
    pub sender: usize,
    pub unit_rep: UnitRep,
    pub aux_rep: AuxRep,
    pub n_samples: usize,
    pub g_params: Option<FeatureExtractor>,
    pub h_params: Option<Classifier>,
}

impl PeerPayload {
    /// Representations only, as sent before any gating decision.
    pub fn representations(state: &ClientState) -> Self {
        Self {
            sender: state.id,
            unit_rep: state.unit_rep.clone(),
            aux_rep: state.aux_rep.clone(),
            n_samples: state.n_samples(),
            g_params: None,
            h_params: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("fedprox".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = RoundConfig::default();
        cfg.validate(30).unwrap();
        assert!(RoundConfig { n_com: 30, ..cfg }.validate(30).is_err());
        assert!(RoundConfig { n_com: 0, ..cfg }.validate(30).is_err());
        assert!(RoundConfig { th_i: -0.1, ..cfg }.validate(30).is_err());
        assert!(RoundConfig { local_epochs: 0, ..cfg }.validate(30).is_err());
        assert!(cfg.validate(1).is_err());
        RoundConfig {
            algorithm: Algorithm::Local,
            ..cfg
        }
        .validate(1)
        .unwrap();
    }
}
