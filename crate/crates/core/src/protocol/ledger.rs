use serde::{Deserialize, Serialize};

/// Scalars a client received in one round, by payload kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCounts {
    pub representations: u64,
    pub g_params: u64,
    pub h_params: u64,
    pub full_model: u64,
}

impl CommCounts {
    pub fn total(&self) -> u64 {
        self.representations + self.g_params + self.h_params + self.full_model
    }
}

impl std::ops::AddAssign for CommCounts {
    fn add_assign(&mut self, o: Self) {
        self.representations += o.representations;
        self.g_params += o.g_params;
        self.h_params += o.h_params;
        self.full_model += o.full_model;
    }
}

/// Per-round, per-client communication counts for a whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    rounds: Vec<Vec<CommCounts>>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_round(&mut self, per_client: Vec<CommCounts>) {
        self.rounds.push(per_client);
    }

    pub fn rounds(&self) -> &[Vec<CommCounts>] {
        &self.rounds
    }

    pub fn round(&self, r: usize) -> Option<&[CommCounts]> {
        self.rounds.get(r).map(Vec::as_slice)
    }

    /// Cumulative scalars received by `client` through round index `through` (inclusive).
    pub fn cumulative(&self, client: usize, through: usize) -> u64 {
        self.rounds
            .iter()
            .take(through + 1)
            .filter_map(|r| r.get(client))
            .map(CommCounts::total)
            .sum()
    }

    pub fn total(&self) -> CommCounts {
        let mut acc = CommCounts::default();
        for r in &self.rounds {
            for c in r {
                acc += *c;
            }
        }
        acc
    }
}
