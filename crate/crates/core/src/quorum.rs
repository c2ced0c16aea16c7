use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::NodeId;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultModel {
    Crash,
    Byzantine,
}

/// Quorum sizes for a roster of `n` validators.
///
/// `f` is `(n - 1) / 2` under crash faults and `(n - 1) / 3` under Byzantine
/// faults; `byzantine_quorum` is `n - f` for the Byzantine `f`.
/// Protocol engines use these; the analysis crate uses its own `Q` for the
/// load formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub n: usize,
    pub f: usize,
    pub majority_quorum: usize,
    pub byzantine_quorum: usize,
    pub model: FaultModel,
}

impl QuorumConfig {
    /// Overrides `f`. Requires `n >= 3f + 1` so that `n - f >= 2f + 1`.
    pub fn with_f(mut self, f: usize) -> Result<Self> {
        if self.n < 3 * f + 1 {
            return Err(Error::Config(format!("n={} cannot tolerate f={f}", self.n)));
        }
        self.f = f;
        self.byzantine_quorum = self.n - f;
        Ok(self)
    }

    /// Quorum the protocol waits for: majority under crash faults, `n - f`
    /// under Byzantine faults.
    pub fn quorum(&self) -> usize {
        match self.model {
            FaultModel::Crash => self.majority_quorum,
            FaultModel::Byzantine => self.byzantine_quorum,
        }
    }

    /// `f + 1`: enough replies that one is from an honest node.
    pub fn weak_quorum(&self) -> usize {
        self.f + 1
    }
}

pub fn quorum_sizes(n: usize, model: FaultModel) -> Result<QuorumConfig> {
    if n == 0 {
        return Err(Error::Config(
            "roster must contain at least one node".into(),
        ));
    }
    if model == FaultModel::Byzantine && n < 4 {
        return Err(Error::Config(format!(
            "byzantine model needs n >= 4 (n = 3f + 1), got {n}"
        )));
    }
    let f = match model {
        FaultModel::Crash => (n - 1) / 2,
        FaultModel::Byzantine => (n - 1) / 3,
    };
    Ok(QuorumConfig {
        n,
        f,
        majority_quorum: n / 2 + 1,
        byzantine_quorum: n - (n - 1) / 3,
        model,
    })
}

/// Counts distinct voters per key and reports the moment a key first
/// reaches the threshold.
#[derive(Clone, Debug)]
pub struct VoteCollector<K: Ord> {
    threshold: usize,
    sets: BTreeMap<K, BTreeSet<NodeId>>,
    reached: BTreeSet<K>,
}

impl<K: Ord + Clone> VoteCollector<K> {
    pub fn new(threshold: usize) -> Self {
        Self {
            threshold,
            sets: BTreeMap::new(),
            reached: BTreeSet::new(),
        }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    /// Returns `true` exactly once per key, when the threshold is crossed.
    pub fn add(&mut self, key: K, voter: NodeId) -> bool {
        let set = self.sets.entry(key.clone()).or_default();
        set.insert(voter);
        if set.len() >= self.threshold && !self.reached.contains(&key) {
            self.reached.insert(key);
            return true;
        }
        false
    }

    pub fn count(&self, key: &K) -> usize {
        self.sets.get(key).map_or(0, BTreeSet::len)
    }

    pub fn has_quorum(&self, key: &K) -> bool {
        self.count(key) >= self.threshold
    }

    pub fn voters(&self, key: &K) -> Vec<NodeId> {
        self.sets
            .get(key)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Drops every key for which `keep` returns false.
    pub fn retain(&mut self, mut keep: impl FnMut(&K) -> bool) {
        self.sets.retain(|k, _| keep(k));
        self.reached.retain(|k| keep(k));
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.sets.keys()
    }
}
