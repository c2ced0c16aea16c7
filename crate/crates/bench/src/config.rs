//! Benchmark cell configuration, loadable from JSON.
//!
//! Durations are milliseconds (fractions allowed) except the CPU cost
//! model, which is in microseconds per envelope and per byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qlab_analysis::Protocol;
use qlab_core::{ms, FaultModel, NodeId, Time};
use qlab_simnet::{Behavior, CpuCostModel, FaultPlan, LatencyModel};

use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyProfile {
    /// Constant 0.25 ms one-way delay.
    Lan,
    /// Four regions, nodes assigned round-robin.
    Wan,
    Constant(f64),
    Jitter {
        lo: f64,
        hi: f64,
    },
    Matrix {
        node_region: Vec<usize>,
        delays: Vec<Vec<f64>>,
    },
}

impl LatencyProfile {
    pub fn model(&self, n: usize) -> LatencyModel {
        match self {
            LatencyProfile::Lan => LatencyModel::Constant(ms(0.25)),
            LatencyProfile::Wan => LatencyModel::wan(n),
            LatencyProfile::Constant(d) => LatencyModel::Constant(ms(*d)),
            LatencyProfile::Jitter { lo, hi } => LatencyModel::UniformJitter {
                lo: ms(*lo),
                hi: ms(*hi),
            },
            LatencyProfile::Matrix {
                node_region,
                delays,
            } => LatencyModel::RegionMatrix {
                node_region: node_region.clone(),
                delays: delays
                    .iter()
                    .map(|r| r.iter().map(|d| ms(*d)).collect())
                    .collect(),
            },
        }
    }

    fn is_wan(&self) -> bool {
        matches!(self, LatencyProfile::Wan | LatencyProfile::Matrix { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    CrashStop,
    SilentLeader,
    Equivocate,
    DelayOutbound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub node: u32,
    pub behavior: FaultKind,
    #[serde(default)]
    pub at: f64,
    /// Extra outbound delay for `delay_outbound`.
    #[serde(default)]
    pub delay: f64,
}

impl FaultSpec {
    fn behavior(&self) -> Behavior {
        match self.behavior {
            FaultKind::CrashStop => Behavior::CrashStop,
            FaultKind::SilentLeader => Behavior::SilentLeader,
            FaultKind::Equivocate => Behavior::Equivocate,
            FaultKind::DelayOutbound => Behavior::DelayOutbound(ms(self.delay)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnowballParams {
    pub k: usize,
    pub alpha: f64,
    pub beta: u32,
}

impl Default for SnowballParams {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 0.8,
            beta: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub protocol: Protocol,
    pub n: usize,
    /// Defaults to crash faults for Paxos and Snowball, Byzantine otherwise.
    pub f_model: Option<FaultModel>,
    pub clients: u32,
    /// Stop each client after this many requests.
    pub requests_per_client: Option<u64>,
    /// Submit every this many ms regardless of replies; closed loop if unset.
    pub request_interval: Option<f64>,
    pub payload_bytes: usize,
    pub latency: LatencyProfile,
    /// Defaults to [`BenchConfig::LAN_CPU`].
    pub cpu: Option<CpuCostModel>,
    pub batch: usize,
    /// Slots a Paxos or PBFT leader keeps in flight.
    pub window: usize,
    /// View, election or propose timeout; each engine's default if unset.
    pub timeout: Option<f64>,
    /// Tendermint commit wait. 2 ms on LAN, 50 ms on WAN if unset.
    pub delta: Option<f64>,
    /// Streamlet epoch. 3 ms on LAN, 50 ms on WAN if unset.
    pub epoch: Option<f64>,
    pub snowball: SnowballParams,
    pub seed: u64,
    pub horizon: f64,
    pub faults: Vec<FaultSpec>,
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Pbft,
            n: 4,
            f_model: None,
            clients: 10,
            requests_per_client: None,
            request_interval: None,
            payload_bytes: 16,
            latency: LatencyProfile::Lan,
            cpu: None,
            batch: 32,
            window: 64,
            timeout: None,
            delta: None,
            epoch: None,
            snowball: SnowballParams::default(),
            seed: 1,
            horizon: 1_000.0,
            faults: Vec::new(),
            output: None,
        }
    }
}

impl BenchConfig {
    /// Serialization and handling cost per envelope on the LAN profile.
    pub const LAN_CPU: CpuCostModel = CpuCostModel {
        per_message: 10,
        per_byte: 0.05,
    };

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let cfg: BenchConfig =
            serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.fault_model() == FaultModel::Byzantine && self.n < 4 {
            return bad(format!("{} needs n >= 4", self.protocol));
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be > 0".into());
        }
        if self.batch == 0 || self.window == 0 {
            return bad("batch and window must be >= 1".into());
        }
        if let Some(i) = self.request_interval {
            if !(i > 0.0) {
                return bad("request_interval must be > 0".into());
            }
        }
        if let Some(f) = self.faults.iter().find(|f| f.node as usize >= self.n) {
            return bad(format!(
                "fault targets node {} outside roster of {}",
                f.node, self.n
            ));
        }
        self.latency
            .model(self.n)
            .validate(self.n)
            .map_err(BenchError::Config)?;
        Ok(())
    }

    pub fn fault_model(&self) -> FaultModel {
        self.f_model.unwrap_or(match self.protocol {
            Protocol::Paxos | Protocol::Snowball => FaultModel::Crash,
            _ => FaultModel::Byzantine,
        })
    }

    pub fn fault_plan(&self) -> FaultPlan {
        self.faults.iter().fold(FaultPlan::none(), |p, f| {
            p.with(NodeId(f.node), f.behavior(), ms(f.at))
        })
    }

    pub fn cpu_model(&self) -> CpuCostModel {
        self.cpu.unwrap_or(Self::LAN_CPU)
    }

    pub fn horizon_time(&self) -> Time {
        ms(self.horizon)
    }

    pub fn delta_time(&self) -> Time {
        ms(self
            .delta
            .unwrap_or(if self.latency.is_wan() { 50.0 } else { 2.0 }))
    }

    pub fn epoch_time(&self) -> Time {
        ms(self
            .epoch
            .unwrap_or(if self.latency.is_wan() { 50.0 } else { 3.0 }))
    }

    pub fn timeout_time(&self) -> Option<Time> {
        self.timeout.map(ms)
    }
}
