//! Back-of-the-envelope performance models for the consensus engines.
//!
//! * quorum-system load and capacity of the busiest validator,
//! * latency as critical path + client round trip + fixed wait,
//! * the characteristics table (critical path, complexity, responsiveness),
//! * closed-form normal-path message counts checked against the simulator,
//! * a log-log least-squares fitter for measured complexity exponents.

mod characteristics;
mod complexity;
mod load;

pub use characteristics::{characteristics, CommPattern, ProtocolCharacteristics, TABLE};
pub use complexity::{expected_message_count, fit_complexity_exponent};
pub use load::{canonical_load_params, capacity, latency_estimate, load, Capacity, LoadParams};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("{0} has no closed form here: {1}")]
    NotModeled(Protocol, &'static str),
    #[error("need at least 3 distinct n values, got {0}")]
    TooFewSamples(usize),
    #[error("measurements must be positive")]
    NonPositive,
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Paxos,
    Pbft,
    Tendermint,
    #[serde(rename = "tendermint-star")]
    TendermintStar,
    #[serde(rename = "hotstuff")]
    HotStuff,
    Streamlet,
    Snowball,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::Paxos,
        Protocol::Pbft,
        Protocol::Tendermint,
        Protocol::TendermintStar,
        Protocol::HotStuff,
        Protocol::Streamlet,
        Protocol::Snowball,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Paxos => "paxos",
            Protocol::Pbft => "pbft",
            Protocol::Tendermint => "tendermint",
            Protocol::TendermintStar => "tendermint-star",
            Protocol::HotStuff => "hotstuff",
            Protocol::Streamlet => "streamlet",
            Protocol::Snowball => "snowball",
        }
    }

    /// Crash-fault protocols use majority quorums; the rest need `n >= 4`.
    pub fn is_byzantine(self) -> bool {
        !matches!(self, Protocol::Paxos)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        match norm.as_str() {
            "paxos" => Ok(Protocol::Paxos),
            "pbft" => Ok(Protocol::Pbft),
            "tendermint" => Ok(Protocol::Tendermint),
            "tendermint-star" | "tendermint*" | "tendermintstar" => Ok(Protocol::TendermintStar),
            "hotstuff" => Ok(Protocol::HotStuff),
            "streamlet" => Ok(Protocol::Streamlet),
            "snowball" => Ok(Protocol::Snowball),
            _ => Err(AnalysisError::UnknownProtocol(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert_eq!(
            "Tendermint*".parse::<Protocol>().unwrap(),
            Protocol::TendermintStar
        );
        assert!("raft".parse::<Protocol>().is_err());
    }
}
