use serde::Serialize;

use crate::{AnalysisError, Protocol, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CommPattern {
    Centralized,
    Broadcast,
    Gossip,
}

/// One column of the protocol characteristics table. Complexity entries
/// are exponents of `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolCharacteristics {
    pub protocol: Protocol,
    pub communicating_node: CommPattern,
    pub critical_path_messages: u32,
    pub normal_complexity_exponent: u32,
    pub view_change_complexity_exponent: u32,
    pub responsive: bool,
    /// Set when the recorded critical path does not follow from any message
    /// flow this workbench can construct.
    pub mismatch: Option<&'static str>,
}

pub const TABLE: [ProtocolCharacteristics; 6] = [
    ProtocolCharacteristics {
        protocol: Protocol::Paxos,
        communicating_node: CommPattern::Centralized,
        critical_path_messages: 4,
        normal_complexity_exponent: 1,
        view_change_complexity_exponent: 2,
        responsive: true,
        mismatch: None,
    },
    ProtocolCharacteristics {
        protocol: Protocol::Pbft,
        communicating_node: CommPattern::Broadcast,
        critical_path_messages: 5,
        normal_complexity_exponent: 2,
        view_change_complexity_exponent: 4,
        responsive: true,
        mismatch: None,
    },
    ProtocolCharacteristics {
        protocol: Protocol::Tendermint,
        communicating_node: CommPattern::Gossip,
        critical_path_messages: 5,
        normal_complexity_exponent: 2,
        view_change_complexity_exponent: 3,
        responsive: false,
        mismatch: None,
    },
    ProtocolCharacteristics {
        protocol: Protocol::TendermintStar,
        communicating_node: CommPattern::Centralized,
        critical_path_messages: 8,
        normal_complexity_exponent: 1,
        view_change_complexity_exponent: 2,
        responsive: true,
        mismatch: Some(
            "leader-relayed two-phase flow measures 7 hops including the client round trip",
        ),
    },
    ProtocolCharacteristics {
        protocol: Protocol::HotStuff,
        communicating_node: CommPattern::Centralized,
        critical_path_messages: 10,
        normal_complexity_exponent: 1,
        view_change_complexity_exponent: 2,
        responsive: true,
        mismatch: None,
    },
    ProtocolCharacteristics {
        protocol: Protocol::Streamlet,
        communicating_node: CommPattern::Broadcast,
        critical_path_messages: 4,
        normal_complexity_exponent: 3,
        view_change_complexity_exponent: 4,
        responsive: false,
        mismatch: None,
    },
];

pub fn characteristics(protocol: Protocol) -> Result<&'static ProtocolCharacteristics> {
    TABLE
        .iter()
        .find(|c| c.protocol == protocol)
        .ok_or(AnalysisError::NotModeled(
            protocol,
            "not in the characteristics table",
        ))
}
