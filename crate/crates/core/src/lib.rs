//! Shared building blocks for the qlab consensus workbench.
//!
//! Every protocol engine in the workspace is a deterministic state machine
//! implementing [`Engine`]. The simulator in `qlab-simnet` (or the loopback
//! socket transport) feeds it [`Event`]s and interprets the returned
//! [`Action`]s. This crate holds the pieces they all share: blocks, votes and
//! certificates, quorum arithmetic, the pluggable [`Authenticator`], the
//! canonical wire encoding and the [`MetricsLedger`].

pub mod auth;
pub mod codec;
pub mod engine;
pub mod kv;
pub mod mempool;
pub mod metrics;
pub mod quorum;
pub mod types;

pub use auth::{AuthTag, Authenticator};
pub use engine::{
    ms, Action, Destination, Endpoint, Engine, EngineCounters, Event, MessageEnvelope, NodeContext,
    ProtocolMessage, Time, TimerId,
};
pub use kv::KvStore;
pub use mempool::Mempool;
pub use metrics::{MetricsLedger, NodeCounters, RequestRecord};
pub use quorum::{quorum_sizes, FaultModel, QuorumConfig, VoteCollector};
pub use types::{Block, ClientId, Command, Digest, NodeId, QuorumCertificate, Vote, VoteKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("quorum certificate invalid: {0}")]
    Certificate(String),
    #[error("decode failed: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
