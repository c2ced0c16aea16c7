//! The behavioral contract every protocol engine implements.

use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::Authenticator;
use crate::codec;
use crate::quorum::QuorumConfig;
use crate::types::{Block, ClientId, Command, NodeId};

/// Simulated time in microseconds (wall-clock microseconds under the socket
/// transport). Configuration speaks milliseconds; see [`ms`].
pub type Time = u64;

pub const MICROS_PER_MS: Time = 1_000;

/// Converts fractional milliseconds to [`Time`], rounding to the nearest
/// microsecond.
pub fn ms(millis: f64) -> Time {
    (millis * MICROS_PER_MS as f64).round().max(0.0) as Time
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimerId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Node(NodeId),
    Client(ClientId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Destination {
    Node(NodeId),
    Client(ClientId),
    Broadcast,
}

/// A typed, sized protocol message in flight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageEnvelope<M> {
    pub src: Endpoint,
    pub dst: Destination,
    pub payload: M,
    pub payload_bytes: u64,
}

impl<M: Serialize> MessageEnvelope<M> {
    pub fn new(src: Endpoint, dst: Destination, payload: M) -> Self {
        let payload_bytes = codec::payload_bytes(&payload);
        Self {
            src,
            dst,
            payload,
            payload_bytes,
        }
    }
}

/// Protocol-specific message alphabet.
pub trait ProtocolMessage:
    Clone + Debug + PartialEq + Send + Serialize + DeserializeOwned + 'static
{
    /// Leader proposals: the payloads a silent leader suppresses and an
    /// equivocating leader forks.
    fn is_proposal(&self) -> bool;

    /// A proposal for the same slot carrying a different block.
    fn conflicting(&self) -> Option<Self> {
        None
    }

    /// Consensus instance (slot, sequence, height, view or epoch) the message
    /// belongs to, for per-instance accounting.
    fn instance(&self) -> u64;

    /// Leader-replacement traffic, accounted separately from the normal path.
    fn is_view_change(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event<M> {
    Init,
    ClientRequest(Command),
    Message { from: NodeId, msg: M },
    TimerFired(TimerId),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action<M> {
    Send(NodeId, M),
    /// Sent to every other node in the roster.
    Broadcast(M),
    SetTimer {
        after: Time,
        id: TimerId,
    },
    CancelTimer(TimerId),
    /// Heights emitted by one engine must be strictly increasing.
    CommitBlock(Block),
    ReplyToClient {
        client: ClientId,
        sequence: u64,
    },
}

/// Engine-side diagnostics collected once at the end of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounters {
    /// Messages ignored as malformed, unauthenticated or from the wrong sender.
    pub dropped: u64,
    /// Conflicting proposals observed for one slot.
    pub equivocations: u64,
    /// Timeouts that triggered recovery (view change, round skip, retry).
    pub timeouts: u64,
    /// Snowball color changes.
    pub color_flips: u64,
}

/// What an engine knows about its deployment.
#[derive(Clone, Debug)]
pub struct NodeContext {
    pub id: NodeId,
    pub quorum: QuorumConfig,
    pub auth: Authenticator,
    pub seed: u64,
}

impl NodeContext {
    pub fn n(&self) -> usize {
        self.quorum.n
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.quorum.n as u32)
            .map(NodeId)
            .filter(move |p| *p != self.id)
    }
}

/// A deterministic protocol state machine.
///
/// Identical state, event and `now` must yield identical actions; engines
/// hold no clocks and draw randomness only from RNGs seeded via
/// [`NodeContext::seed`].
pub trait Engine: Send {
    type Message: ProtocolMessage;

    fn id(&self) -> NodeId;

    fn on_event(&mut self, event: Event<Self::Message>, now: Time) -> Vec<Action<Self::Message>>;

    fn counters(&self) -> EngineCounters {
        EngineCounters::default()
    }
}

impl<E: Engine + ?Sized> Engine for Box<E> {
    type Message = E::Message;

    fn id(&self) -> NodeId {
        (**self).id()
    }

    fn on_event(&mut self, event: Event<Self::Message>, now: Time) -> Vec<Action<Self::Message>> {
        (**self).on_event(event, now)
    }

    fn counters(&self) -> EngineCounters {
        (**self).counters()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ms_conversion() {
        assert_eq!(ms(0.25), 250);
        assert_eq!(ms(2.0), 2_000);
        assert_eq!(ms(-1.0), 0);
    }

    #[test]
    fn envelope_sizing_is_pure() {
        let a = MessageEnvelope::new(
            Endpoint::Node(NodeId(0)),
            Destination::Broadcast,
            vec![1u8; 10],
        );
        let b = MessageEnvelope::new(
            Endpoint::Node(NodeId(3)),
            Destination::Node(NodeId(1)),
            vec![1u8; 10],
        );
        assert_eq!(a.payload_bytes, b.payload_bytes);
        assert_eq!(a.payload_bytes, codec::HEADER_BYTES + 8 + 10);
    }
}
