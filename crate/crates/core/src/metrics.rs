use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineCounters, Time};
use crate::types::{ClientId, NodeId};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Simulated CPU time spent serializing and deserializing envelopes.
    pub busy_time: Time,
    pub engine: EngineCounters,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub client: ClientId,
    pub sequence: u64,
    pub submit_time: Time,
    /// Time the client accepted the result.
    pub commit_time: Option<Time>,
}

impl RequestRecord {
    pub fn latency(&self) -> Option<Time> {
        self.commit_time.map(|c| c - self.submit_time)
    }
}

/// Raw counters for one run. Everything a report needs is derivable from it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsLedger {
    pub nodes: Vec<NodeCounters>,
    pub requests: BTreeMap<(ClientId, u64), RequestRecord>,
    /// Node-to-node envelopes per consensus instance.
    pub instance_messages: BTreeMap<u64, u64>,
    pub instance_bytes: BTreeMap<u64, u64>,
    /// Node-to-node envelopes in total, view-change traffic included.
    pub protocol_messages: u64,
    pub protocol_bytes: u64,
    pub view_change_messages: u64,
    pub view_change_bytes: u64,
    pub client_messages: u64,
    pub reply_messages: u64,
    pub reply_bytes: u64,
    /// Client retransmissions after a request timeout.
    pub client_retries: u64,
}

impl MetricsLedger {
    pub fn new(n: usize) -> Self {
        Self {
            nodes: vec![NodeCounters::default(); n],
            ..Default::default()
        }
    }

    pub fn node(&self, id: NodeId) -> &NodeCounters {
        &self.nodes[id.index()]
    }

    pub fn record_send(&mut self, node: NodeId, bytes: u64, cost: Time) {
        let c = &mut self.nodes[node.index()];
        c.messages_sent += 1;
        c.bytes_sent += bytes;
        c.busy_time += cost;
    }

    pub fn record_receive(&mut self, node: NodeId, bytes: u64, cost: Time) {
        let c = &mut self.nodes[node.index()];
        c.messages_received += 1;
        c.bytes_received += bytes;
        c.busy_time += cost;
    }

    pub fn record_protocol_message(&mut self, instance: u64, bytes: u64, view_change: bool) {
        self.protocol_messages += 1;
        self.protocol_bytes += bytes;
        *self.instance_messages.entry(instance).or_default() += 1;
        *self.instance_bytes.entry(instance).or_default() += bytes;
        if view_change {
            self.view_change_messages += 1;
            self.view_change_bytes += bytes;
        }
    }

    pub fn record_reply(&mut self, bytes: u64) {
        self.reply_messages += 1;
        self.reply_bytes += bytes;
    }

    pub fn submit(&mut self, client: ClientId, sequence: u64, at: Time) {
        self.requests
            .entry((client, sequence))
            .or_insert(RequestRecord {
                client,
                sequence,
                submit_time: at,
                commit_time: None,
            });
    }

    /// Marks a request accepted. The first acceptance wins.
    pub fn accept(&mut self, client: ClientId, sequence: u64, at: Time) {
        if let Some(r) = self.requests.get_mut(&(client, sequence)) {
            if r.commit_time.is_none() {
                assert!(at >= r.submit_time, "commit before submit");
                r.commit_time = Some(at);
            }
        }
    }

    pub fn completed(&self) -> impl Iterator<Item = &RequestRecord> {
        self.requests.values().filter(|r| r.commit_time.is_some())
    }

    pub fn completed_count(&self) -> u64 {
        self.completed().count() as u64
    }

    /// Sorted latencies of accepted requests.
    pub fn latencies(&self) -> Vec<Time> {
        let mut l: Vec<Time> = self
            .completed()
            .filter_map(RequestRecord::latency)
            .collect();
        l.sort_unstable();
        l
    }

    pub fn max_busy(&self) -> Time {
        self.nodes.iter().map(|n| n.busy_time).max().unwrap_or(0)
    }

    /// Stable byte encoding, for determinism comparisons.
    pub fn fingerprint(&self) -> Vec<u8> {
        crate::codec::encode(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting() {
        let mut m = MetricsLedger::new(2);
        m.record_send(NodeId(0), 100, 5);
        m.record_receive(NodeId(1), 100, 5);
        m.record_protocol_message(3, 100, false);
        m.record_protocol_message(3, 50, true);
        assert_eq!(m.node(NodeId(0)).busy_time, 5);
        assert_eq!(m.instance_messages[&3], 2);
        assert_eq!(m.view_change_bytes, 50);
        assert_eq!(m.max_busy(), 5);
    }

    #[test]
    fn first_acceptance_wins() {
        let mut m = MetricsLedger::new(1);
        m.submit(1, 1, 10);
        m.accept(1, 1, 15);
        m.accept(1, 1, 20);
        assert_eq!(m.latencies(), vec![5]);
        m.accept(9, 9, 1);
        assert_eq!(m.completed_count(), 1);
    }
}
