use serde::{Deserialize, Serialize};

use qlab_core::{Action, Engine, EngineCounters, Event, NodeId, ProtocolMessage, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Stops handling events and emitting actions.
    CrashStop,
    /// Drops its own proposals but keeps voting.
    SilentLeader,
    /// Sends one proposal to the lower half of the roster and a conflicting
    /// one to the upper half.
    Equivocate,
    /// Adds a constant delay to everything it sends.
    DelayOutbound(Time),
}

impl Behavior {
    pub fn is_byzantine(self) -> bool {
        matches!(self, Behavior::SilentLeader | Behavior::Equivocate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub node: NodeId,
    pub behavior: Behavior,
    pub at: Time,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub entries: Vec<FaultEntry>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, node: NodeId, behavior: Behavior, at: Time) -> Self {
        self.entries.push(FaultEntry { node, behavior, at });
        self
    }

    pub fn entries_for(&self, node: NodeId) -> impl Iterator<Item = &FaultEntry> {
        self.entries.iter().filter(move |e| e.node == node)
    }

    pub fn crashed(&self, node: NodeId, now: Time) -> bool {
        self.entries_for(node)
            .any(|e| e.behavior == Behavior::CrashStop && now >= e.at)
    }

    pub fn extra_delay(&self, node: NodeId, now: Time) -> Time {
        self.entries_for(node)
            .filter(|e| now >= e.at)
            .map(|e| match e.behavior {
                Behavior::DelayOutbound(d) => d,
                _ => 0,
            })
            .sum()
    }

    /// Nodes that deviate from the protocol (crashes and delays do not count).
    pub fn is_byzantine(&self, node: NodeId) -> bool {
        self.entries_for(node).any(|e| e.behavior.is_byzantine())
    }

    pub fn faulty_count(&self) -> usize {
        let mut nodes: Vec<NodeId> = self
            .entries
            .iter()
            .filter(|e| !matches!(e.behavior, Behavior::DelayOutbound(_)))
            .map(|e| e.node)
            .collect();
        nodes.sort();
        nodes.dedup();
        nodes.len()
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        match self.entries.iter().find(|e| e.node.index() >= n) {
            Some(e) => Err(format!("fault targets {:?} outside roster of {n}", e.node)),
            None => Ok(()),
        }
    }
}

/// Engine wrapper that applies a node's fault entries to its outputs.
pub struct Adversarial<E> {
    inner: E,
    n: usize,
    faults: Vec<(Behavior, Time)>,
}

impl<E: Engine> Adversarial<E> {
    pub fn new(inner: E, n: usize, plan: &FaultPlan) -> Self {
        let id = inner.id();
        let faults = plan.entries_for(id).map(|e| (e.behavior, e.at)).collect();
        Self { inner, n, faults }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn active(&self, b: Behavior, now: Time) -> bool {
        self.faults.iter().any(|&(x, at)| x == b && now >= at)
    }

    fn lower_half(&self, node: NodeId) -> bool {
        node.index() < self.n / 2
    }

    fn fork(&self, dst: NodeId, msg: E::Message) -> E::Message {
        if self.lower_half(dst) {
            return msg;
        }
        msg.conflicting().unwrap_or(msg)
    }
}

impl<E: Engine> Engine for Adversarial<E> {
    type Message = E::Message;

    fn id(&self) -> NodeId {
        self.inner.id()
    }

    fn on_event(&mut self, event: Event<E::Message>, now: Time) -> Vec<Action<E::Message>> {
        if self.active(Behavior::CrashStop, now) {
            return Vec::new();
        }
        let actions = self.inner.on_event(event, now);
        let silent = self.active(Behavior::SilentLeader, now);
        let equivocate = self.active(Behavior::Equivocate, now);
        if !silent && !equivocate {
            return actions;
        }
        let me = self.id();
        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            match a {
                Action::Send(_, ref m) | Action::Broadcast(ref m) if silent && m.is_proposal() => {}
                Action::Broadcast(m) if equivocate && m.is_proposal() => {
                    for p in (0..self.n as u32).map(NodeId).filter(|p| *p != me) {
                        out.push(Action::Send(p, self.fork(p, m.clone())));
                    }
                }
                Action::Send(dst, m) if equivocate && m.is_proposal() => {
                    out.push(Action::Send(dst, self.fork(dst, m)));
                }
                other => out.push(other),
            }
        }
        out
    }

    fn counters(&self) -> EngineCounters {
        self.inner.counters()
    }
}
