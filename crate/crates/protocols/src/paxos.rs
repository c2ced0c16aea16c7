//! Multi-slot Paxos with a stable leader.
//!
//! Node 0 starts as leader with ballot `(0, n0)`, which every node has
//! implicitly promised, so the first leader skips phase 1. A follower that
//! holds work and hears nothing from the leader for
//! `election_timeout × (index + 1)` runs phase 1 with a higher ballot.
//! Commit notifications ride on the next accept when there is one.
//!
//! The log holds batches; the hash chained [`Block`] for slot `s` is
//! derived when `s` executes, so every node derives the same chain from the
//! same log.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use qlab_core::mempool::{Admission, RequestId};
use qlab_core::{
    Action, Block, Command, Engine, EngineCounters, Event, Mempool, NodeContext, NodeId,
    ProtocolMessage, Time, TimerId,
};

use crate::common::{fork_commands, replies};

const ELECTION: TimerId = TimerId(1);

/// Leadership attempt, ordered by `(round, owner)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ballot {
    pub round: u64,
    pub owner: NodeId,
}

/// A slot value: a batch plus the node that first proposed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Value {
    pub origin: NodeId,
    pub commands: Vec<Command>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub slot: u64,
    pub ballot: Ballot,
    pub value: Value,
    /// Known chosen (executed or learned) by the sender.
    pub chosen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PaxosMessage {
    Prepare {
        ballot: Ballot,
        from_slot: u64,
    },
    Promise {
        ballot: Ballot,
        entries: Vec<Entry>,
    },
    Reject {
        ballot: Ballot,
        promised: Ballot,
    },
    /// `commit`: every slot up to here is chosen.
    Accept {
        ballot: Ballot,
        slot: u64,
        value: Value,
        commit: u64,
    },
    Accepted {
        ballot: Ballot,
        slot: u64,
    },
    Commit {
        ballot: Ballot,
        commit: u64,
    },
}

impl ProtocolMessage for PaxosMessage {
    fn is_proposal(&self) -> bool {
        matches!(self, PaxosMessage::Accept { .. })
    }

    fn conflicting(&self) -> Option<Self> {
        match self {
            PaxosMessage::Accept {
                ballot,
                slot,
                value,
                commit,
            } => Some(PaxosMessage::Accept {
                ballot: *ballot,
                slot: *slot,
                value: Value {
                    origin: value.origin,
                    commands: fork_commands(&value.commands),
                },
                commit: *commit,
            }),
            _ => None,
        }
    }

    fn instance(&self) -> u64 {
        match self {
            PaxosMessage::Accept { slot, .. } | PaxosMessage::Accepted { slot, .. } => *slot,
            PaxosMessage::Commit { commit, .. } => *commit,
            PaxosMessage::Prepare { ballot, .. }
            | PaxosMessage::Promise { ballot, .. }
            | PaxosMessage::Reject { ballot, .. } => ballot.round,
        }
    }

    fn is_view_change(&self) -> bool {
        matches!(
            self,
            PaxosMessage::Prepare { .. }
                | PaxosMessage::Promise { .. }
                | PaxosMessage::Reject { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Candidate,
    Leader,
    Follower,
}

#[derive(Clone, Debug)]
pub struct PaxosConfig {
    /// Slots the leader may have in flight.
    pub window: usize,
    pub max_batch: usize,
    pub election_timeout: Time,
}

impl Default for PaxosConfig {
    fn default() -> Self {
        Self {
            window: 64,
            max_batch: 1,
            election_timeout: 20_000,
        }
    }
}

pub struct Paxos {
    ctx: NodeContext,
    cfg: PaxosConfig,
    role: Role,
    ballot: Ballot,
    promised: Ballot,
    accepted: BTreeMap<u64, (Ballot, Value)>,
    chosen: BTreeMap<u64, Value>,
    log: BTreeMap<u64, Value>,
    executed: u64,
    head: Block,
    commit_hint: (Ballot, u64),
    next_slot: u64,
    outstanding: BTreeMap<u64, BTreeSet<NodeId>>,
    in_flight: HashSet<RequestId>,
    promises: BTreeMap<NodeId, Vec<Entry>>,
    mempool: Mempool,
    timer_armed: bool,
    last_progress: Time,
    counters: EngineCounters,
}

impl Paxos {
    pub fn new(ctx: NodeContext, cfg: PaxosConfig) -> Self {
        let initial = Ballot {
            round: 0,
            owner: NodeId(0),
        };
        let role = if ctx.id == NodeId(0) {
            Role::Leader
        } else {
            Role::Follower
        };
        Self {
            ctx,
            cfg,
            role,
            ballot: initial,
            promised: initial,
            accepted: BTreeMap::new(),
            chosen: BTreeMap::new(),
            log: BTreeMap::new(),
            executed: 0,
            head: Block::genesis(),
            commit_hint: (initial, 0),
            next_slot: 1,
            outstanding: BTreeMap::new(),
            in_flight: HashSet::new(),
            promises: BTreeMap::new(),
            mempool: Mempool::default(),
            timer_armed: false,
            last_progress: 0,
            counters: EngineCounters::default(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn ballot(&self) -> Ballot {
        self.ballot
    }

    pub fn promised(&self) -> Ballot {
        self.promised
    }

    /// Highest executed slot.
    pub fn commit_index(&self) -> u64 {
        self.executed
    }

    pub fn accepted(&self, slot: u64) -> Option<&(Ballot, Value)> {
        self.accepted.get(&slot)
    }

    fn me(&self) -> NodeId {
        self.ctx.id
    }

    fn quorum(&self) -> usize {
        self.ctx.quorum.majority_quorum
    }

    fn my_timeout(&self) -> Time {
        self.cfg.election_timeout * (self.me().index() as Time + 1)
    }

    fn has_work(&self) -> bool {
        !self.mempool.is_empty()
            || !self.chosen.is_empty()
            || self
                .accepted
                .keys()
                .next_back()
                .is_some_and(|s| *s > self.executed)
    }

    fn arm(&mut self, out: &mut Vec<Action<PaxosMessage>>) {
        if self.role != Role::Leader && !self.timer_armed && self.has_work() {
            self.timer_armed = true;
            out.push(Action::SetTimer {
                after: self.my_timeout(),
                id: ELECTION,
            });
        }
    }

    fn entries_from(&self, from: u64) -> Vec<Entry> {
        let mut entries: Vec<Entry> = self
            .log
            .range(from..)
            .map(|(s, v)| Entry {
                slot: *s,
                ballot: self.promised,
                value: v.clone(),
                chosen: true,
            })
            .collect();
        entries.extend(self.chosen.range(from..).map(|(s, v)| Entry {
            slot: *s,
            ballot: self.promised,
            value: v.clone(),
            chosen: true,
        }));
        entries.extend(
            self.accepted
                .range(from..)
                .filter(|(s, _)| !self.chosen.contains_key(s) && !self.log.contains_key(s))
                .map(|(s, (b, v))| Entry {
                    slot: *s,
                    ballot: *b,
                    value: v.clone(),
                    chosen: false,
                }),
        );
        entries.sort_by_key(|e| e.slot);
        entries
    }

    fn start_election(&mut self, now: Time, out: &mut Vec<Action<PaxosMessage>>) {
        self.counters.timeouts += 1;
        let round = self.promised.round.max(self.ballot.round) + 1;
        self.ballot = Ballot {
            round,
            owner: self.me(),
        };
        self.promised = self.ballot;
        self.role = Role::Candidate;
        self.promises.clear();
        self.last_progress = now;
        out.push(Action::Broadcast(PaxosMessage::Prepare {
            ballot: self.ballot,
            from_slot: self.executed + 1,
        }));
        self.timer_armed = true;
        out.push(Action::SetTimer {
            after: self.my_timeout(),
            id: ELECTION,
        });
        if self.quorum() <= 1 {
            self.become_leader(out);
        }
    }

    fn become_leader(&mut self, out: &mut Vec<Action<PaxosMessage>>) {
        let from = self.executed + 1;
        let mut merged: BTreeMap<u64, Entry> = BTreeMap::new();
        let own = self.entries_from(from);
        for e in self.promises.values().flatten().chain(own.iter()) {
            match merged.get(&e.slot) {
                Some(cur) if cur.chosen || (!e.chosen && cur.ballot >= e.ballot) => {}
                _ => {
                    merged.insert(e.slot, e.clone());
                }
            }
        }
        self.role = Role::Leader;
        self.promises.clear();
        self.outstanding.clear();
        self.in_flight.clear();
        let max_slot = merged
            .keys()
            .next_back()
            .copied()
            .unwrap_or(self.executed)
            .max(self.executed);
        for slot in from..=max_slot {
            let (value, chosen) = match merged.remove(&slot) {
                Some(e) => (e.value, e.chosen),
                None => (
                    Value {
                        origin: self.me(),
                        commands: Vec::new(),
                    },
                    false,
                ),
            };
            for c in &value.commands {
                self.in_flight.insert(c.request_id());
                self.mempool.remove(c.request_id());
            }
            if chosen {
                self.chosen.insert(slot, value.clone());
            }
            self.accepted.insert(slot, (self.ballot, value.clone()));
            self.outstanding.insert(slot, BTreeSet::from([self.me()]));
            out.push(Action::Broadcast(PaxosMessage::Accept {
                ballot: self.ballot,
                slot,
                value,
                commit: self.executed,
            }));
        }
        self.next_slot = max_slot + 1;
        self.check_quorums();
        self.learn(out);
        self.propose(out);
    }

    /// Issues accepts for pending commands while the window allows.
    fn propose(&mut self, out: &mut Vec<Action<PaxosMessage>>) -> bool {
        if self.role != Role::Leader {
            return false;
        }
        let mut issued = false;
        while self.outstanding.len() < self.cfg.window && !self.mempool.is_empty() {
            // a partial batch waits until the pipeline drains
            if !self.outstanding.is_empty() && self.mempool.len() < self.cfg.max_batch {
                break;
            }
            let commands: Vec<Command> = self
                .mempool
                .take(self.cfg.max_batch.max(1))
                .into_iter()
                .filter(|c| !self.in_flight.contains(&c.request_id()))
                .collect();
            if commands.is_empty() {
                continue;
            }
            self.in_flight
                .extend(commands.iter().map(Command::request_id));
            let slot = self.next_slot;
            self.next_slot += 1;
            let value = Value {
                origin: self.me(),
                commands,
            };
            self.accepted.insert(slot, (self.ballot, value.clone()));
            self.outstanding.insert(slot, BTreeSet::from([self.me()]));
            out.push(Action::Broadcast(PaxosMessage::Accept {
                ballot: self.ballot,
                slot,
                value,
                commit: self.executed,
            }));
            issued = true;
            if self.check_quorums() {
                self.learn(out);
            }
        }
        issued
    }

    /// Moves slots with a majority of acks to `chosen`.
    fn check_quorums(&mut self) -> bool {
        let q = self.quorum();
        let done: Vec<u64> = self
            .outstanding
            .iter()
            .filter(|(_, a)| a.len() >= q)
            .map(|(s, _)| *s)
            .collect();
        for s in &done {
            self.outstanding.remove(s);
            if let Some((_, v)) = self.accepted.get(s) {
                self.chosen.insert(*s, v.clone());
            }
        }
        !done.is_empty()
    }

    /// Executes chosen slots in order.
    fn learn(&mut self, out: &mut Vec<Action<PaxosMessage>>) {
        loop {
            let s = self.executed + 1;
            let value = match self.chosen.remove(&s) {
                Some(v) => v,
                None => match self.accepted.get(&s) {
                    Some((b, v)) if s <= self.commit_hint.1 && *b == self.commit_hint.0 => {
                        v.clone()
                    }
                    _ => break,
                },
            };
            let block = Block::child_of(&self.head, value.commands.clone(), value.origin, s);
            self.head = block.clone();
            self.executed = s;
            self.accepted.remove(&s);
            self.mempool.commit_commands(&value.commands);
            for c in &value.commands {
                self.in_flight.remove(&c.request_id());
            }
            if self.role == Role::Leader {
                out.extend(replies(&value.commands));
            }
            self.log.insert(s, value);
            out.push(Action::CommitBlock(block));
        }
    }

    fn note_hint(&mut self, ballot: Ballot, commit: u64) {
        if ballot > self.commit_hint.0
            || (ballot == self.commit_hint.0 && commit > self.commit_hint.1)
        {
            self.commit_hint = (ballot, commit);
        }
    }

    /// Adopts a higher ballot seen from another node.
    fn observe(&mut self, ballot: Ballot) {
        if ballot > self.promised {
            self.promised = ballot;
        }
        if ballot.owner != self.me() && ballot >= self.ballot && self.role != Role::Follower {
            self.role = Role::Follower;
            self.outstanding.clear();
        }
    }

    fn on_message(
        &mut self,
        from: NodeId,
        msg: PaxosMessage,
        now: Time,
        out: &mut Vec<Action<PaxosMessage>>,
    ) {
        match msg {
            PaxosMessage::Prepare { ballot, from_slot } => {
                if ballot >= self.promised && ballot.owner == from {
                    self.observe(ballot);
                    self.last_progress = now;
                    let entries = self.entries_from(from_slot);
                    out.push(Action::Send(
                        from,
                        PaxosMessage::Promise { ballot, entries },
                    ));
                } else {
                    out.push(Action::Send(
                        from,
                        PaxosMessage::Reject {
                            ballot,
                            promised: self.promised,
                        },
                    ));
                }
            }
            PaxosMessage::Promise { ballot, entries } => {
                if self.role == Role::Candidate && ballot == self.ballot {
                    self.promises.insert(from, entries);
                    if self.promises.len() + 1 >= self.quorum() {
                        self.become_leader(out);
                    }
                }
            }
            PaxosMessage::Reject { ballot, promised } => {
                if ballot == self.ballot && self.role != Role::Follower && promised > self.ballot {
                    self.promised = self.promised.max(promised);
                    self.role = Role::Follower;
                    self.outstanding.clear();
                    self.last_progress = now;
                }
            }
            PaxosMessage::Accept {
                ballot,
                slot,
                value,
                commit,
            } => {
                if ballot < self.promised {
                    out.push(Action::Send(
                        from,
                        PaxosMessage::Reject {
                            ballot,
                            promised: self.promised,
                        },
                    ));
                    return;
                }
                self.observe(ballot);
                self.last_progress = now;
                if slot > self.executed {
                    let replace = self.accepted.get(&slot).is_none_or(|(b, _)| *b <= ballot);
                    if replace {
                        self.accepted.insert(slot, (ballot, value));
                    }
                }
                out.push(Action::Send(from, PaxosMessage::Accepted { ballot, slot }));
                self.note_hint(ballot, commit);
                self.learn(out);
            }
            PaxosMessage::Accepted { ballot, slot } => {
                if self.role != Role::Leader || ballot != self.ballot {
                    return;
                }
                let before = self.executed;
                if let Some(acks) = self.outstanding.get_mut(&slot) {
                    acks.insert(from);
                }
                if self.check_quorums() {
                    self.learn(out);
                }
                let issued = self.propose(out);
                if self.executed > before && !issued {
                    out.push(Action::Broadcast(PaxosMessage::Commit {
                        ballot: self.ballot,
                        commit: self.executed,
                    }));
                }
            }
            PaxosMessage::Commit { ballot, commit } => {
                if ballot >= self.promised {
                    self.observe(ballot);
                    self.last_progress = now;
                }
                self.note_hint(ballot, commit);
                self.learn(out);
            }
        }
    }
}

impl Engine for Paxos {
    type Message = PaxosMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(&mut self, event: Event<PaxosMessage>, now: Time) -> Vec<Action<PaxosMessage>> {
        let mut out = Vec::new();
        match event {
            Event::Init => {}
            Event::ClientRequest(cmd) => {
                let id = cmd.request_id();
                match self.mempool.push(cmd.clone()) {
                    Admission::AlreadyCommitted if self.role == Role::Leader => {
                        out.extend(replies(std::slice::from_ref(&cmd)));
                    }
                    Admission::Added if self.in_flight.contains(&id) => {
                        self.mempool.remove(id);
                    }
                    Admission::Added if self.role == Role::Leader => {
                        self.propose(&mut out);
                    }
                    _ => {}
                }
            }
            Event::Message { from, msg } => self.on_message(from, msg, now, &mut out),
            Event::TimerFired(ELECTION) => {
                self.timer_armed = false;
                if self.role != Role::Leader && self.has_work() {
                    let idle = now.saturating_sub(self.last_progress);
                    if idle >= self.my_timeout() {
                        self.start_election(now, &mut out);
                    } else {
                        self.timer_armed = true;
                        out.push(Action::SetTimer {
                            after: self.my_timeout() - idle,
                            id: ELECTION,
                        });
                    }
                }
            }
            Event::TimerFired(_) => {}
        }
        self.arm(&mut out);
        out
    }

    fn counters(&self) -> EngineCounters {
        self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qlab_core::{quorum_sizes, Authenticator, FaultModel};

    fn node(i: u32, n: usize) -> Paxos {
        let ctx = NodeContext {
            id: NodeId(i),
            quorum: quorum_sizes(n, FaultModel::Crash).unwrap(),
            auth: Authenticator::Noop,
            seed: 0,
        };
        Paxos::new(ctx, PaxosConfig::default())
    }

    fn b(round: u64, owner: u32) -> Ballot {
        Ballot {
            round,
            owner: NodeId(owner),
        }
    }

    #[test]
    fn ballots_order_by_round_then_owner() {
        assert!(b(1, 0) > b(0, 2));
        assert!(b(1, 2) > b(1, 1));
    }

    #[test]
    fn stale_accept_is_rejected() {
        let mut f = node(1, 3);
        f.on_event(
            Event::Message {
                from: NodeId(2),
                msg: PaxosMessage::Prepare {
                    ballot: b(3, 2),
                    from_slot: 1,
                },
            },
            0,
        );
        let out = f.on_event(
            Event::Message {
                from: NodeId(0),
                msg: PaxosMessage::Accept {
                    ballot: b(0, 0),
                    slot: 1,
                    value: Value {
                        origin: NodeId(0),
                        commands: vec![],
                    },
                    commit: 0,
                },
            },
            1,
        );
        assert_eq!(
            out,
            vec![Action::Send(
                NodeId(0),
                PaxosMessage::Reject {
                    ballot: b(0, 0),
                    promised: b(3, 2)
                }
            )]
        );
    }

    #[test]
    fn rejection_revokes_leadership() {
        let mut l = node(0, 3);
        assert_eq!(l.role(), Role::Leader);
        l.on_event(
            Event::Message {
                from: NodeId(1),
                msg: PaxosMessage::Reject {
                    ballot: b(0, 0),
                    promised: b(2, 1),
                },
            },
            0,
        );
        assert_eq!(l.role(), Role::Follower);
        assert_eq!(l.promised(), b(2, 1));
    }

    #[test]
    fn single_node_commits_alone() {
        let mut l = node(0, 1);
        let out = l.on_event(
            Event::ClientRequest(Command::new(0, 0, b"k".to_vec(), b"v".to_vec())),
            0,
        );
        assert!(out
            .iter()
            .any(|a| matches!(a, Action::CommitBlock(b) if b.height == 1)));
        assert!(out.iter().any(|a| matches!(
            a,
            Action::ReplyToClient {
                client: 0,
                sequence: 0
            }
        )));
        assert_eq!(l.commit_index(), 1);
    }
}
