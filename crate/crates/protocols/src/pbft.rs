//! PBFT with a stable leader (`view mod n`) and the view-change protocol.
//!
//! Normal path: the leader broadcasts a pre-prepare for `(view, seq)`; every
//! node, the leader included, broadcasts a prepare; after `n - f` matching
//! prepares a node broadcasts a commit; after `n - f` matching commits it
//! executes in sequence order. `f + 1` designated nodes reply to the client.
//!
//! View change: a node whose work stalls for `view_timeout` broadcasts a
//! view-change carrying the commit certificate of its last executed
//! sequence and the prepared certificates above it. `f + 1` view-changes
//! for higher views pull a node along. The next leader collects `n - f`,
//! broadcasts a new-view carrying them and re-proposes every prepared
//! sequence (gaps become empty batches). Nodes that executed less than the
//! new-view's checkpoint fetch the certified batches they missed.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use qlab_core::mempool::{Admission, RequestId};
use qlab_core::{
    codec, Action, AuthTag, Block, Command, Digest, Engine, EngineCounters, Event, Mempool,
    NodeContext, NodeId, ProtocolMessage, Time, TimerId, Vote, VoteKind,
};

use crate::common::{fork_commands, is_designated_replier, replies};

const VIEW_TIMER: TimerId = TimerId(1);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub origin: NodeId,
    pub commands: Vec<Command>,
}

/// Digest binding a batch to its sequence number.
pub fn batch_digest(seq: u64, batch: &Batch) -> Digest {
    Digest::of(&codec::encode(&(seq, batch)))
}

/// `n - f` matching votes for one `(seq, view, digest)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub seq: u64,
    pub view: u64,
    pub batch: Batch,
    pub votes: Vec<Vote>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewChange {
    pub new_view: u64,
    pub sender: NodeId,
    pub last_exec: u64,
    /// Commit certificate for `last_exec` (empty when nothing executed).
    pub checkpoint: Vec<Vote>,
    pub prepared: Vec<Certificate>,
    pub auth: AuthTag,
}

impl ViewChange {
    fn signing_bytes(&self) -> Vec<u8> {
        let prepared: Vec<(u64, u64, Digest)> = self
            .prepared
            .iter()
            .map(|c| (c.seq, c.view, batch_digest(c.seq, &c.batch)))
            .collect();
        codec::encode(&(
            self.new_view,
            self.sender,
            self.last_exec,
            &self.checkpoint,
            prepared,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PbftMessage {
    PrePrepare {
        view: u64,
        seq: u64,
        batch: Batch,
        digest: Digest,
    },
    Prepare {
        seq: u64,
        vote: Vote,
    },
    Commit {
        seq: u64,
        vote: Vote,
    },
    ViewChange(ViewChange),
    NewView {
        view: u64,
        proofs: Vec<ViewChange>,
        preprepares: Vec<(u64, Batch)>,
    },
    /// Rebroadcast confirming the installed new-view.
    NewViewAck {
        view: u64,
        digest: Digest,
    },
    Fetch {
        from_seq: u64,
    },
    FetchReply {
        entries: Vec<Certificate>,
    },
}

impl ProtocolMessage for PbftMessage {
    fn is_proposal(&self) -> bool {
        matches!(
            self,
            PbftMessage::PrePrepare { .. } | PbftMessage::NewView { .. }
        )
    }

    fn conflicting(&self) -> Option<Self> {
        match self {
            PbftMessage::PrePrepare {
                view, seq, batch, ..
            } => {
                let batch = Batch {
                    origin: batch.origin,
                    commands: fork_commands(&batch.commands),
                };
                let digest = batch_digest(*seq, &batch);
                Some(PbftMessage::PrePrepare {
                    view: *view,
                    seq: *seq,
                    batch,
                    digest,
                })
            }
            _ => None,
        }
    }

    fn instance(&self) -> u64 {
        match self {
            PbftMessage::PrePrepare { seq, .. }
            | PbftMessage::Prepare { seq, .. }
            | PbftMessage::Commit { seq, .. } => *seq,
            PbftMessage::ViewChange(vc) => vc.new_view,
            PbftMessage::NewView { view, .. } | PbftMessage::NewViewAck { view, .. } => *view,
            PbftMessage::Fetch { from_seq } => *from_seq,
            PbftMessage::FetchReply { entries } => entries.first().map_or(0, |c| c.seq),
        }
    }

    fn is_view_change(&self) -> bool {
        !matches!(
            self,
            PbftMessage::PrePrepare { .. }
                | PbftMessage::Prepare { .. }
                | PbftMessage::Commit { .. }
        )
    }
}

#[derive(Clone, Debug)]
pub struct PbftConfig {
    pub window: usize,
    pub max_batch: usize,
    pub view_timeout: Time,
}

impl Default for PbftConfig {
    fn default() -> Self {
        Self {
            window: 64,
            max_batch: 1,
            view_timeout: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    PrePrepared,
    Prepared,
    Committed,
}

#[derive(Clone, Debug, Default)]
struct Slot {
    preprepare: Option<(u64, Batch, Digest)>,
    prepares: BTreeMap<(u64, Digest), BTreeMap<NodeId, Vote>>,
    commits: BTreeMap<(u64, Digest), BTreeMap<NodeId, Vote>>,
    prepared: Option<Certificate>,
    commit_sent: Option<u64>,
    committed: Option<Certificate>,
}

impl Slot {
    fn phase(&self) -> Option<Phase> {
        if self.committed.is_some() {
            Some(Phase::Committed)
        } else if self.prepared.is_some() {
            Some(Phase::Prepared)
        } else {
            self.preprepare.as_ref().map(|_| Phase::PrePrepared)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Normal,
    Changing(u64),
}

pub struct Pbft {
    ctx: NodeContext,
    cfg: PbftConfig,
    view: u64,
    status: Status,
    log: BTreeMap<u64, Slot>,
    exec: u64,
    head: Block,
    executed: BTreeMap<u64, Certificate>,
    next_seq: u64,
    mempool: Mempool,
    in_flight: HashSet<RequestId>,
    view_changes: BTreeMap<u64, BTreeMap<NodeId, ViewChange>>,
    new_view_sent: Option<u64>,
    timer_armed: bool,
    last_progress: Time,
    progress: bool,
    /// `(seq, view)` pairs with conflicting digests already counted.
    conflicts: HashSet<(u64, u64)>,
    /// Pre-prepares for views not yet installed, by view.
    early: BTreeMap<u64, Vec<(NodeId, PbftMessage)>>,
    counters: EngineCounters,
}

impl Pbft {
    pub fn new(ctx: NodeContext, cfg: PbftConfig) -> Self {
        Self {
            ctx,
            cfg,
            view: 0,
            status: Status::Normal,
            log: BTreeMap::new(),
            exec: 0,
            head: Block::genesis(),
            executed: BTreeMap::new(),
            next_seq: 1,
            mempool: Mempool::default(),
            in_flight: HashSet::new(),
            view_changes: BTreeMap::new(),
            new_view_sent: None,
            timer_armed: false,
            last_progress: 0,
            progress: false,
            conflicts: HashSet::new(),
            early: BTreeMap::new(),
            counters: EngineCounters::default(),
        }
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn last_executed(&self) -> u64 {
        self.exec
    }

    pub fn phase(&self, seq: u64) -> Option<Phase> {
        if seq <= self.exec {
            return Some(Phase::Committed);
        }
        self.log.get(&seq).and_then(Slot::phase)
    }

    pub fn is_changing_view(&self) -> bool {
        self.status != Status::Normal
    }

    fn me(&self) -> NodeId {
        self.ctx.id
    }

    fn n(&self) -> usize {
        self.ctx.n()
    }

    fn q(&self) -> usize {
        self.ctx.quorum.byzantine_quorum
    }

    pub fn leader_of(&self, view: u64) -> NodeId {
        NodeId((view % self.n() as u64) as u32)
    }

    fn is_leader(&self) -> bool {
        self.status == Status::Normal && self.leader_of(self.view) == self.me()
    }

    fn vote(&self, kind: VoteKind, digest: Digest, view: u64) -> Vote {
        Vote::new(kind, digest, view, self.me(), &self.ctx.auth)
    }

    fn has_work(&self) -> bool {
        !self.mempool.is_empty()
            || self
                .log
                .range(self.exec + 1..)
                .any(|(_, s)| s.preprepare.is_some())
    }

    fn arm(&mut self, out: &mut Vec<Action<PbftMessage>>) {
        let wanted = self.status != Status::Normal || self.has_work();
        if wanted && !self.timer_armed {
            self.timer_armed = true;
            out.push(Action::SetTimer {
                after: self.cfg.view_timeout,
                id: VIEW_TIMER,
            });
        }
    }

    fn propose(&mut self, out: &mut Vec<Action<PbftMessage>>) {
        if !self.is_leader() {
            return;
        }
        while ((self.next_seq - 1 - self.exec) as usize) < self.cfg.window
            && !self.mempool.is_empty()
        {
            // a partial batch waits until the pipeline drains
            if self.next_seq - 1 > self.exec && self.mempool.len() < self.cfg.max_batch {
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
            let seq = self.next_seq;
            self.next_seq += 1;
            let batch = Batch {
                origin: self.me(),
                commands,
            };
            let digest = batch_digest(seq, &batch);
            out.push(Action::Broadcast(PbftMessage::PrePrepare {
                view: self.view,
                seq,
                batch: batch.clone(),
                digest,
            }));
            self.accept_preprepare(seq, self.view, batch, digest, out);
        }
    }

    fn accept_preprepare(
        &mut self,
        seq: u64,
        view: u64,
        batch: Batch,
        digest: Digest,
        out: &mut Vec<Action<PbftMessage>>,
    ) {
        let vote = self.vote(VoteKind::Prepare, digest, view);
        let slot = self.log.entry(seq).or_default();
        slot.preprepare = Some((view, batch, digest));
        slot.prepares
            .entry((view, digest))
            .or_default()
            .insert(vote.voter, vote.clone());
        out.push(Action::Broadcast(PbftMessage::Prepare { seq, vote }));
        self.check_prepared(seq, out);
    }

    fn check_prepared(&mut self, seq: u64, out: &mut Vec<Action<PbftMessage>>) {
        let q = self.q();
        let view = self.view;
        let me = self.me();
        let auth = self.ctx.auth.clone();
        let Some(slot) = self.log.get_mut(&seq) else {
            return;
        };
        let Some((pv, batch, digest)) = slot.preprepare.clone() else {
            return;
        };
        // a replica that has sent its view change stops preparing in the old view
        if pv != view || slot.commit_sent == Some(view) || self.status != Status::Normal {
            return;
        }
        let Some(votes) = slot.prepares.get(&(view, digest)) else {
            return;
        };
        if votes.len() < q {
            return;
        }
        slot.prepared = Some(Certificate {
            seq,
            view,
            batch,
            votes: votes.values().cloned().collect(),
        });
        slot.commit_sent = Some(view);
        let vote = Vote::new(VoteKind::Commit, digest, view, me, &auth);
        slot.commits
            .entry((view, digest))
            .or_default()
            .insert(me, vote.clone());
        out.push(Action::Broadcast(PbftMessage::Commit { seq, vote }));
        self.check_committed(seq, out);
    }

    fn check_committed(&mut self, seq: u64, out: &mut Vec<Action<PbftMessage>>) {
        let q = self.q();
        let Some(slot) = self.log.get_mut(&seq) else {
            return;
        };
        if slot.committed.is_some() {
            return;
        }
        let Some(cert) = &slot.prepared else { return };
        let digest = batch_digest(seq, &cert.batch);
        let Some(votes) = slot.commits.get(&(cert.view, digest)) else {
            return;
        };
        if votes.len() >= q {
            slot.committed = Some(Certificate {
                seq,
                view: cert.view,
                batch: cert.batch.clone(),
                votes: votes.values().cloned().collect(),
            });
            self.execute_ready(out);
        }
    }

    fn execute_ready(&mut self, out: &mut Vec<Action<PbftMessage>>) {
        let before = self.exec;
        while let Some(cert) = self
            .log
            .get(&(self.exec + 1))
            .and_then(|s| s.committed.clone())
        {
            let seq = self.exec + 1;
            self.log.remove(&seq);
            let block = Block::child_of(
                &self.head,
                cert.batch.commands.clone(),
                cert.batch.origin,
                seq,
            );
            self.head = block.clone();
            self.exec = seq;
            self.mempool.commit_commands(&cert.batch.commands);
            for c in &cert.batch.commands {
                self.in_flight.remove(&c.request_id());
            }
            let first = self.leader_of(self.view);
            if is_designated_replier(self.me(), first, self.ctx.quorum.f + 1, self.n()) {
                out.extend(replies(&cert.batch.commands));
            }
            self.executed.insert(seq, cert);
            out.push(Action::CommitBlock(block));
        }
        if self.exec > before {
            self.progress = true;
            self.propose(out);
        }
    }

    fn valid_vote(&self, vote: &Vote, kind: VoteKind, from: NodeId) -> bool {
        vote.kind == kind && vote.voter == from && vote.verify(&self.ctx.auth)
    }

    fn valid_certificate(&self, cert: &Certificate, kind: VoteKind) -> bool {
        let digest = batch_digest(cert.seq, &cert.batch);
        let mut voters = HashSet::new();
        for v in &cert.votes {
            if v.kind != kind
                || v.block_hash != digest
                || v.view != cert.view
                || !v.verify(&self.ctx.auth)
            {
                return false;
            }
            voters.insert(v.voter);
        }
        voters.len() >= self.q()
    }

    fn valid_view_change(&self, vc: &ViewChange) -> bool {
        if !self
            .ctx
            .auth
            .verify(&vc.auth, &vc.signing_bytes(), vc.sender)
        {
            return false;
        }
        if vc.last_exec > 0 {
            let mut voters = HashSet::new();
            for v in &vc.checkpoint {
                if v.kind != VoteKind::Commit || !v.verify(&self.ctx.auth) {
                    return false;
                }
                voters.insert(v.voter);
            }
            if voters.len() < self.q() {
                return false;
            }
        }
        vc.prepared
            .iter()
            .all(|c| c.seq > vc.last_exec && self.valid_certificate(c, VoteKind::Prepare))
    }

    fn start_view_change(&mut self, target: u64, now: Time, out: &mut Vec<Action<PbftMessage>>) {
        if let Status::Changing(t) = self.status {
            if t >= target {
                return;
            }
        }
        self.status = Status::Changing(target);
        self.counters.timeouts += 1;
        self.last_progress = now;
        let checkpoint = self
            .executed
            .get(&self.exec)
            .map(|c| c.votes.clone())
            .unwrap_or_default();
        let prepared = self
            .log
            .range(self.exec + 1..)
            .filter_map(|(_, s)| s.prepared.clone())
            .collect();
        let mut vc = ViewChange {
            new_view: target,
            sender: self.me(),
            last_exec: self.exec,
            checkpoint,
            prepared,
            auth: AuthTag::default(),
        };
        vc.auth = self.ctx.auth.authenticate(&vc.signing_bytes(), self.me());
        out.push(Action::Broadcast(PbftMessage::ViewChange(vc.clone())));
        let me = self.me();
        self.view_changes.entry(target).or_default().insert(me, vc);
        self.timer_armed = true;
        let backoff = 1u64 << (target - self.view).min(6);
        out.push(Action::SetTimer {
            after: self.cfg.view_timeout * backoff,
            id: VIEW_TIMER,
        });
        self.try_new_view(target, now, out);
    }

    /// Deterministic re-proposals from a set of view-change proofs:
    /// `(checkpoint, re-proposed sequences)`.
    fn reproposals(proofs: &[ViewChange], leader: NodeId) -> (u64, Vec<(u64, Batch)>) {
        let low = proofs.iter().map(|vc| vc.last_exec).max().unwrap_or(0);
        let mut best: BTreeMap<u64, &Certificate> = BTreeMap::new();
        for c in proofs
            .iter()
            .flat_map(|vc| vc.prepared.iter())
            .filter(|c| c.seq > low)
        {
            match best.get(&c.seq) {
                Some(b) if b.view >= c.view => {}
                _ => {
                    best.insert(c.seq, c);
                }
            }
        }
        let high = best.keys().next_back().copied().unwrap_or(low);
        let pps = (low + 1..=high)
            .map(|s| match best.get(&s) {
                Some(c) => (s, c.batch.clone()),
                None => (
                    s,
                    Batch {
                        origin: leader,
                        commands: Vec::new(),
                    },
                ),
            })
            .collect();
        (low, pps)
    }

    fn try_new_view(&mut self, view: u64, now: Time, out: &mut Vec<Action<PbftMessage>>) {
        if self.leader_of(view) != self.me() || self.new_view_sent.is_some_and(|v| v >= view) {
            return;
        }
        if self.status != Status::Changing(view) {
            return;
        }
        let Some(vcs) = self.view_changes.get(&view) else {
            return;
        };
        if vcs.len() < self.q() {
            return;
        }
        let proofs: Vec<ViewChange> = vcs.values().take(self.q()).cloned().collect();
        let (_, preprepares) = Self::reproposals(&proofs, self.me());
        self.new_view_sent = Some(view);
        out.push(Action::Broadcast(PbftMessage::NewView {
            view,
            proofs: proofs.clone(),
            preprepares,
        }));
        self.install(view, &proofs, now, out);
    }

    fn install(
        &mut self,
        view: u64,
        proofs: &[ViewChange],
        now: Time,
        out: &mut Vec<Action<PbftMessage>>,
    ) {
        let leader = self.leader_of(view);
        let (low, pps) = Self::reproposals(proofs, leader);
        self.view = view;
        self.status = Status::Normal;
        self.last_progress = now;
        self.view_changes.retain(|v, _| *v > view);
        // votes for the new view may already have arrived
        for slot in self.log.values_mut().filter(|s| s.committed.is_none()) {
            slot.preprepare = None;
            slot.prepared = None;
            slot.commit_sent = None;
            slot.prepares.retain(|(v, _), _| *v >= view);
            slot.commits.retain(|(v, _), _| *v >= view);
        }
        self.in_flight.clear();
        let high = pps.last().map_or(low, |(s, _)| *s);
        for (seq, batch) in pps {
            if seq <= self.exec {
                continue;
            }
            for c in &batch.commands {
                self.in_flight.insert(c.request_id());
                if leader == self.me() {
                    self.mempool.remove(c.request_id());
                }
            }
            let digest = batch_digest(seq, &batch);
            self.accept_preprepare(seq, view, batch, digest, out);
        }
        self.next_seq = high.max(low).max(self.exec) + 1;
        if self.exec < low {
            if let Some(src) = proofs
                .iter()
                .filter(|vc| vc.last_exec == low)
                .map(|vc| vc.sender)
                .next()
            {
                if src != self.me() {
                    out.push(Action::Send(
                        src,
                        PbftMessage::Fetch {
                            from_seq: self.exec + 1,
                        },
                    ));
                }
            }
        }
        if leader != self.me() {
            let digest = Digest::of(&codec::encode(&(view, proofs)));
            out.push(Action::Broadcast(PbftMessage::NewViewAck { view, digest }));
        }
        self.propose(out);
        self.early.retain(|v, _| *v >= view);
        if let Some(buffered) = self.early.remove(&view) {
            for (from, msg) in buffered {
                self.on_message(from, msg, now, out);
            }
        }
    }

    fn join_if_pulled(&mut self, now: Time, out: &mut Vec<Action<PbftMessage>>) {
        let current = match self.status {
            Status::Normal => self.view,
            Status::Changing(t) => t,
        };
        let mut highest: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (v, vcs) in self.view_changes.range(current + 1..) {
            for s in vcs.keys() {
                highest.insert(*s, *v);
            }
        }
        if highest.len() > self.ctx.quorum.f {
            let target = *highest.values().min().unwrap();
            self.start_view_change(target, now, out);
        }
    }

    fn on_message(
        &mut self,
        from: NodeId,
        msg: PbftMessage,
        now: Time,
        out: &mut Vec<Action<PbftMessage>>,
    ) {
        match msg {
            PbftMessage::PrePrepare {
                view,
                seq,
                batch,
                digest,
            } => {
                let ahead =
                    view > self.view || (view == self.view && self.status != Status::Normal);
                if ahead && from == self.leader_of(view) && view <= self.view + self.n() as u64 {
                    let msg = PbftMessage::PrePrepare {
                        view,
                        seq,
                        batch,
                        digest,
                    };
                    self.early.entry(view).or_default().push((from, msg));
                    return;
                }
                if view != self.view
                    || self.status != Status::Normal
                    || from != self.leader_of(view)
                {
                    self.counters.dropped += 1;
                    return;
                }
                if digest != batch_digest(seq, &batch) || seq <= self.exec {
                    self.counters.dropped += 1;
                    return;
                }
                if let Some((v, _, d)) = self.log.get(&seq).and_then(|s| s.preprepare.as_ref()) {
                    if *v == view {
                        if *d != digest && self.conflicts.insert((seq, view)) {
                            self.counters.equivocations += 1;
                        }
                        return;
                    }
                }
                self.accept_preprepare(seq, view, batch, digest, out);
            }
            PbftMessage::Prepare { seq, vote } => {
                if seq <= self.exec || !self.valid_vote(&vote, VoteKind::Prepare, from) {
                    return;
                }
                let slot = self.log.entry(seq).or_default();
                if let Some((v, _, d)) = &slot.preprepare {
                    if *v == vote.view && *d != vote.block_hash && self.conflicts.insert((seq, *v))
                    {
                        self.counters.equivocations += 1;
                    }
                }
                slot.prepares
                    .entry((vote.view, vote.block_hash))
                    .or_default()
                    .insert(from, vote);
                self.check_prepared(seq, out);
            }
            PbftMessage::Commit { seq, vote } => {
                if seq <= self.exec || !self.valid_vote(&vote, VoteKind::Commit, from) {
                    return;
                }
                let slot = self.log.entry(seq).or_default();
                slot.commits
                    .entry((vote.view, vote.block_hash))
                    .or_default()
                    .insert(from, vote);
                self.check_committed(seq, out);
            }
            PbftMessage::ViewChange(vc) => {
                if vc.sender != from || vc.new_view <= self.view || !self.valid_view_change(&vc) {
                    self.counters.dropped += 1;
                    return;
                }
                let v = vc.new_view;
                self.view_changes.entry(v).or_default().insert(from, vc);
                self.join_if_pulled(now, out);
                self.try_new_view(v, now, out);
            }
            PbftMessage::NewView {
                view,
                proofs,
                preprepares,
            } => {
                if from != self.leader_of(view)
                    || view < self.view
                    || (view == self.view && self.status == Status::Normal)
                {
                    return;
                }
                let senders: HashSet<NodeId> = proofs.iter().map(|vc| vc.sender).collect();
                let valid = senders.len() >= self.q()
                    && proofs
                        .iter()
                        .all(|vc| vc.new_view == view && self.valid_view_change(vc))
                    && Self::reproposals(&proofs, from).1 == preprepares;
                if !valid {
                    self.counters.dropped += 1;
                    return;
                }
                self.install(view, &proofs, now, out);
            }
            PbftMessage::NewViewAck { .. } => {}
            PbftMessage::Fetch { from_seq } => {
                let entries: Vec<Certificate> = self
                    .executed
                    .range(from_seq..)
                    .map(|(_, c)| c.clone())
                    .collect();
                if !entries.is_empty() {
                    out.push(Action::Send(from, PbftMessage::FetchReply { entries }));
                }
            }
            PbftMessage::FetchReply { entries } => {
                for cert in entries {
                    if cert.seq <= self.exec || !self.valid_certificate(&cert, VoteKind::Commit) {
                        continue;
                    }
                    let seq = cert.seq;
                    self.log.entry(seq).or_default().committed = Some(cert);
                }
                self.execute_ready(out);
            }
        }
    }
}

impl Engine for Pbft {
    type Message = PbftMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(&mut self, event: Event<PbftMessage>, now: Time) -> Vec<Action<PbftMessage>> {
        let mut out = Vec::new();
        self.progress = false;
        match event {
            Event::Init => {}
            Event::ClientRequest(cmd) => {
                let id = cmd.request_id();
                match self.mempool.push(cmd.clone()) {
                    Admission::AlreadyCommitted => out.extend(replies(std::slice::from_ref(&cmd))),
                    Admission::Added if self.in_flight.contains(&id) => {
                        self.mempool.remove(id);
                    }
                    Admission::Added => self.propose(&mut out),
                    Admission::AlreadyPending => {}
                }
            }
            Event::Message { from, msg } => self.on_message(from, msg, now, &mut out),
            Event::TimerFired(VIEW_TIMER) => {
                self.timer_armed = false;
                let idle = now.saturating_sub(self.last_progress);
                match self.status {
                    Status::Normal if self.has_work() => {
                        if idle >= self.cfg.view_timeout {
                            self.start_view_change(self.view + 1, now, &mut out);
                        } else {
                            self.timer_armed = true;
                            out.push(Action::SetTimer {
                                after: self.cfg.view_timeout - idle,
                                id: VIEW_TIMER,
                            });
                        }
                    }
                    Status::Changing(t) => self.start_view_change(t + 1, now, &mut out),
                    Status::Normal => {}
                }
            }
            Event::TimerFired(_) => {}
        }
        if self.progress {
            self.last_progress = now;
        }
        self.arm(&mut out);
        out
    }

    fn counters(&self) -> EngineCounters {
        self.counters
    }
}
