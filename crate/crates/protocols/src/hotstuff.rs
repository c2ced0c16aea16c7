//! Chained HotStuff with a rotating leader (`view mod n`).
//!
//! Each view's leader proposes one block justified by the highest QC it
//! knows. Replicas vote for it to the next view's leader, which aggregates
//! the votes into the QC carried by its own proposal. A QC for a block
//! locks its parent (two-chain) and commits its grandparent when the three
//! are direct parents with consecutive views.
//!
//! The pacemaker times out a view with no progress and broadcasts
//! `NewView` with the sender's highest QC and last vote. `f + 1` of them for
//! higher views pull a node along; `n - f` for a view let its leader
//! propose without a fresh QC. Timeouts back off exponentially
//! and reset on every vote.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use qlab_core::mempool::{Admission, RequestId};
use qlab_core::{
    Action, Block, Command, Digest, Engine, EngineCounters, Event, Mempool, NodeContext, NodeId,
    ProtocolMessage, QuorumCertificate, Time, TimerId, Vote, VoteKind,
};

use crate::common::{fork_commands, is_designated_replier, replies};

const PACEMAKER: TimerId = TimerId(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HotStuffMessage {
    Proposal {
        block: Block,
        justify: QuorumCertificate,
    },
    Vote(Vote),
    /// Carries the sender's last vote so a QC lost with a dead leader
    /// can still be formed.
    NewView {
        view: u64,
        high_qc: QuorumCertificate,
        vote: Option<Vote>,
    },
    Fetch {
        digest: Digest,
    },
    FetchReply {
        block: Block,
        justify: QuorumCertificate,
    },
}

impl ProtocolMessage for HotStuffMessage {
    fn is_proposal(&self) -> bool {
        matches!(self, HotStuffMessage::Proposal { .. })
    }

    fn conflicting(&self) -> Option<Self> {
        match self {
            HotStuffMessage::Proposal { block, justify } => Some(HotStuffMessage::Proposal {
                block: Block {
                    commands: fork_commands(&block.commands),
                    ..block.clone()
                },
                justify: justify.clone(),
            }),
            _ => None,
        }
    }

    fn instance(&self) -> u64 {
        match self {
            HotStuffMessage::Proposal { block, .. } | HotStuffMessage::FetchReply { block, .. } => {
                block.view
            }
            HotStuffMessage::Vote(v) => v.view,
            HotStuffMessage::NewView { view, .. } => *view,
            HotStuffMessage::Fetch { .. } => 0,
        }
    }

    fn is_view_change(&self) -> bool {
        matches!(
            self,
            HotStuffMessage::NewView { .. }
                | HotStuffMessage::Fetch { .. }
                | HotStuffMessage::FetchReply { .. }
        )
    }
}

#[derive(Clone, Debug)]
pub struct HotStuffConfig {
    pub max_batch: usize,
    pub view_timeout: Time,
    /// Cap on the timeout doubling exponent.
    pub max_backoff: u32,
}

impl Default for HotStuffConfig {
    fn default() -> Self {
        Self {
            max_batch: 1,
            view_timeout: 20_000,
            max_backoff: 6,
        }
    }
}

pub struct HotStuff {
    ctx: NodeContext,
    cfg: HotStuffConfig,
    view: u64,
    blocks: HashMap<Digest, (Block, QuorumCertificate)>,
    high_qc: QuorumCertificate,
    locked_qc: QuorumCertificate,
    last_voted: u64,
    last_vote: Option<Vote>,
    committed: Block,
    mempool: Mempool,
    votes: BTreeMap<(u64, Digest), BTreeMap<NodeId, Vote>>,
    vote_digests: HashMap<u64, Digest>,
    view_voters: BTreeMap<u64, BTreeMap<NodeId, Digest>>,
    new_views: BTreeMap<u64, BTreeMap<NodeId, QuorumCertificate>>,
    proposed: HashSet<u64>,
    sent_new_view: u64,
    /// Proposals waiting for a missing ancestor, keyed by that ancestor.
    waiting: HashMap<Digest, Vec<(NodeId, Block, QuorumCertificate)>>,
    /// QCs for blocks not yet received.
    orphan_qcs: HashMap<Digest, QuorumCertificate>,
    /// A client retried a command committed here, so others may lag.
    assist: bool,
    timer_armed: bool,
    last_progress: Time,
    backoff: u32,
    now: Time,
    counters: EngineCounters,
}

impl HotStuff {
    pub fn new(ctx: NodeContext, cfg: HotStuffConfig) -> Self {
        let genesis = Block::genesis();
        let gqc = QuorumCertificate::genesis(VoteKind::Prepare);
        let mut blocks = HashMap::new();
        blocks.insert(genesis.hash(), (genesis.clone(), gqc.clone()));
        Self {
            ctx,
            cfg,
            view: 1,
            blocks,
            high_qc: gqc.clone(),
            locked_qc: gqc,
            last_voted: 0,
            last_vote: None,
            committed: genesis,
            mempool: Mempool::default(),
            votes: BTreeMap::new(),
            vote_digests: HashMap::new(),
            view_voters: BTreeMap::new(),
            new_views: BTreeMap::new(),
            proposed: HashSet::new(),
            sent_new_view: 0,
            waiting: HashMap::new(),
            orphan_qcs: HashMap::new(),
            assist: false,
            timer_armed: false,
            last_progress: 0,
            backoff: 0,
            now: 0,
            counters: EngineCounters::default(),
        }
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn high_qc(&self) -> &QuorumCertificate {
        &self.high_qc
    }

    pub fn locked_qc(&self) -> &QuorumCertificate {
        &self.locked_qc
    }

    pub fn committed_height(&self) -> u64 {
        self.committed.height
    }

    fn me(&self) -> NodeId {
        self.ctx.id
    }

    pub fn leader_of(&self, view: u64) -> NodeId {
        NodeId((view % self.ctx.n() as u64) as u32)
    }

    fn block(&self, d: &Digest) -> Option<&(Block, QuorumCertificate)> {
        self.blocks.get(d)
    }

    /// Uncommitted blocks from `tip` down to (excluding) the committed head.
    fn uncommitted(&self, tip: Digest) -> Vec<&Block> {
        let mut out = Vec::new();
        let mut cur = tip;
        while let Some((b, _)) = self.block(&cur) {
            if b.height <= self.committed.height {
                break;
            }
            out.push(b);
            cur = b.parent_hash;
        }
        out
    }

    fn pending_commands(&self) -> Vec<Command> {
        let in_chain: HashSet<RequestId> = self
            .uncommitted(self.high_qc.block_hash)
            .iter()
            .flat_map(|b| b.commands.iter().map(Command::request_id))
            .collect();
        self.mempool.peek(self.cfg.max_batch.max(1), &in_chain)
    }

    fn has_work(&self) -> bool {
        self.assist
            || !self.mempool.is_empty()
            || self
                .uncommitted(self.high_qc.block_hash)
                .iter()
                .any(|b| !b.commands.is_empty())
    }

    /// Whether commands still wait for commit here, or sit in one of the
    /// three blocks under the highest QC (others commit those only once a
    /// proposal on top of that QC reaches them).
    fn needs_flush(&self) -> bool {
        if self
            .uncommitted(self.high_qc.block_hash)
            .iter()
            .any(|b| !b.commands.is_empty())
        {
            return true;
        }
        let mut cur = self.high_qc.block_hash;
        for _ in 0..3 {
            match self.block(&cur) {
                Some((b, _)) if !b.is_genesis() => {
                    if !b.commands.is_empty() {
                        return true;
                    }
                    cur = b.parent_hash;
                }
                _ => return false,
            }
        }
        false
    }

    fn extends(&self, block: &Block, ancestor: Digest) -> bool {
        let Some((target, _)) = self.block(&ancestor) else {
            return false;
        };
        let mut cur = block.clone();
        loop {
            if cur.hash() == ancestor {
                return true;
            }
            if cur.height <= target.height {
                return false;
            }
            match self.block(&cur.parent_hash) {
                Some((p, _)) => cur = p.clone(),
                None => return false,
            }
        }
    }

    fn enter_view(&mut self, view: u64) {
        if view > self.view {
            self.view = view;
            self.last_progress = self.now;
        }
    }

    fn try_propose(&mut self, out: &mut Vec<Action<HotStuffMessage>>) {
        let v = self.view;
        if self.leader_of(v) != self.me() || self.proposed.contains(&v) {
            return;
        }
        let ready = self.high_qc.view + 1 == v
            || self
                .new_views
                .get(&v)
                .is_some_and(|m| m.len() >= self.ctx.quorum.byzantine_quorum);
        if !ready || (self.mempool.is_empty() && !self.needs_flush()) {
            return;
        }
        let Some((parent, _)) = self.block(&self.high_qc.block_hash).cloned() else {
            return;
        };
        let commands = self.pending_commands();
        let block = Block::child_of(&parent, commands, self.me(), v);
        let justify = self.high_qc.clone();
        self.proposed.insert(v);
        out.push(Action::Broadcast(HotStuffMessage::Proposal {
            block: block.clone(),
            justify: justify.clone(),
        }));
        self.on_proposal(self.me(), block, justify, out);
    }

    fn on_proposal(
        &mut self,
        from: NodeId,
        block: Block,
        justify: QuorumCertificate,
        out: &mut Vec<Action<HotStuffMessage>>,
    ) {
        if from != self.leader_of(block.view)
            || block.proposer != from
            || !justify.is_valid(&self.ctx.quorum)
            || justify.block_hash != block.parent_hash
            || justify.view >= block.view
        {
            self.counters.dropped += 1;
            return;
        }
        let digest = block.hash();
        if self.blocks.contains_key(&digest) {
            return;
        }
        if let Some(seen) = self
            .blocks
            .values()
            .find(|(b, _)| b.view == block.view && b.proposer == from)
        {
            if seen.0.hash() != digest {
                self.counters.equivocations += 1;
            }
        }
        match self.block(&block.parent_hash) {
            Some((p, _)) if p.height + 1 == block.height => {}
            Some(_) => {
                self.counters.dropped += 1;
                return;
            }
            None => {
                let parent = block.parent_hash;
                let first = !self.waiting.contains_key(&parent);
                self.waiting
                    .entry(parent)
                    .or_default()
                    .push((from, block, justify));
                if first {
                    out.push(Action::Send(
                        from,
                        HotStuffMessage::Fetch { digest: parent },
                    ));
                }
                return;
            }
        }
        self.blocks.insert(digest, (block.clone(), justify.clone()));
        self.process_qc(&justify, out);
        if let Some(qc) = self.orphan_qcs.remove(&digest) {
            self.process_qc(&qc, out);
        }

        let safe =
            self.extends(&block, self.locked_qc.block_hash) || justify.view > self.locked_qc.view;
        if block.view >= self.view && block.view > self.last_voted && safe {
            self.last_voted = block.view;
            let vote = Vote::new(
                VoteKind::Prepare,
                digest,
                block.view,
                self.me(),
                &self.ctx.auth,
            );
            let next = self.leader_of(block.view + 1);
            self.enter_view(block.view + 1);
            self.last_progress = self.now;
            self.last_vote = Some(vote.clone());
            self.backoff = 0;
            if next == self.me() {
                self.on_vote(self.me(), vote, out);
            } else {
                out.push(Action::Send(next, HotStuffMessage::Vote(vote)));
            }
        }

        if let Some(children) = self.waiting.remove(&digest) {
            for (f, b, j) in children {
                self.on_proposal(f, b, j, out);
            }
        }
        self.try_propose(out);
    }

    fn process_qc(&mut self, qc: &QuorumCertificate, out: &mut Vec<Action<HotStuffMessage>>) {
        if qc.view > self.high_qc.view {
            if self.blocks.contains_key(&qc.block_hash) {
                self.high_qc = qc.clone();
            } else {
                self.orphan_qcs.insert(qc.block_hash, qc.clone());
            }
        }
        self.enter_view(qc.view + 1);
        let Some((b2, j2)) = self.block(&qc.block_hash).cloned() else {
            return;
        };
        let Some((b1, j1)) = self.block(&j2.block_hash).cloned() else {
            return;
        };
        if j2.view > self.locked_qc.view {
            self.locked_qc = j2.clone();
        }
        let Some((b0, _)) = self.block(&j1.block_hash).cloned() else {
            return;
        };
        let direct = b2.parent_hash == b1.hash() && b1.parent_hash == b0.hash();
        let consecutive = b2.view == b1.view + 1 && b1.view == b0.view + 1;
        if direct && consecutive && b0.height > self.committed.height {
            self.commit(b0, out);
        }
    }

    fn commit(&mut self, tip: Block, out: &mut Vec<Action<HotStuffMessage>>) {
        let mut chain: Vec<Block> = self.uncommitted(tip.hash()).into_iter().cloned().collect();
        chain.reverse();
        let n = self.ctx.n();
        let repliers = self.ctx.quorum.f + 1;
        for b in chain {
            self.mempool.mark_committed(&b);
            if is_designated_replier(self.me(), b.proposer, repliers, n) {
                out.extend(replies(&b.commands));
            }
            self.committed = b.clone();
            out.push(Action::CommitBlock(b));
        }
        self.backoff = 0;
        self.assist = false;
        self.last_progress = self.now;
        let floor = self.committed.height;
        self.blocks.retain(|_, (b, _)| b.height + 3 >= floor);
        let view = self.view;
        self.votes.retain(|(v, _), _| *v + 1 >= view);
        self.new_views.retain(|v, _| *v >= view);
    }

    fn on_vote(&mut self, from: NodeId, vote: Vote, out: &mut Vec<Action<HotStuffMessage>>) {
        if vote.voter != from || vote.kind != VoteKind::Prepare || !vote.verify(&self.ctx.auth) {
            self.counters.dropped += 1;
            return;
        }
        if self.leader_of(vote.view + 1) != self.me() {
            return;
        }
        self.record_vote(vote, out);
    }

    fn record_vote(&mut self, vote: Vote, out: &mut Vec<Action<HotStuffMessage>>) {
        let from = vote.voter;
        match self.vote_digests.get(&vote.view) {
            Some(d) if *d != vote.block_hash => self.counters.equivocations += 1,
            _ => {
                self.vote_digests.insert(vote.view, vote.block_hash);
            }
        }
        let (view, digest) = (vote.view, vote.block_hash);
        let set = self.votes.entry((view, digest)).or_default();
        let before = set.len();
        set.insert(from, vote);
        let q = self.ctx.quorum.byzantine_quorum;
        if before < q && set.len() >= q {
            let votes: Vec<Vote> = set.values().cloned().collect();
            if let Ok(qc) = QuorumCertificate::from_votes(&votes, q) {
                self.last_progress = self.now;
                self.process_qc(&qc, out);
                self.try_propose(out);
            }
            return;
        }
        // Split votes that can no longer reach a quorum stand in for
        // new-view messages, so the next view starts without a timeout.
        let voters = self.view_voters.entry(view).or_default();
        voters.insert(from, digest);
        let mut tally: HashMap<Digest, usize> = HashMap::new();
        for d in voters.values() {
            *tally.entry(*d).or_default() += 1;
        }
        let best = tally.values().copied().max().unwrap_or(0);
        let missing = self.ctx.n() - voters.len();
        if voters.len() >= q && best + missing < q {
            let senders: Vec<NodeId> = voters.keys().copied().collect();
            let high_qc = self.high_qc.clone();
            let nv = self.new_views.entry(view + 1).or_default();
            for s in senders {
                nv.entry(s).or_insert_with(|| high_qc.clone());
            }
            self.enter_view(view + 1);
            self.try_propose(out);
        }
    }

    fn on_timeout(&mut self, out: &mut Vec<Action<HotStuffMessage>>) {
        self.counters.timeouts += 1;
        self.backoff = (self.backoff + 1).min(self.cfg.max_backoff);
        let target = self.view + 1;
        self.send_new_view(target, out);
    }

    fn send_new_view(&mut self, target: u64, out: &mut Vec<Action<HotStuffMessage>>) {
        if target <= self.sent_new_view {
            return;
        }
        self.sent_new_view = target;
        self.enter_view(target);
        let high_qc = self.high_qc.clone();
        let vote = self.last_vote.clone();
        out.push(Action::Broadcast(HotStuffMessage::NewView {
            view: target,
            high_qc: high_qc.clone(),
            vote: vote.clone(),
        }));
        self.on_new_view(self.me(), target, high_qc, vote, out);
    }

    fn on_new_view(
        &mut self,
        from: NodeId,
        view: u64,
        qc: QuorumCertificate,
        vote: Option<Vote>,
        out: &mut Vec<Action<HotStuffMessage>>,
    ) {
        if !qc.is_valid(&self.ctx.quorum) || view < self.view {
            return;
        }
        let leader = self.leader_of(view) == self.me();
        if let Some(v) = vote
            .filter(|v| v.voter == from && v.kind == VoteKind::Prepare && v.verify(&self.ctx.auth))
        {
            if leader && v.view > self.high_qc.view {
                if !self.blocks.contains_key(&v.block_hash) && from != self.me() {
                    out.push(Action::Send(
                        from,
                        HotStuffMessage::Fetch {
                            digest: v.block_hash,
                        },
                    ));
                }
                self.record_vote(v, out);
            }
        }
        if qc.view > self.high_qc.view
            && !self.blocks.contains_key(&qc.block_hash)
            && from != self.me()
        {
            out.push(Action::Send(
                from,
                HotStuffMessage::Fetch {
                    digest: qc.block_hash,
                },
            ));
        }
        self.process_qc(&qc, out);
        self.new_views.entry(view).or_default().insert(from, qc);

        // f + 1 senders beyond our view include an honest one: join the
        // highest view that many of them have reached.
        let mut senders = HashSet::new();
        let mut join = None;
        for (v, set) in self.new_views.range(self.view + 1..).rev() {
            senders.extend(set.keys().copied());
            if senders.len() > self.ctx.quorum.f {
                join = Some(*v);
                break;
            }
        }
        if let Some(v) = join {
            self.send_new_view(v, out);
        }
        if self
            .new_views
            .get(&self.view)
            .is_some_and(|m| m.len() >= self.ctx.quorum.byzantine_quorum)
        {
            self.last_progress = self.now;
        }
        self.try_propose(out);
    }

    fn arm(&mut self, out: &mut Vec<Action<HotStuffMessage>>) {
        if !self.timer_armed && self.has_work() {
            self.timer_armed = true;
            out.push(Action::SetTimer {
                after: self.current_timeout(),
                id: PACEMAKER,
            });
        }
    }

    fn current_timeout(&self) -> Time {
        self.cfg.view_timeout << self.backoff
    }
}

impl Engine for HotStuff {
    type Message = HotStuffMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(
        &mut self,
        event: Event<HotStuffMessage>,
        now: Time,
    ) -> Vec<Action<HotStuffMessage>> {
        self.now = now;
        let mut out = Vec::new();
        match event {
            Event::Init => {}
            Event::ClientRequest(cmd) => match self.mempool.push(cmd.clone()) {
                Admission::AlreadyCommitted => {
                    self.assist = true;
                    out.extend(replies(std::slice::from_ref(&cmd)));
                }
                Admission::Added => self.try_propose(&mut out),
                Admission::AlreadyPending => {}
            },
            Event::Message { from, msg } => match msg {
                HotStuffMessage::Proposal { block, justify } => {
                    self.on_proposal(from, block, justify, &mut out)
                }
                HotStuffMessage::Vote(v) => self.on_vote(from, v, &mut out),
                HotStuffMessage::NewView {
                    view,
                    high_qc,
                    vote,
                } => self.on_new_view(from, view, high_qc, vote, &mut out),
                HotStuffMessage::Fetch { digest } => {
                    if let Some((block, justify)) = self.block(&digest).cloned() {
                        out.push(Action::Send(
                            from,
                            HotStuffMessage::FetchReply { block, justify },
                        ));
                    }
                }
                HotStuffMessage::FetchReply { block, justify } => {
                    let from = block.proposer;
                    self.on_proposal(from, block, justify, &mut out);
                }
            },
            Event::TimerFired(PACEMAKER) => {
                self.timer_armed = false;
                if self.has_work() {
                    let idle = now.saturating_sub(self.last_progress);
                    if idle >= self.current_timeout() {
                        self.on_timeout(&mut out);
                    } else {
                        self.timer_armed = true;
                        out.push(Action::SetTimer {
                            after: self.current_timeout() - idle,
                            id: PACEMAKER,
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
