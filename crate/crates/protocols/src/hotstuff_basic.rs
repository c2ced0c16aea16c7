//! Unchained (basic) HotStuff: one block per view through four explicit
//! phases.
//!
//! Replicas with pending work send `NewView` carrying their highest prepare
//! QC to the view's leader. With `n - f` of them the leader extends the
//! highest QC and broadcasts `Prepare`; votes flow back to the leader, which
//! broadcasts each QC in turn (prepare, pre-commit, commit). The commit QC
//! is the decide message. A pre-commit QC locks.
//!
//! Used as the reference for the unpipelined critical path; the chained
//! engine in [`crate::hotstuff`] is the one to benchmark.

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
pub enum BasicMessage {
    NewView {
        view: u64,
        justify: QuorumCertificate,
    },
    /// Broadcast by a replica whose view timed out.
    Timeout {
        view: u64,
        justify: QuorumCertificate,
    },
    Prepare {
        block: Block,
        justify: QuorumCertificate,
    },
    Vote(Vote),
    /// A prepare, pre-commit or commit (decide) QC from the leader.
    Certificate(QuorumCertificate),
    Fetch {
        digest: Digest,
    },
    FetchReply {
        block: Block,
    },
}

impl ProtocolMessage for BasicMessage {
    fn is_proposal(&self) -> bool {
        matches!(self, BasicMessage::Prepare { .. })
    }

    fn conflicting(&self) -> Option<Self> {
        match self {
            BasicMessage::Prepare { block, justify } => Some(BasicMessage::Prepare {
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
            BasicMessage::NewView { view, .. } | BasicMessage::Timeout { view, .. } => *view,
            BasicMessage::Prepare { block, .. } | BasicMessage::FetchReply { block } => block.view,
            BasicMessage::Vote(v) => v.view,
            BasicMessage::Certificate(qc) => qc.view,
            BasicMessage::Fetch { .. } => 0,
        }
    }

    fn is_view_change(&self) -> bool {
        matches!(
            self,
            BasicMessage::Timeout { .. }
                | BasicMessage::Fetch { .. }
                | BasicMessage::FetchReply { .. }
        )
    }
}

#[derive(Clone, Debug)]
pub struct BasicHotStuffConfig {
    pub max_batch: usize,
    pub view_timeout: Time,
    pub max_backoff: u32,
}

impl Default for BasicHotStuffConfig {
    fn default() -> Self {
        Self {
            max_batch: 1,
            view_timeout: 20_000,
            max_backoff: 6,
        }
    }
}

pub struct BasicHotStuff {
    ctx: NodeContext,
    cfg: BasicHotStuffConfig,
    view: u64,
    blocks: HashMap<Digest, Block>,
    prepare_qc: QuorumCertificate,
    locked_qc: QuorumCertificate,
    committed: Block,
    mempool: Mempool,
    new_views: BTreeMap<u64, BTreeMap<NodeId, QuorumCertificate>>,
    sent_new_view: u64,
    proposed: HashSet<u64>,
    voted: HashSet<(u64, VoteKind)>,
    votes: HashMap<(u64, VoteKind, Digest), BTreeMap<NodeId, Vote>>,
    formed: HashSet<(u64, VoteKind)>,
    /// Proposals waiting for their parent block.
    waiting: HashMap<Digest, Vec<(NodeId, Block, QuorumCertificate)>>,
    /// A commit QC whose chain is not fully known yet.
    pending_decide: Option<QuorumCertificate>,
    fetching: HashSet<Digest>,
    assist: bool,
    timer_armed: bool,
    last_progress: Time,
    backoff: u32,
    now: Time,
    counters: EngineCounters,
}

impl BasicHotStuff {
    pub fn new(ctx: NodeContext, cfg: BasicHotStuffConfig) -> Self {
        let genesis = Block::genesis();
        let mut blocks = HashMap::new();
        blocks.insert(genesis.hash(), genesis.clone());
        Self {
            ctx,
            cfg,
            view: 1,
            blocks,
            prepare_qc: QuorumCertificate::genesis(VoteKind::Prepare),
            locked_qc: QuorumCertificate::genesis(VoteKind::PreCommit),
            committed: genesis,
            mempool: Mempool::default(),
            new_views: BTreeMap::new(),
            sent_new_view: 0,
            proposed: HashSet::new(),
            voted: HashSet::new(),
            votes: HashMap::new(),
            formed: HashSet::new(),
            waiting: HashMap::new(),
            pending_decide: None,
            fetching: HashSet::new(),
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

    pub fn locked_qc(&self) -> &QuorumCertificate {
        &self.locked_qc
    }

    pub fn committed_height(&self) -> u64 {
        self.committed.height
    }

    pub fn leader_of(&self, view: u64) -> NodeId {
        NodeId((view % self.ctx.n() as u64) as u32)
    }

    fn me(&self) -> NodeId {
        self.ctx.id
    }

    fn has_work(&self) -> bool {
        self.assist || !self.mempool.is_empty()
    }

    fn uncommitted(&self, tip: Digest) -> Option<Vec<&Block>> {
        let mut out = Vec::new();
        let mut cur = tip;
        loop {
            let b = self.blocks.get(&cur)?;
            if b.height <= self.committed.height {
                return Some(out);
            }
            out.push(b);
            cur = b.parent_hash;
        }
    }

    fn extends(&self, block: &Block, ancestor: Digest) -> bool {
        let Some(target) = self.blocks.get(&ancestor) else {
            return false;
        };
        let mut cur = block;
        loop {
            if cur.hash() == ancestor {
                return true;
            }
            if cur.height <= target.height {
                return false;
            }
            match self.blocks.get(&cur.parent_hash) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    fn fetch(&mut self, from: NodeId, digest: Digest, out: &mut Vec<Action<BasicMessage>>) {
        if from != self.me() && self.fetching.insert(digest) {
            out.push(Action::Send(from, BasicMessage::Fetch { digest }));
        }
    }

    fn enter_view(&mut self, view: u64) {
        if view > self.view {
            self.view = view;
            self.last_progress = self.now;
        }
    }

    /// Tells the current leader this replica is ready, once per view.
    fn announce(&mut self, out: &mut Vec<Action<BasicMessage>>) {
        if !self.has_work() || self.sent_new_view >= self.view {
            return;
        }
        let view = self.view;
        self.sent_new_view = view;
        let justify = self.prepare_qc.clone();
        let leader = self.leader_of(view);
        if leader == self.me() {
            self.on_new_view(self.me(), view, justify, out);
        } else {
            out.push(Action::Send(
                leader,
                BasicMessage::NewView { view, justify },
            ));
        }
    }

    fn on_new_view(
        &mut self,
        from: NodeId,
        view: u64,
        justify: QuorumCertificate,
        out: &mut Vec<Action<BasicMessage>>,
    ) {
        if !justify.is_valid(&self.ctx.quorum)
            || justify.kind != VoteKind::Prepare
            || view < self.view
        {
            self.counters.dropped += 1;
            return;
        }
        self.observe_prepare_qc(from, &justify, out);
        self.new_views
            .entry(view)
            .or_default()
            .insert(from, justify);
        self.try_propose(out);
    }

    fn on_timeout_message(
        &mut self,
        from: NodeId,
        view: u64,
        justify: QuorumCertificate,
        out: &mut Vec<Action<BasicMessage>>,
    ) {
        self.on_new_view(from, view, justify, out);
        // f + 1 replicas beyond our view include an honest one
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
            self.broadcast_timeout(v, out);
        }
    }

    fn broadcast_timeout(&mut self, view: u64, out: &mut Vec<Action<BasicMessage>>) {
        if view <= self.sent_new_view {
            return;
        }
        self.sent_new_view = view;
        self.enter_view(view);
        let justify = self.prepare_qc.clone();
        out.push(Action::Broadcast(BasicMessage::Timeout {
            view,
            justify: justify.clone(),
        }));
        self.on_timeout_message(self.me(), view, justify, out);
    }

    fn observe_prepare_qc(
        &mut self,
        from: NodeId,
        qc: &QuorumCertificate,
        out: &mut Vec<Action<BasicMessage>>,
    ) {
        if qc.view <= self.prepare_qc.view {
            return;
        }
        if self.blocks.contains_key(&qc.block_hash) {
            self.prepare_qc = qc.clone();
        } else {
            self.fetch(from, qc.block_hash, out);
        }
    }

    fn try_propose(&mut self, out: &mut Vec<Action<BasicMessage>>) {
        let v = self.view;
        if self.leader_of(v) != self.me() || self.proposed.contains(&v) || !self.has_work() {
            return;
        }
        let Some(reports) = self.new_views.get(&v) else {
            return;
        };
        if reports.len() < self.ctx.quorum.byzantine_quorum {
            return;
        }
        let best = reports
            .values()
            .chain(std::iter::once(&self.prepare_qc))
            .max_by_key(|qc| qc.view)
            .cloned();
        let Some(justify) = best else { return };
        let Some(parent) = self.blocks.get(&justify.block_hash).cloned() else {
            return;
        };
        let Some(chain) = self.uncommitted(parent.hash()) else {
            return;
        };
        let in_chain: HashSet<RequestId> = chain
            .iter()
            .flat_map(|b| b.commands.iter().map(Command::request_id))
            .collect();
        let commands = self.mempool.peek(self.cfg.max_batch.max(1), &in_chain);
        let block = Block::child_of(&parent, commands, self.me(), v);
        self.proposed.insert(v);
        out.push(Action::Broadcast(BasicMessage::Prepare {
            block: block.clone(),
            justify: justify.clone(),
        }));
        self.on_prepare(self.me(), block, justify, out);
    }

    fn on_prepare(
        &mut self,
        from: NodeId,
        block: Block,
        justify: QuorumCertificate,
        out: &mut Vec<Action<BasicMessage>>,
    ) {
        if from != self.leader_of(block.view)
            || block.proposer != from
            || !justify.is_valid(&self.ctx.quorum)
            || justify.kind != VoteKind::Prepare
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
        if self
            .blocks
            .values()
            .any(|b| b.view == block.view && b.proposer == from)
        {
            self.counters.equivocations += 1;
        }
        match self.blocks.get(&block.parent_hash) {
            Some(p) if p.height + 1 == block.height => {}
            Some(_) => {
                self.counters.dropped += 1;
                return;
            }
            None => {
                let parent = block.parent_hash;
                self.waiting
                    .entry(parent)
                    .or_default()
                    .push((from, block, justify));
                self.fetch(from, parent, out);
                return;
            }
        }
        self.store(block.clone(), out);
        self.observe_prepare_qc(from, &justify, out);

        let safe =
            self.extends(&block, self.locked_qc.block_hash) || justify.view > self.locked_qc.view;
        if block.view >= self.view && safe && self.voted.insert((block.view, VoteKind::Prepare)) {
            self.enter_view(block.view);
            self.vote(VoteKind::Prepare, digest, block.view, out);
        }
    }

    fn store(&mut self, block: Block, out: &mut Vec<Action<BasicMessage>>) {
        let digest = block.hash();
        self.fetching.remove(&digest);
        self.blocks.insert(digest, block);
        if let Some(children) = self.waiting.remove(&digest) {
            for (f, b, j) in children {
                self.on_prepare(f, b, j, out);
            }
        }
        if let Some(qc) = self.pending_decide.take() {
            self.decide(self.leader_of(qc.view), qc, out);
        }
    }

    fn vote(
        &mut self,
        kind: VoteKind,
        digest: Digest,
        view: u64,
        out: &mut Vec<Action<BasicMessage>>,
    ) {
        self.last_progress = self.now;
        let vote = Vote::new(kind, digest, view, self.me(), &self.ctx.auth);
        let leader = self.leader_of(view);
        if leader == self.me() {
            self.on_vote(self.me(), vote, out);
        } else {
            out.push(Action::Send(leader, BasicMessage::Vote(vote)));
        }
    }

    fn on_vote(&mut self, from: NodeId, vote: Vote, out: &mut Vec<Action<BasicMessage>>) {
        if vote.voter != from
            || !vote.verify(&self.ctx.auth)
            || self.leader_of(vote.view) != self.me()
        {
            self.counters.dropped += 1;
            return;
        }
        let key = (vote.view, vote.kind, vote.block_hash);
        let set = self.votes.entry(key).or_default();
        set.insert(from, vote);
        let q = self.ctx.quorum.byzantine_quorum;
        if set.len() < q || self.formed.contains(&(key.0, key.1)) {
            return;
        }
        let votes: Vec<Vote> = set.values().cloned().collect();
        if let Ok(qc) = QuorumCertificate::from_votes(&votes, q) {
            self.formed.insert((key.0, key.1));
            out.push(Action::Broadcast(BasicMessage::Certificate(qc.clone())));
            self.on_certificate(self.me(), qc, out);
        }
    }

    fn on_certificate(
        &mut self,
        from: NodeId,
        qc: QuorumCertificate,
        out: &mut Vec<Action<BasicMessage>>,
    ) {
        if from != self.leader_of(qc.view) || !qc.is_valid(&self.ctx.quorum) {
            self.counters.dropped += 1;
            return;
        }
        let current = qc.view == self.view;
        match qc.kind {
            VoteKind::Prepare => {
                self.observe_prepare_qc(from, &qc, out);
                if current && self.voted.insert((qc.view, VoteKind::PreCommit)) {
                    self.vote(VoteKind::PreCommit, qc.block_hash, qc.view, out);
                }
            }
            VoteKind::PreCommit => {
                if qc.view > self.locked_qc.view {
                    self.locked_qc = qc.clone();
                }
                if current && self.voted.insert((qc.view, VoteKind::Commit)) {
                    self.vote(VoteKind::Commit, qc.block_hash, qc.view, out);
                }
            }
            VoteKind::Commit => self.decide(from, qc, out),
            _ => self.counters.dropped += 1,
        }
    }

    fn decide(&mut self, from: NodeId, qc: QuorumCertificate, out: &mut Vec<Action<BasicMessage>>) {
        let tip = qc.block_hash;
        if self
            .blocks
            .get(&tip)
            .is_some_and(|b| b.height <= self.committed.height)
        {
            return;
        }
        let Some(chain) = self.uncommitted(tip) else {
            // walk down to the first missing ancestor
            let mut cur = tip;
            while let Some(b) = self.blocks.get(&cur) {
                cur = b.parent_hash;
            }
            self.pending_decide = Some(qc);
            self.fetch(from, cur, out);
            return;
        };
        let mut chain: Vec<Block> = chain.into_iter().cloned().collect();
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
        self.enter_view(qc.view + 1);
        self.last_progress = self.now;
        let view = self.view;
        let floor = self.committed.height;
        self.blocks.retain(|_, b| b.height + 1 >= floor);
        self.new_views.retain(|v, _| *v >= view);
        self.votes.retain(|(v, _, _), _| *v >= view);
        self.voted.retain(|(v, _)| *v >= view);
        self.formed.retain(|(v, _)| *v >= view);
    }

    fn on_timeout(&mut self, out: &mut Vec<Action<BasicMessage>>) {
        self.counters.timeouts += 1;
        self.backoff = (self.backoff + 1).min(self.cfg.max_backoff);
        let target = self.view + 1;
        self.broadcast_timeout(target, out);
    }

    fn current_timeout(&self) -> Time {
        self.cfg.view_timeout << self.backoff
    }

    fn arm(&mut self, out: &mut Vec<Action<BasicMessage>>) {
        if !self.timer_armed && self.has_work() {
            self.timer_armed = true;
            out.push(Action::SetTimer {
                after: self.current_timeout(),
                id: PACEMAKER,
            });
        }
    }
}

impl Engine for BasicHotStuff {
    type Message = BasicMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(&mut self, event: Event<BasicMessage>, now: Time) -> Vec<Action<BasicMessage>> {
        self.now = now;
        let mut out = Vec::new();
        match event {
            Event::Init => {}
            Event::ClientRequest(cmd) => {
                if self.mempool.push(cmd.clone()) == Admission::AlreadyCommitted {
                    self.assist = true;
                    out.extend(replies(std::slice::from_ref(&cmd)));
                }
            }
            Event::Message { from, msg } => match msg {
                BasicMessage::NewView { view, justify } => {
                    self.on_new_view(from, view, justify, &mut out)
                }
                BasicMessage::Timeout { view, justify } => {
                    self.on_timeout_message(from, view, justify, &mut out)
                }
                BasicMessage::Prepare { block, justify } => {
                    self.on_prepare(from, block, justify, &mut out)
                }
                BasicMessage::Vote(v) => self.on_vote(from, v, &mut out),
                BasicMessage::Certificate(qc) => self.on_certificate(from, qc, &mut out),
                BasicMessage::Fetch { digest } => {
                    if let Some(block) = self.blocks.get(&digest).cloned() {
                        out.push(Action::Send(from, BasicMessage::FetchReply { block }));
                    }
                }
                BasicMessage::FetchReply { block } => {
                    if self.fetching.contains(&block.hash()) {
                        self.store(block, &mut out);
                    }
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
        self.announce(&mut out);
        self.try_propose(&mut out);
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

    fn node(id: u32) -> BasicHotStuff {
        let quorum = quorum_sizes(4, FaultModel::Byzantine).unwrap();
        let ctx = NodeContext {
            id: NodeId(id),
            quorum,
            auth: Authenticator::hashed(1),
            seed: 1,
        };
        BasicHotStuff::new(ctx, BasicHotStuffConfig::default())
    }

    #[test]
    fn request_triggers_new_view_to_leader() {
        let mut n = node(2);
        let out = n.on_event(Event::ClientRequest(Command::new(1, 1, vec![], vec![])), 0);
        assert!(out.iter().any(|a| matches!(
            a,
            Action::Send(NodeId(1), BasicMessage::NewView { view: 1, .. })
        )));
    }

    #[test]
    fn prepare_from_non_leader_is_dropped() {
        let mut n = node(2);
        let g = Block::genesis();
        let block = Block::child_of(&g, vec![], NodeId(3), 1);
        let msg = BasicMessage::Prepare {
            block,
            justify: QuorumCertificate::genesis(VoteKind::Prepare),
        };
        let out = n.on_event(
            Event::Message {
                from: NodeId(3),
                msg,
            },
            0,
        );
        assert!(out.is_empty());
        assert_eq!(n.counters().dropped, 1);
    }
}
