//! Streamlet over synchronized epochs.
//!
//! Epoch `e` covers simulated time `[(e - 1) * epoch, e * epoch)` and is led
//! by `sha256(e) mod n`. The leader proposes at most one block per epoch,
//! extending the longest notarized chain it knows. Every node votes for the
//! first valid proposal of the current epoch, broadcasts the vote with the
//! block, and echoes each vote it sees from someone else once. A block with
//! `ceil(2n / 3)` votes whose parent is notarized is notarized itself. Three
//! notarized blocks from consecutive epochs, chained directly, finalize the
//! chain up to the middle one.
//!
//! Designated repliers answer clients when a block notarizes; commits are
//! emitted on finalization.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use qlab_core::mempool::{Admission, RequestId};
use qlab_core::{
    Action, Block, Command, Digest, Engine, EngineCounters, Event, Mempool, NodeContext, NodeId,
    ProtocolMessage, Time, TimerId, Vote, VoteKind,
};

use crate::common::{fork_commands, is_designated_replier, replies};

const EPOCH: TimerId = TimerId(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StreamletMessage {
    Proposal {
        block: Block,
    },
    /// A vote with the block it is for; sent by the voter and echoed by others.
    Vote {
        vote: Vote,
        block: Block,
    },
}

impl ProtocolMessage for StreamletMessage {
    fn is_proposal(&self) -> bool {
        matches!(self, StreamletMessage::Proposal { .. })
    }

    fn conflicting(&self) -> Option<Self> {
        match self {
            StreamletMessage::Proposal { block } => Some(StreamletMessage::Proposal {
                block: Block {
                    commands: fork_commands(&block.commands),
                    ..block.clone()
                },
            }),
            _ => None,
        }
    }

    fn instance(&self) -> u64 {
        match self {
            StreamletMessage::Proposal { block } | StreamletMessage::Vote { block, .. } => {
                block.view
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct StreamletConfig {
    pub max_batch: usize,
    pub epoch: Time,
}

impl Default for StreamletConfig {
    fn default() -> Self {
        Self {
            max_batch: 1,
            epoch: 3_000,
        }
    }
}

pub fn epoch_leader(epoch: u64, n: usize) -> NodeId {
    let d = Digest::of(&epoch.to_le_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&d.0[..8]);
    NodeId((u64::from_le_bytes(head) % n as u64) as u32)
}

pub struct Streamlet {
    ctx: NodeContext,
    cfg: StreamletConfig,
    blocks: HashMap<Digest, Block>,
    votes: HashMap<Digest, HashSet<NodeId>>,
    notarized: HashSet<Digest>,
    /// Longest notarized block; ties keep the first one seen.
    tip: Digest,
    finalized: Block,
    mempool: Mempool,
    /// `(epoch, voter)` pairs already seen, for echo dedup.
    seen: HashSet<(u64, NodeId)>,
    voted: HashSet<u64>,
    proposed: HashSet<u64>,
    first_proposal: BTreeMap<u64, Digest>,
    timer_armed: bool,
    now: Time,
    counters: EngineCounters,
}

impl Streamlet {
    pub fn new(ctx: NodeContext, cfg: StreamletConfig) -> Self {
        assert!(cfg.epoch > 0, "epoch length must be positive");
        let genesis = Block::genesis();
        let g = genesis.hash();
        Self {
            ctx,
            cfg,
            blocks: HashMap::from([(g, genesis.clone())]),
            votes: HashMap::new(),
            notarized: HashSet::from([g]),
            tip: g,
            finalized: genesis,
            mempool: Mempool::default(),
            seen: HashSet::new(),
            voted: HashSet::new(),
            proposed: HashSet::new(),
            first_proposal: BTreeMap::new(),
            timer_armed: false,
            now: 0,
            counters: EngineCounters::default(),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.now / self.cfg.epoch + 1
    }

    pub fn is_notarized(&self, d: &Digest) -> bool {
        self.notarized.contains(d)
    }

    pub fn finalized_height(&self) -> u64 {
        self.finalized.height
    }

    fn me(&self) -> NodeId {
        self.ctx.id
    }

    fn threshold(&self) -> usize {
        (2 * self.ctx.n()).div_ceil(3)
    }

    fn tip_height(&self) -> u64 {
        self.blocks[&self.tip].height
    }

    /// Notarized blocks above the finalized head on the way to `tip`.
    fn unfinalized(&self, tip: Digest) -> Vec<&Block> {
        let mut out = Vec::new();
        let mut cur = tip;
        while let Some(b) = self.blocks.get(&cur) {
            if b.height <= self.finalized.height {
                break;
            }
            out.push(b);
            cur = b.parent_hash;
        }
        out
    }

    fn has_work(&self) -> bool {
        !self.mempool.is_empty()
            || self
                .unfinalized(self.tip)
                .iter()
                .any(|b| !b.commands.is_empty())
    }

    fn try_propose(&mut self, out: &mut Vec<Action<StreamletMessage>>) {
        let e = self.epoch();
        if epoch_leader(e, self.ctx.n()) != self.me()
            || self.proposed.contains(&e)
            || !self.has_work()
        {
            return;
        }
        let parent = self.blocks[&self.tip].clone();
        if parent.view >= e {
            return;
        }
        let in_chain: HashSet<RequestId> = self
            .unfinalized(self.tip)
            .iter()
            .flat_map(|b| b.commands.iter().map(Command::request_id))
            .collect();
        let commands = self.mempool.peek(self.cfg.max_batch.max(1), &in_chain);
        let block = Block::child_of(&parent, commands, self.me(), e);
        self.proposed.insert(e);
        out.push(Action::Broadcast(StreamletMessage::Proposal {
            block: block.clone(),
        }));
        self.on_proposal(self.me(), block, out);
    }

    fn on_proposal(&mut self, from: NodeId, block: Block, out: &mut Vec<Action<StreamletMessage>>) {
        let e = block.view;
        if from != epoch_leader(e, self.ctx.n()) || block.proposer != from {
            self.counters.dropped += 1;
            return;
        }
        let digest = block.hash();
        match self.first_proposal.get(&e) {
            Some(d) if *d != digest => {
                self.counters.equivocations += 1;
                return;
            }
            Some(_) => return,
            None => {
                self.first_proposal.insert(e, digest);
            }
        }
        if e != self.epoch() || self.voted.contains(&e) {
            return;
        }
        // only vote for blocks extending a longest notarized chain
        let extends = self.blocks.get(&block.parent_hash).is_some_and(|p| {
            self.notarized.contains(&block.parent_hash)
                && p.height == self.tip_height()
                && p.height + 1 == block.height
                && p.view < e
        });
        if !extends {
            return;
        }
        self.voted.insert(e);
        let vote = Vote::new(VoteKind::Notarize, digest, e, self.me(), &self.ctx.auth);
        out.push(Action::Broadcast(StreamletMessage::Vote {
            vote: vote.clone(),
            block: block.clone(),
        }));
        self.record(vote, block, out);
    }

    fn on_vote(&mut self, vote: Vote, block: Block, out: &mut Vec<Action<StreamletMessage>>) {
        if vote.kind != VoteKind::Notarize
            || vote.block_hash != block.hash()
            || vote.view != block.view
            || block.proposer != epoch_leader(block.view, self.ctx.n())
            || !vote.verify(&self.ctx.auth)
        {
            self.counters.dropped += 1;
            return;
        }
        if vote.voter == self.me() || self.seen.contains(&(vote.view, vote.voter)) {
            return;
        }
        // echo to everyone but the voter
        for p in self
            .ctx
            .peers()
            .filter(|p| *p != vote.voter)
            .collect::<Vec<_>>()
        {
            out.push(Action::Send(
                p,
                StreamletMessage::Vote {
                    vote: vote.clone(),
                    block: block.clone(),
                },
            ));
        }
        if let Some(d) = self.first_proposal.get(&block.view) {
            if *d != vote.block_hash {
                self.counters.equivocations += 1;
            }
        }
        self.record(vote, block, out);
    }

    fn record(&mut self, vote: Vote, block: Block, out: &mut Vec<Action<StreamletMessage>>) {
        self.seen.insert((vote.view, vote.voter));
        let digest = vote.block_hash;
        self.blocks.entry(digest).or_insert(block);
        self.votes.entry(digest).or_default().insert(vote.voter);
        self.try_notarize(digest, out);
    }

    fn try_notarize(&mut self, digest: Digest, out: &mut Vec<Action<StreamletMessage>>) {
        if self.notarized.contains(&digest) {
            return;
        }
        let Some(block) = self.blocks.get(&digest).cloned() else {
            return;
        };
        let enough = self
            .votes
            .get(&digest)
            .is_some_and(|v| v.len() >= self.threshold());
        if !enough || !self.notarized.contains(&block.parent_hash) {
            return;
        }
        self.notarized.insert(digest);
        if block.height > self.tip_height() {
            self.tip = digest;
        }
        let repliers = self.ctx.quorum.f + 1;
        if is_designated_replier(self.me(), block.proposer, repliers, self.ctx.n()) {
            out.extend(replies(&block.commands));
        }
        self.try_finalize(&block, out);
        // children that were waiting on this parent
        let children: Vec<Digest> = self
            .blocks
            .iter()
            .filter(|(_, b)| b.parent_hash == digest)
            .map(|(d, _)| *d)
            .collect();
        for c in children {
            self.try_notarize(c, out);
        }
    }

    fn try_finalize(&mut self, last: &Block, out: &mut Vec<Action<StreamletMessage>>) {
        let Some(mid) = self.blocks.get(&last.parent_hash).cloned() else {
            return;
        };
        let Some(first) = self.blocks.get(&mid.parent_hash) else {
            return;
        };
        let consecutive =
            !first.is_genesis() && mid.view == first.view + 1 && last.view == mid.view + 1;
        if !consecutive || mid.height <= self.finalized.height {
            return;
        }
        let mut chain: Vec<Block> = self.unfinalized(mid.hash()).into_iter().cloned().collect();
        chain.reverse();
        for b in chain {
            self.mempool.mark_committed(&b);
            self.finalized = b.clone();
            out.push(Action::CommitBlock(b));
        }
        self.prune();
    }

    fn prune(&mut self) {
        let floor = self.finalized.height;
        let keep: HashSet<Digest> = self
            .blocks
            .iter()
            .filter(|(_, b)| b.height + 2 >= floor)
            .map(|(d, _)| *d)
            .collect();
        self.blocks.retain(|d, _| keep.contains(d));
        self.votes.retain(|d, _| keep.contains(d));
        self.notarized.retain(|d| keep.contains(d));
        let e = self.epoch();
        let horizon = e.saturating_sub(2);
        self.seen.retain(|(v, _)| *v >= horizon);
        self.voted.retain(|v| *v >= horizon);
        self.proposed.retain(|v| *v >= horizon);
        self.first_proposal.retain(|v, _| *v >= horizon);
    }

    fn arm(&mut self, out: &mut Vec<Action<StreamletMessage>>) {
        if !self.timer_armed && self.has_work() {
            self.timer_armed = true;
            let after = self.cfg.epoch - self.now % self.cfg.epoch;
            out.push(Action::SetTimer { after, id: EPOCH });
        }
    }
}

impl Engine for Streamlet {
    type Message = StreamletMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(
        &mut self,
        event: Event<StreamletMessage>,
        now: Time,
    ) -> Vec<Action<StreamletMessage>> {
        self.now = now;
        let mut out = Vec::new();
        match event {
            Event::Init => {}
            Event::ClientRequest(cmd) => {
                if self.mempool.push(cmd.clone()) == Admission::AlreadyCommitted {
                    out.extend(replies(std::slice::from_ref(&cmd)));
                }
            }
            Event::Message { from, msg } => match msg {
                StreamletMessage::Proposal { block } => self.on_proposal(from, block, &mut out),
                StreamletMessage::Vote { vote, block } => self.on_vote(vote, block, &mut out),
            },
            Event::TimerFired(EPOCH) => self.timer_armed = false,
            Event::TimerFired(_) => {}
        }
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

    #[test]
    fn leader_is_a_pure_function_of_epoch() {
        for e in 1..50 {
            assert_eq!(epoch_leader(e, 7), epoch_leader(e, 7));
            assert!(epoch_leader(e, 7).0 < 7);
        }
        let spread: HashSet<NodeId> = (1..100).map(|e| epoch_leader(e, 4)).collect();
        assert_eq!(spread.len(), 4);
    }
}
