//! Tendermint: one height at a time, each height a sequence of rounds with
//! propose, prevote and precommit steps.
//!
//! Locking follows the usual rules (`locked_value`/`locked_round`,
//! `valid_value`/`valid_round`, nil votes, skip to a higher round on `f + 1`
//! messages). Votes are gossiped with the block they vote for. With `star`
//! set, value votes go to the round's proposer, which relays each quorum as
//! a certificate; nil votes are still broadcast.
//!
//! A decision waits `delta` before it is committed (never in star mode).

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use qlab_core::mempool::Admission;
use qlab_core::{
    Action, Block, Digest, Engine, EngineCounters, Event, Mempool, NodeContext, NodeId,
    ProtocolMessage, Time, TimerId, Vote, VoteKind,
};

use crate::common::{fork_commands, is_designated_replier, replies};

const PROPOSE: TimerId = TimerId(1);
const PREVOTE: TimerId = TimerId(2);
const PRECOMMIT: TimerId = TimerId(3);
const COMMIT_WAIT: TimerId = TimerId(4);

/// Proposer for `(height, round)` under weighted round robin. Heights start
/// at 1; equal stakes rotate through the roster in index order.
pub fn select_proposer(height: u64, round: u64, stakes: &[u64]) -> NodeId {
    let total: u64 = stakes.iter().sum();
    assert!(total > 0, "stakes must not all be zero");
    let step = (height.saturating_sub(1) + round) % total;
    let mut priority = vec![0i128; stakes.len()];
    let mut pick = 0;
    for _ in 0..=step {
        for (p, s) in priority.iter_mut().zip(stakes) {
            *p += *s as i128;
        }
        pick = (0..stakes.len())
            .max_by_key(|i| (priority[*i], std::cmp::Reverse(*i)))
            .unwrap();
        priority[pick] -= total as i128;
    }
    NodeId(pick as u32)
}

fn vote_view(height: u64, round: u64) -> u64 {
    (height << 32) | round
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TendermintMessage {
    Proposal {
        height: u64,
        round: u64,
        block: Block,
        valid_round: Option<u64>,
    },
    Prevote {
        height: u64,
        round: u64,
        vote: Vote,
        block: Option<Block>,
    },
    Precommit {
        height: u64,
        round: u64,
        vote: Vote,
        block: Option<Block>,
    },
    /// Star mode: a quorum of votes relayed by the proposer.
    Certificate {
        height: u64,
        round: u64,
        votes: Vec<Vote>,
    },
}

impl TendermintMessage {
    fn height(&self) -> u64 {
        match self {
            TendermintMessage::Proposal { height, .. }
            | TendermintMessage::Prevote { height, .. }
            | TendermintMessage::Precommit { height, .. }
            | TendermintMessage::Certificate { height, .. } => *height,
        }
    }

    fn round(&self) -> u64 {
        match self {
            TendermintMessage::Proposal { round, .. }
            | TendermintMessage::Prevote { round, .. }
            | TendermintMessage::Precommit { round, .. }
            | TendermintMessage::Certificate { round, .. } => *round,
        }
    }
}

impl ProtocolMessage for TendermintMessage {
    fn is_proposal(&self) -> bool {
        matches!(self, TendermintMessage::Proposal { .. })
    }

    fn conflicting(&self) -> Option<Self> {
        match self {
            TendermintMessage::Proposal {
                height,
                round,
                block,
                valid_round,
            } => {
                let block = Block {
                    commands: fork_commands(&block.commands),
                    ..block.clone()
                };
                Some(TendermintMessage::Proposal {
                    height: *height,
                    round: *round,
                    block,
                    valid_round: *valid_round,
                })
            }
            _ => None,
        }
    }

    fn instance(&self) -> u64 {
        self.height()
    }
}

#[derive(Clone, Debug)]
pub struct TendermintConfig {
    pub max_batch: usize,
    /// Wait between deciding and committing.
    pub delta: Time,
    pub timeout_propose: Time,
    pub timeout_vote: Time,
    /// Added to every timeout per round.
    pub timeout_increment: Time,
    pub star: bool,
    /// Proposer weights; `None` means equal stakes.
    pub stakes: Option<Vec<u64>>,
}

impl Default for TendermintConfig {
    fn default() -> Self {
        Self {
            max_batch: 1,
            delta: 0,
            timeout_propose: 20_000,
            timeout_vote: 10_000,
            timeout_increment: 5_000,
            star: false,
            stakes: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Propose,
    Prevote,
    Precommit,
    /// Decided and waiting out `delta`.
    Decided,
}

#[derive(Default)]
struct Votes {
    by_round: BTreeMap<u64, BTreeMap<NodeId, Vote>>,
}

impl Votes {
    fn insert(&mut self, round: u64, vote: Vote) {
        self.by_round
            .entry(round)
            .or_default()
            .entry(vote.voter)
            .or_insert(vote);
    }

    fn total(&self, round: u64) -> usize {
        self.by_round.get(&round).map_or(0, BTreeMap::len)
    }

    fn count(&self, round: u64, digest: Digest) -> usize {
        self.by_round
            .get(&round)
            .map_or(0, |m| m.values().filter(|v| v.block_hash == digest).count())
    }

    /// A non-nil digest with at least `q` votes in `round`.
    fn quorum_value(&self, round: u64, q: usize) -> Option<Digest> {
        let m = self.by_round.get(&round)?;
        let mut tally: BTreeMap<Digest, usize> = BTreeMap::new();
        for v in m.values().filter(|v| !v.is_nil()) {
            *tally.entry(v.block_hash).or_default() += 1;
        }
        tally.into_iter().find(|(_, c)| *c >= q).map(|(d, _)| d)
    }

    fn matching(&self, round: u64, digest: Digest) -> Vec<Vote> {
        self.by_round
            .get(&round)
            .map(|m| {
                m.values()
                    .filter(|v| v.block_hash == digest)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub struct Tendermint {
    ctx: NodeContext,
    cfg: TendermintConfig,
    stakes: Vec<u64>,
    height: u64,
    round: u64,
    step: Step,
    head: Block,
    mempool: Mempool,
    locked: Option<(u64, Block)>,
    valid: Option<(u64, Block)>,
    proposals: BTreeMap<u64, (Block, Option<u64>)>,
    blocks: HashMap<Digest, Block>,
    prevotes: Votes,
    precommits: Votes,
    senders: BTreeMap<u64, HashSet<NodeId>>,
    proposed: HashSet<u64>,
    locked_rounds: HashSet<u64>,
    timers: HashMap<TimerId, (u64, u64)>,
    relayed: HashSet<(u64, VoteKind)>,
    equivocation_rounds: HashSet<u64>,
    pending: Option<(u64, Block)>,
    future: Vec<(NodeId, TendermintMessage)>,
    counters: EngineCounters,
}

impl Tendermint {
    pub fn new(ctx: NodeContext, cfg: TendermintConfig) -> Self {
        let stakes = cfg.stakes.clone().unwrap_or_else(|| vec![1; ctx.n()]);
        assert_eq!(stakes.len(), ctx.n(), "one stake per node");
        Self {
            ctx,
            cfg,
            stakes,
            height: 1,
            round: 0,
            step: Step::Propose,
            head: Block::genesis(),
            mempool: Mempool::default(),
            locked: None,
            valid: None,
            proposals: BTreeMap::new(),
            blocks: HashMap::new(),
            prevotes: Votes::default(),
            precommits: Votes::default(),
            senders: BTreeMap::new(),
            proposed: HashSet::new(),
            locked_rounds: HashSet::new(),
            timers: HashMap::new(),
            relayed: HashSet::new(),
            equivocation_rounds: HashSet::new(),
            pending: None,
            future: Vec::new(),
            counters: EngineCounters::default(),
        }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn locked_round(&self) -> Option<u64> {
        self.locked.as_ref().map(|(r, _)| *r)
    }

    fn me(&self) -> NodeId {
        self.ctx.id
    }

    fn q(&self) -> usize {
        self.ctx.quorum.byzantine_quorum
    }

    pub fn proposer(&self, height: u64, round: u64) -> NodeId {
        select_proposer(height, round, &self.stakes)
    }

    fn timeout(&self, base: Time) -> Time {
        base + self.cfg.timeout_increment * self.round
    }

    fn arm(&mut self, id: TimerId, after: Time, out: &mut Vec<Action<TendermintMessage>>) {
        if self.timers.get(&id) == Some(&(self.height, self.round)) {
            return;
        }
        self.timers.insert(id, (self.height, self.round));
        out.push(Action::SetTimer { after, id });
    }

    fn is_valid(&self, b: &Block) -> bool {
        b.height == self.height && b.parent_hash == self.head.hash()
    }

    fn start_round(&mut self, round: u64, out: &mut Vec<Action<TendermintMessage>>) {
        self.round = round;
        self.step = Step::Propose;
        if self.proposer(self.height, round) == self.me() {
            self.try_propose(out);
        } else if !self.mempool.is_empty() {
            self.arm(PROPOSE, self.timeout(self.cfg.timeout_propose), out);
        }
    }

    fn try_propose(&mut self, out: &mut Vec<Action<TendermintMessage>>) {
        let (h, r) = (self.height, self.round);
        if self.step != Step::Propose
            || self.proposer(h, r) != self.me()
            || self.proposed.contains(&r)
        {
            return;
        }
        let (block, valid_round) = match &self.valid {
            Some((vr, b)) => (b.clone(), Some(*vr)),
            None if self.mempool.is_empty() => return,
            None => {
                let commands = self
                    .mempool
                    .peek(self.cfg.max_batch.max(1), &HashSet::new());
                (Block::child_of(&self.head, commands, self.me(), r), None)
            }
        };
        self.proposed.insert(r);
        self.blocks.insert(block.hash(), block.clone());
        self.proposals.insert(r, (block.clone(), valid_round));
        out.push(Action::Broadcast(TendermintMessage::Proposal {
            height: h,
            round: r,
            block,
            valid_round,
        }));
    }

    fn cast(&mut self, kind: VoteKind, digest: Digest, out: &mut Vec<Action<TendermintMessage>>) {
        let (h, r) = (self.height, self.round);
        let vote = Vote::new(kind, digest, vote_view(h, r), self.me(), &self.ctx.auth);
        let star = self.cfg.star && !vote.is_nil();
        let block = if star || vote.is_nil() {
            None
        } else {
            self.blocks.get(&digest).cloned()
        };
        let msg = match kind {
            VoteKind::Prepare => TendermintMessage::Prevote {
                height: h,
                round: r,
                vote: vote.clone(),
                block,
            },
            _ => TendermintMessage::Precommit {
                height: h,
                round: r,
                vote: vote.clone(),
                block,
            },
        };
        let proposer = self.proposer(h, r);
        if star {
            // the proposer's own vote travels inside its certificate
            if proposer != self.me() {
                out.push(Action::Send(proposer, msg));
            }
        } else {
            out.push(Action::Broadcast(msg));
        }
        match kind {
            VoteKind::Prepare => {
                self.prevotes.insert(r, vote);
                self.step = Step::Prevote;
                if self.cfg.star {
                    self.arm(PREVOTE, self.timeout(self.cfg.timeout_vote), out);
                }
            }
            _ => {
                self.precommits.insert(r, vote);
                self.step = Step::Precommit;
                if self.cfg.star {
                    self.arm(PRECOMMIT, self.timeout(self.cfg.timeout_vote), out);
                }
            }
        }
    }

    /// Prevote for a proposal under the locking rule.
    fn prevote_for(
        &mut self,
        block: &Block,
        valid_round: Option<u64>,
        out: &mut Vec<Action<TendermintMessage>>,
    ) {
        let unlocked = match (&self.locked, valid_round) {
            (None, _) => true,
            (Some((_, lb)), _) if lb.hash() == block.hash() => true,
            (Some((lr, _)), Some(vr)) => *lr <= vr,
            _ => false,
        };
        let digest = if self.is_valid(block) && unlocked {
            block.hash()
        } else {
            Digest::ZERO
        };
        self.cast(VoteKind::Prepare, digest, out);
    }

    /// Applies every enabled rule until none fires.
    fn evaluate(&mut self, out: &mut Vec<Action<TendermintMessage>>) {
        loop {
            if self.step == Step::Decided {
                return;
            }
            let (h, r, q) = (self.height, self.round, self.q());

            let rounds: Vec<u64> = self.precommits.by_round.keys().copied().collect();
            for rr in rounds {
                if let Some(d) = self.precommits.quorum_value(rr, q) {
                    if let Some(b) = self.blocks.get(&d).cloned().filter(|b| self.is_valid(b)) {
                        self.decide(rr, b, out);
                        return;
                    }
                }
            }

            if let Some(skip) = self
                .senders
                .range(r + 1..)
                .find(|(_, s)| s.len() > self.ctx.quorum.f)
                .map(|(rr, _)| *rr)
            {
                self.start_round(skip, out);
                continue;
            }

            if self.cfg.star && self.proposer(h, r) == self.me() {
                self.relay(r, out);
            }

            if self.step == Step::Propose {
                if let Some((b, vr)) = self.proposals.get(&r).cloned() {
                    match vr {
                        None => {
                            self.prevote_for(&b, None, out);
                            continue;
                        }
                        Some(vr) if vr < r && self.prevotes.count(vr, b.hash()) >= q => {
                            self.prevote_for(&b, Some(vr), out);
                            continue;
                        }
                        _ => {}
                    }
                }
            }

            if self.step == Step::Prevote && !self.cfg.star && self.prevotes.total(r) >= q {
                self.arm(PREVOTE, self.timeout(self.cfg.timeout_vote), out);
            }

            if self.step >= Step::Prevote && !self.locked_rounds.contains(&r) {
                if let Some(d) = self.prevotes.quorum_value(r, q) {
                    if let Some(b) = self.blocks.get(&d).cloned().filter(|b| self.is_valid(b)) {
                        self.locked_rounds.insert(r);
                        self.valid = Some((r, b.clone()));
                        if self.step == Step::Prevote {
                            self.locked = Some((r, b));
                            self.cast(VoteKind::PreCommit, d, out);
                            continue;
                        }
                    }
                }
            }

            if self.step == Step::Prevote && self.prevotes.count(r, Digest::ZERO) >= q {
                self.cast(VoteKind::PreCommit, Digest::ZERO, out);
                continue;
            }

            if !self.cfg.star && self.precommits.total(r) >= q {
                self.arm(PRECOMMIT, self.timeout(self.cfg.timeout_vote), out);
            }
            return;
        }
    }

    fn relay(&mut self, r: u64, out: &mut Vec<Action<TendermintMessage>>) {
        let (h, q) = (self.height, self.q());
        for kind in [VoteKind::Prepare, VoteKind::PreCommit] {
            if self.relayed.contains(&(r, kind)) {
                continue;
            }
            let votes = if kind == VoteKind::Prepare {
                &self.prevotes
            } else {
                &self.precommits
            };
            if let Some(d) = votes.quorum_value(r, q) {
                let votes = votes.matching(r, d);
                self.relayed.insert((r, kind));
                out.push(Action::Broadcast(TendermintMessage::Certificate {
                    height: h,
                    round: r,
                    votes,
                }));
            }
        }
    }

    fn decide(&mut self, round: u64, block: Block, out: &mut Vec<Action<TendermintMessage>>) {
        if self.cfg.star && self.proposer(self.height, round) == self.me() {
            self.relay(round, out);
        }
        self.step = Step::Decided;
        if self.cfg.delta > 0 && !self.cfg.star {
            self.pending = Some((round, block));
            self.arm(COMMIT_WAIT, self.cfg.delta, out);
        } else {
            self.finalize(round, block, out);
        }
    }

    fn finalize(&mut self, round: u64, block: Block, out: &mut Vec<Action<TendermintMessage>>) {
        self.mempool.mark_committed(&block);
        let first = self.proposer(self.height, round);
        if is_designated_replier(self.me(), first, self.ctx.quorum.f + 1, self.ctx.n()) {
            out.extend(replies(&block.commands));
        }
        self.head = block.clone();
        out.push(Action::CommitBlock(block));
        self.height += 1;
        self.locked = None;
        self.valid = None;
        self.proposals.clear();
        self.blocks.clear();
        self.prevotes = Votes::default();
        self.precommits = Votes::default();
        self.senders.clear();
        self.proposed.clear();
        self.locked_rounds.clear();
        self.relayed.clear();
        self.equivocation_rounds.clear();
        self.pending = None;
        self.start_round(0, out);
        let future = std::mem::take(&mut self.future);
        for (from, msg) in future {
            self.on_message(from, msg);
        }
        self.evaluate(out);
    }

    fn note_block(&mut self, round: u64, block: Block) {
        if let Some((p, _)) = self.proposals.get(&round) {
            if p.hash() != block.hash()
                && block.view == round
                && self.equivocation_rounds.insert(round)
            {
                self.counters.equivocations += 1;
            }
        }
        self.blocks.entry(block.hash()).or_insert(block);
    }

    fn accept_vote(&self, vote: &Vote, from: Option<NodeId>, height: u64, round: u64) -> bool {
        matches!(vote.kind, VoteKind::Prepare | VoteKind::PreCommit)
            && from.is_none_or(|f| f == vote.voter)
            && vote.view == vote_view(height, round)
            && vote.voter.index() < self.ctx.n()
            && vote.verify(&self.ctx.auth)
    }

    fn on_message(&mut self, from: NodeId, msg: TendermintMessage) {
        let (h, r) = (msg.height(), msg.round());
        if h < self.height {
            return;
        }
        if h > self.height || self.step == Step::Decided {
            self.future.push((from, msg));
            return;
        }
        match msg {
            TendermintMessage::Proposal {
                block, valid_round, ..
            } => {
                if from != self.proposer(h, r) {
                    self.counters.dropped += 1;
                    return;
                }
                if let Some((p, _)) = self.proposals.get(&r) {
                    if p.hash() != block.hash() && self.equivocation_rounds.insert(r) {
                        self.counters.equivocations += 1;
                    }
                    return;
                }
                self.blocks.insert(block.hash(), block.clone());
                self.proposals.insert(r, (block, valid_round));
            }
            TendermintMessage::Prevote { vote, block, .. }
            | TendermintMessage::Precommit { vote, block, .. } => {
                if !self.accept_vote(&vote, Some(from), h, r) {
                    self.counters.dropped += 1;
                    return;
                }
                if let Some(b) = block.filter(|b| b.hash() == vote.block_hash) {
                    self.note_block(r, b);
                }
                if vote.kind == VoteKind::Prepare {
                    self.prevotes.insert(r, vote);
                } else {
                    self.precommits.insert(r, vote);
                }
            }
            TendermintMessage::Certificate { votes, .. } => {
                if from != self.proposer(h, r) {
                    self.counters.dropped += 1;
                    return;
                }
                for vote in votes {
                    if !self.accept_vote(&vote, None, h, r) {
                        self.counters.dropped += 1;
                        return;
                    }
                    if vote.kind == VoteKind::Prepare {
                        self.prevotes.insert(r, vote);
                    } else {
                        self.precommits.insert(r, vote);
                    }
                }
            }
        }
        self.senders.entry(r).or_default().insert(from);
    }

    fn on_timer(&mut self, id: TimerId, out: &mut Vec<Action<TendermintMessage>>) {
        let Some(at) = self.timers.remove(&id) else {
            return;
        };
        if id == COMMIT_WAIT {
            if let Some((round, block)) = self.pending.take() {
                self.finalize(round, block, out);
            }
            return;
        }
        if at != (self.height, self.round) {
            return;
        }
        match (id, self.step) {
            (PROPOSE, Step::Propose) => {
                self.counters.timeouts += 1;
                self.cast(VoteKind::Prepare, Digest::ZERO, out);
            }
            (PREVOTE, Step::Prevote) => {
                self.counters.timeouts += 1;
                self.cast(VoteKind::PreCommit, Digest::ZERO, out);
            }
            (PRECOMMIT, s) if s != Step::Decided => {
                self.counters.timeouts += 1;
                self.start_round(self.round + 1, out);
            }
            _ => {}
        }
    }
}

impl Engine for Tendermint {
    type Message = TendermintMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(
        &mut self,
        event: Event<TendermintMessage>,
        _now: Time,
    ) -> Vec<Action<TendermintMessage>> {
        let mut out = Vec::new();
        match event {
            Event::Init => self.start_round(0, &mut out),
            Event::ClientRequest(cmd) => match self.mempool.push(cmd.clone()) {
                Admission::AlreadyCommitted => out.extend(replies(std::slice::from_ref(&cmd))),
                Admission::Added if self.step == Step::Propose => {
                    if self.proposer(self.height, self.round) == self.me() {
                        self.try_propose(&mut out);
                    } else {
                        self.arm(PROPOSE, self.timeout(self.cfg.timeout_propose), &mut out);
                    }
                }
                _ => {}
            },
            Event::Message { from, msg } => self.on_message(from, msg),
            Event::TimerFired(id) => self.on_timer(id, &mut out),
        }
        self.evaluate(&mut out);
        out
    }

    fn counters(&self) -> EngineCounters {
        self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sequence(stakes: &[u64], len: u64) -> Vec<u32> {
        (0..len)
            .map(|i| select_proposer(i + 1, 0, stakes).0)
            .collect()
    }

    #[test]
    fn equal_stakes_rotate_in_order() {
        assert_eq!(sequence(&[1, 1, 1, 1], 5), vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn heavier_stake_proposes_more_often() {
        assert_eq!(sequence(&[2, 1, 1], 4), vec![0, 1, 2, 0]);
        let picks = sequence(&[3, 1], 8);
        assert_eq!(picks.iter().filter(|p| **p == 0).count(), 6);
    }

    #[test]
    fn rounds_advance_the_rotation() {
        assert_eq!(select_proposer(1, 1, &[1, 1, 1, 1]), NodeId(1));
        assert_eq!(select_proposer(2, 3, &[1, 1, 1, 1]), NodeId(0));
    }

    #[test]
    fn vote_views_separate_heights() {
        assert_ne!(vote_view(1, 2), vote_view(2, 1));
    }
}
