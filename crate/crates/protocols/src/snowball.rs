//! Leaderless binary consensus by repeated random sampling: Slush,
//! Snowflake and Snowball.
//!
//! A colored node queries `k` distinct peers chosen uniformly at random and
//! waits for all `k` answers (a timeout aborts and retries the round). When
//! at least `ceil(alpha * k)` of them report the same color the round is a
//! success for that color:
//!
//! - Slush adopts it and decides whatever it holds after `m` rounds.
//! - Snowflake adopts it and counts consecutive successes for the held
//!   color, deciding at `beta`.
//! - Snowball also keeps a confidence counter per color and only switches
//!   when the other color's confidence overtakes the held one.
//!
//! An uncolored node takes the color of the first query or client request it
//! sees and starts querying. Deciding commits one canonical block naming the
//! color, so every node that decides the same color has the same chain.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use qlab_core::{
    Action, Block, Command, Engine, EngineCounters, Event, NodeContext, NodeId, ProtocolMessage,
    Time, TimerId,
};

/// Client id of the marker command in a decision block.
pub const COLOR_CLIENT: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    /// Low bit of the first value byte; empty values are red.
    pub fn from_value(value: &[u8]) -> Color {
        match value.first() {
            Some(b) if b & 1 == 1 => Color::Blue,
            _ => Color::Red,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// The block every node commits when it decides `color`.
pub fn decision_block(color: Color) -> Block {
    let marker = Command::new(
        COLOR_CLIENT,
        0,
        b"color".to_vec(),
        vec![color.index() as u8],
    );
    Block::child_of(&Block::genesis(), vec![marker], NodeId(0), 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Slush,
    Snowflake,
    Snowball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnowballConfig {
    pub mode: Mode,
    pub k: usize,
    /// Fraction of `k` that must agree, in `(0.5, 1]`.
    pub alpha: f64,
    pub beta: u32,
    /// Rounds before a Slush node decides.
    pub m: u32,
    pub query_timeout: Time,
    pub initial: Option<Color>,
    /// Answer every query with this color and never query or decide.
    pub stubborn: Option<Color>,
}

impl Default for SnowballConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Snowball,
            k: 10,
            alpha: 0.8,
            beta: 15,
            m: 20,
            query_timeout: 20_000,
            initial: None,
            stubborn: None,
        }
    }
}

impl SnowballConfig {
    pub fn threshold(&self) -> usize {
        (self.alpha * self.k as f64).ceil() as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SnowballError {
    #[error("sample size {k} must be in 1..{n}")]
    SampleSize { k: usize, n: usize },
    #[error("alpha {0} must be in (0.5, 1]")]
    Alpha(f64),
    #[error("beta and m must be positive")]
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SnowballMessage {
    Query { round: u64, color: Color },
    Response { round: u64, color: Color },
}

impl ProtocolMessage for SnowballMessage {
    fn is_proposal(&self) -> bool {
        false
    }

    fn instance(&self) -> u64 {
        match self {
            SnowballMessage::Query { round, .. } | SnowballMessage::Response { round, .. } => {
                *round
            }
        }
    }
}

pub struct Snowball {
    ctx: NodeContext,
    cfg: SnowballConfig,
    rng: ChaCha8Rng,
    color: Option<Color>,
    confidence: [u64; 2],
    /// Consecutive successes (Snowflake, Snowball) counted for `last`.
    conviction: u32,
    last: Option<Color>,
    round: u64,
    sampled: Vec<NodeId>,
    responses: BTreeMap<NodeId, Color>,
    decided: bool,
    /// Rounds that ran to completion, for Slush.
    completed_rounds: u32,
    counters: EngineCounters,
}

impl Snowball {
    pub fn new(ctx: NodeContext, cfg: SnowballConfig) -> Result<Self, SnowballError> {
        let n = ctx.n();
        if cfg.k == 0 || cfg.k >= n {
            return Err(SnowballError::SampleSize { k: cfg.k, n });
        }
        if !(cfg.alpha > 0.5 && cfg.alpha <= 1.0) {
            return Err(SnowballError::Alpha(cfg.alpha));
        }
        if cfg.beta == 0 || cfg.m == 0 {
            return Err(SnowballError::Threshold);
        }
        let rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ ctx.id.0 as u64);
        Ok(Self {
            ctx,
            cfg,
            rng,
            color: None,
            confidence: [0; 2],
            conviction: 0,
            last: None,
            round: 0,
            sampled: Vec::new(),
            responses: BTreeMap::new(),
            decided: false,
            completed_rounds: 0,
            counters: EngineCounters::default(),
        })
    }

    pub fn color(&self) -> Option<Color> {
        self.color
    }

    pub fn is_decided(&self) -> bool {
        self.decided
    }

    pub fn confidence(&self, c: Color) -> u64 {
        self.confidence[c.index()]
    }

    pub fn conviction(&self) -> u32 {
        self.conviction
    }

    fn adopt(&mut self, c: Color, out: &mut Vec<Action<SnowballMessage>>) {
        if self.color.is_none() && self.cfg.stubborn.is_none() {
            self.color = Some(c);
            self.start_round(out);
        }
    }

    fn start_round(&mut self, out: &mut Vec<Action<SnowballMessage>>) {
        let Some(color) = self.color else { return };
        if self.decided {
            return;
        }
        self.round += 1;
        self.responses.clear();
        let peers: Vec<NodeId> = self.ctx.peers().collect();
        self.sampled = sample(&mut self.rng, peers.len(), self.cfg.k)
            .into_iter()
            .map(|i| peers[i])
            .collect();
        for p in &self.sampled {
            out.push(Action::Send(
                *p,
                SnowballMessage::Query {
                    round: self.round,
                    color,
                },
            ));
        }
        out.push(Action::SetTimer {
            after: self.cfg.query_timeout,
            id: TimerId(self.round),
        });
    }

    fn switch(&mut self, c: Color) {
        if self.color != Some(c) {
            self.color = Some(c);
            self.counters.color_flips += 1;
        }
    }

    fn finish_round(&mut self, out: &mut Vec<Action<SnowballMessage>>) {
        out.push(Action::CancelTimer(TimerId(self.round)));
        let mut tally = [0usize; 2];
        for c in self.responses.values() {
            tally[c.index()] += 1;
        }
        let threshold = self.cfg.threshold();
        let winner = [Color::Red, Color::Blue]
            .into_iter()
            .find(|c| tally[c.index()] >= threshold);
        self.completed_rounds += 1;
        match self.cfg.mode {
            Mode::Slush => {
                if let Some(c) = winner {
                    self.switch(c);
                }
                if self.completed_rounds >= self.cfg.m {
                    self.decide(out);
                }
            }
            Mode::Snowflake => match winner {
                Some(c) => {
                    if self.color == Some(c) {
                        self.conviction += 1;
                    } else {
                        self.switch(c);
                        self.conviction = 1;
                    }
                }
                None => self.conviction = 0,
            },
            Mode::Snowball => match winner {
                Some(c) => {
                    self.confidence[c.index()] += 1;
                    let held = self.color.unwrap_or(c);
                    if self.confidence[c.index()] > self.confidence[held.index()] {
                        self.switch(c);
                    }
                    if self.last == Some(c) {
                        self.conviction += 1;
                    } else {
                        self.last = Some(c);
                        self.conviction = 1;
                    }
                }
                None => self.conviction = 0,
            },
        }
        if self.cfg.mode != Mode::Slush && self.conviction >= self.cfg.beta {
            self.decide(out);
        }
        self.start_round(out);
    }

    fn decide(&mut self, out: &mut Vec<Action<SnowballMessage>>) {
        let Some(c) = self.color else { return };
        self.decided = true;
        out.push(Action::CommitBlock(decision_block(c)));
    }

    fn answer(&self) -> Option<Color> {
        self.cfg.stubborn.or(self.color)
    }
}

impl Engine for Snowball {
    type Message = SnowballMessage;

    fn id(&self) -> NodeId {
        self.ctx.id
    }

    fn on_event(
        &mut self,
        event: Event<SnowballMessage>,
        _now: Time,
    ) -> Vec<Action<SnowballMessage>> {
        let mut out = Vec::new();
        match event {
            Event::Init => {
                if let Some(c) = self.cfg.initial {
                    self.adopt(c, &mut out);
                }
            }
            Event::ClientRequest(cmd) => {
                if self.decided {
                    // the local commit already happened
                    out.push(Action::ReplyToClient {
                        client: cmd.client_id as u32,
                        sequence: cmd.sequence,
                    });
                } else {
                    self.adopt(Color::from_value(&cmd.value), &mut out);
                }
            }
            Event::Message { from, msg } => match msg {
                SnowballMessage::Query { round, color } => {
                    self.adopt(color, &mut out);
                    if let Some(c) = self.answer() {
                        out.push(Action::Send(
                            from,
                            SnowballMessage::Response { round, color: c },
                        ));
                    }
                }
                SnowballMessage::Response { round, color } => {
                    if round == self.round && !self.decided && self.sampled.contains(&from) {
                        self.responses.insert(from, color);
                        if self.responses.len() == self.cfg.k {
                            self.finish_round(&mut out);
                        }
                    } else if round != self.round {
                        self.counters.dropped += 1;
                    }
                }
            },
            Event::TimerFired(TimerId(r)) => {
                if r == self.round && !self.decided {
                    self.counters.timeouts += 1;
                    self.start_round(&mut out);
                }
            }
        }
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

    fn ctx(n: usize) -> NodeContext {
        NodeContext {
            id: NodeId(0),
            quorum: quorum_sizes(n, FaultModel::Crash).unwrap(),
            auth: Authenticator::hashed(1),
            seed: 1,
        }
    }

    #[test]
    fn sample_size_is_checked() {
        let zero = SnowballConfig {
            k: 0,
            ..SnowballConfig::default()
        };
        assert!(matches!(
            Snowball::new(ctx(5), zero),
            Err(SnowballError::SampleSize { .. })
        ));
        let all = SnowballConfig {
            k: 5,
            ..SnowballConfig::default()
        };
        assert!(matches!(
            Snowball::new(ctx(5), all),
            Err(SnowballError::SampleSize { .. })
        ));
        let ok = SnowballConfig {
            k: 4,
            ..SnowballConfig::default()
        };
        assert!(Snowball::new(ctx(5), ok).is_ok());
    }

    #[test]
    fn alpha_must_be_a_majority() {
        let half = SnowballConfig {
            k: 4,
            alpha: 0.5,
            ..SnowballConfig::default()
        };
        assert_eq!(
            Snowball::new(ctx(5), half).err(),
            Some(SnowballError::Alpha(0.5))
        );
    }

    #[test]
    fn threshold_rounds_up() {
        assert_eq!(
            SnowballConfig {
                k: 10,
                alpha: 0.8,
                ..SnowballConfig::default()
            }
            .threshold(),
            8
        );
        assert_eq!(
            SnowballConfig {
                k: 7,
                alpha: 0.6,
                ..SnowballConfig::default()
            }
            .threshold(),
            5
        );
    }

    #[test]
    fn query_colors_an_uncolored_node() {
        let mut s = Snowball::new(
            ctx(5),
            SnowballConfig {
                k: 3,
                ..SnowballConfig::default()
            },
        )
        .unwrap();
        let out = s.on_event(
            Event::Message {
                from: NodeId(2),
                msg: SnowballMessage::Query {
                    round: 1,
                    color: Color::Blue,
                },
            },
            0,
        );
        assert_eq!(s.color(), Some(Color::Blue));
        let queries = out
            .iter()
            .filter(|a| matches!(a, Action::Send(_, SnowballMessage::Query { .. })))
            .count();
        assert_eq!(queries, 3);
        assert!(out.contains(&Action::Send(
            NodeId(2),
            SnowballMessage::Response {
                round: 1,
                color: Color::Blue
            }
        )));
    }

    #[test]
    fn color_bit_comes_from_the_value() {
        assert_eq!(Color::from_value(&[3]), Color::Blue);
        assert_eq!(Color::from_value(&[2]), Color::Red);
        assert_eq!(Color::from_value(&[]), Color::Red);
    }
}
