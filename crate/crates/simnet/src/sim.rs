use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use qlab_core::{
    codec, Action, Block, ClientId, Command, Endpoint, Engine, Event, KvStore, MetricsLedger,
    NodeId, ProtocolMessage, Time, TimerId,
};

use crate::check::{chains_prefix_consistent, AgreementReport};
use crate::cpu::CpuCostModel;
use crate::faults::{Adversarial, FaultPlan};
use crate::latency::LatencyModel;
use crate::workload::{synthetic_command, ClientPolicy, ClientRoute, Workload};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("node {node:?} committed height {height} after height {last}")]
    NonMonotonicCommit {
        node: NodeId,
        height: u64,
        last: u64,
    },
    #[error("node {node:?} committed height {height} whose parent is not its previous commit")]
    BrokenChain { node: NodeId, height: u64 },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub latency: LatencyModel,
    pub cpu: CpuCostModel,
    pub faults: FaultPlan,
    pub workload: Workload,
    pub clients: ClientPolicy,
    pub seed: u64,
    pub horizon: Time,
    /// Record every node-bound delivery in [`SimOutput::trace`].
    pub trace: bool,
}

impl SimConfig {
    pub fn new(latency: LatencyModel, horizon: Time) -> Self {
        Self {
            latency,
            cpu: CpuCostModel::ZERO,
            faults: FaultPlan::none(),
            workload: Workload::None,
            clients: ClientPolicy::default(),
            seed: 0,
            horizon,
            trace: false,
        }
    }
}

/// One delivered envelope, as seen by the receiving engine.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery<M> {
    pub from: Endpoint,
    pub to: NodeId,
    pub sent_at: Time,
    /// When the receiving engine handled it (after queueing and deserialization).
    pub handled_at: Time,
    pub payload: Option<M>,
}

#[derive(Clone, Debug)]
pub struct SimOutput<M> {
    pub ledger: MetricsLedger,
    pub chains: Vec<Vec<Block>>,
    pub commit_times: Vec<Vec<Time>>,
    pub stores: Vec<KvStore>,
    /// Nodes without Byzantine behavior in the fault plan.
    pub honest: Vec<bool>,
    pub trace: Vec<Delivery<M>>,
    /// Timestamp of the last processed event.
    pub end_time: Time,
}

impl<M> SimOutput<M> {
    pub fn agreement(&self) -> AgreementReport {
        chains_prefix_consistent(&self.chains, &self.honest)
    }

    /// Committed commands of one node, in commit order.
    pub fn committed_commands(&self, node: NodeId) -> Vec<&Command> {
        self.chains[node.index()]
            .iter()
            .flat_map(|b| b.commands.iter())
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Inbound<M> {
    Request(Command),
    Protocol(M),
}

#[derive(Debug)]
enum Kind<M> {
    Submit {
        client: ClientId,
    },
    Scripted {
        index: usize,
    },
    Arrive {
        to: NodeId,
        from: Endpoint,
        sent_at: Time,
        bytes: u64,
        inbound: Inbound<M>,
    },
    ReplyArrive {
        client: ClientId,
        sequence: u64,
        from: NodeId,
    },
    Handle {
        to: NodeId,
        from: Endpoint,
        sent_at: Time,
        inbound: Inbound<M>,
    },
    Timer {
        node: NodeId,
        id: TimerId,
        generation: u64,
    },
    ClientTimer {
        client: ClientId,
        sequence: u64,
        generation: u64,
    },
}

impl<M> Kind<M> {
    fn rank(&self) -> u8 {
        match self {
            Kind::Submit { .. } | Kind::Scripted { .. } => 0,
            Kind::Arrive { .. } | Kind::ReplyArrive { .. } => 1,
            Kind::Handle { .. } => 2,
            Kind::Timer { .. } | Kind::ClientTimer { .. } => 3,
        }
    }
}

fn endpoint_key(e: Endpoint) -> u64 {
    match e {
        Endpoint::Node(n) => n.0 as u64,
        Endpoint::Client(c) => (1 << 32) | c as u64,
    }
}

/// Queue entry ordered by `(time, kind rank, src, dst, insertion counter)`.
struct Queued<M> {
    time: Time,
    rank: u8,
    src: u64,
    dst: u64,
    counter: u64,
    kind: Kind<M>,
}

impl<M> Queued<M> {
    fn key(&self) -> (Time, u8, u64, u64, u64) {
        (self.time, self.rank, self.src, self.dst, self.counter)
    }
}

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<M> Eq for Queued<M> {}
impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Queued<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on the key
        other.key().cmp(&self.key())
    }
}

struct Pending {
    repliers: BTreeSet<NodeId>,
    targets: BTreeSet<NodeId>,
    command: Command,
    timer_generation: u64,
}

#[derive(Default)]
struct ClientState {
    next_sequence: u64,
    outstanding: BTreeMap<u64, Pending>,
    broadcast_mode: bool,
}

struct Sim<'a, E: Engine> {
    cfg: &'a SimConfig,
    n: usize,
    engines: Vec<Adversarial<E>>,
    queue: BinaryHeap<Queued<E::Message>>,
    counter: u64,
    rng: ChaCha8Rng,
    busy_until: Vec<Time>,
    timers: BTreeMap<(NodeId, TimerId), u64>,
    clients: Vec<ClientState>,
    ledger: MetricsLedger,
    chains: Vec<Vec<Block>>,
    commit_times: Vec<Vec<Time>>,
    stores: Vec<KvStore>,
    trace: Vec<Delivery<E::Message>>,
}

/// Runs `n` engines built by `factory` until no event at or before the
/// horizon remains.
pub fn run<E, F>(
    n: usize,
    mut factory: F,
    cfg: &SimConfig,
) -> Result<SimOutput<E::Message>, SimError>
where
    E: Engine,
    F: FnMut(NodeId) -> E,
{
    if n == 0 {
        return Err(SimError::Config(
            "roster must contain at least one node".into(),
        ));
    }
    if cfg.horizon == 0 {
        return Err(SimError::Config("horizon must be > 0".into()));
    }
    cfg.latency.validate(n).map_err(SimError::Config)?;
    cfg.cpu.validate().map_err(SimError::Config)?;
    cfg.faults.validate(n).map_err(SimError::Config)?;

    let engines = (0..n as u32)
        .map(|i| {
            let e = factory(NodeId(i));
            assert_eq!(
                e.id(),
                NodeId(i),
                "factory built an engine with the wrong id"
            );
            Adversarial::new(e, n, &cfg.faults)
        })
        .collect();
    let mut sim = Sim {
        cfg,
        n,
        engines,
        queue: BinaryHeap::new(),
        counter: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        busy_until: vec![0; n],
        timers: BTreeMap::new(),
        clients: (0..cfg.workload.client_count())
            .map(|_| ClientState::default())
            .collect(),
        ledger: MetricsLedger::new(n),
        chains: vec![Vec::new(); n],
        commit_times: vec![Vec::new(); n],
        stores: vec![KvStore::default(); n],
        trace: Vec::new(),
    };
    sim.seed_workload();
    for i in 0..n as u32 {
        sim.invoke(NodeId(i), Event::Init, 0)?;
    }
    let mut end_time = 0;
    while let Some(ev) = sim.queue.pop() {
        if ev.time > cfg.horizon {
            break;
        }
        end_time = ev.time;
        sim.process(ev)?;
    }

    for (i, e) in sim.engines.iter().enumerate() {
        sim.ledger.nodes[i].engine = e.counters();
    }
    let honest = (0..n as u32)
        .map(|i| !cfg.faults.is_byzantine(NodeId(i)))
        .collect();
    Ok(SimOutput {
        ledger: sim.ledger,
        chains: sim.chains,
        commit_times: sim.commit_times,
        stores: sim.stores,
        honest,
        trace: sim.trace,
        end_time,
    })
}

impl<E: Engine> Sim<'_, E> {
    fn push(&mut self, time: Time, src: Endpoint, dst: Endpoint, kind: Kind<E::Message>) {
        self.counter += 1;
        self.queue.push(Queued {
            time,
            rank: kind.rank(),
            src: endpoint_key(src),
            dst: endpoint_key(dst),
            counter: self.counter,
            kind,
        });
    }

    fn seed_workload(&mut self) {
        match &self.cfg.workload {
            Workload::None => {}
            Workload::Scripted(subs) => {
                for (index, s) in subs.iter().enumerate() {
                    let c = Endpoint::Client(s.client);
                    self.push(s.at, c, c, Kind::Scripted { index });
                }
            }
            Workload::ClosedLoop { clients, start, .. }
            | Workload::OpenLoop { clients, start, .. } => {
                for client in 0..*clients {
                    let c = Endpoint::Client(client);
                    self.push(*start, c, c, Kind::Submit { client });
                }
            }
        }
    }

    fn client_region(&self, client: ClientId) -> usize {
        self.cfg.latency.region_of(client as usize % self.n)
    }

    fn process(&mut self, ev: Queued<E::Message>) -> Result<(), SimError> {
        let now = ev.time;
        match ev.kind {
            Kind::Submit { client } => self.client_submit(client, now),
            Kind::Scripted { index } => {
                let Workload::Scripted(subs) = &self.cfg.workload else {
                    unreachable!()
                };
                let s = subs[index].clone();
                let targets = match s.target {
                    Some(t) => vec![t],
                    None => self.route(s.client),
                };
                self.send_request(s.client, s.command, targets, now);
            }
            Kind::Arrive {
                to,
                from,
                sent_at,
                bytes,
                inbound,
            } => {
                if self.cfg.faults.crashed(to, now) {
                    return Ok(());
                }
                let cost = self.cfg.cpu.cost(bytes);
                let done = self.busy_until[to.index()].max(now) + cost;
                self.busy_until[to.index()] = done;
                self.ledger.record_receive(to, bytes, cost);
                self.push(
                    done,
                    from,
                    Endpoint::Node(to),
                    Kind::Handle {
                        to,
                        from,
                        sent_at,
                        inbound,
                    },
                );
            }
            Kind::Handle {
                to,
                from,
                sent_at,
                inbound,
            } => {
                if self.cfg.faults.crashed(to, now) {
                    return Ok(());
                }
                if self.cfg.trace {
                    let payload = match &inbound {
                        Inbound::Protocol(m) => Some(m.clone()),
                        Inbound::Request(_) => None,
                    };
                    self.trace.push(Delivery {
                        from,
                        to,
                        sent_at,
                        handled_at: now,
                        payload,
                    });
                }
                let event = match (inbound, from) {
                    (Inbound::Request(c), _) => Event::ClientRequest(c),
                    (Inbound::Protocol(msg), Endpoint::Node(src)) => {
                        Event::Message { from: src, msg }
                    }
                    (Inbound::Protocol(_), Endpoint::Client(_)) => return Ok(()),
                };
                self.invoke(to, event, now)?;
            }
            Kind::Timer {
                node,
                id,
                generation,
            } => {
                if self.timers.get(&(node, id)) == Some(&generation)
                    && !self.cfg.faults.crashed(node, now)
                {
                    self.timers.remove(&(node, id));
                    self.invoke(node, Event::TimerFired(id), now)?;
                }
            }
            Kind::ReplyArrive {
                client,
                sequence,
                from,
            } => self.client_reply(client, sequence, from, now),
            Kind::ClientTimer {
                client,
                sequence,
                generation,
            } => self.client_timeout(client, sequence, generation, now),
        }
        Ok(())
    }

    fn invoke(
        &mut self,
        node: NodeId,
        event: Event<E::Message>,
        now: Time,
    ) -> Result<(), SimError> {
        let actions = self.engines[node.index()].on_event(event, now);
        for a in actions {
            self.apply(node, a, now)?;
        }
        Ok(())
    }

    /// Charges serialization at the sender and returns the departure time.
    fn serialize(&mut self, node: NodeId, bytes: u64, now: Time) -> Time {
        let cost = self.cfg.cpu.cost(bytes);
        let depart = self.busy_until[node.index()].max(now) + cost;
        self.busy_until[node.index()] = depart;
        self.ledger.record_send(node, bytes, cost);
        depart
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: E::Message, now: Time) {
        if to == from {
            let me = Endpoint::Node(from);
            self.push(
                now,
                me,
                me,
                Kind::Handle {
                    to,
                    from: me,
                    sent_at: now,
                    inbound: Inbound::Protocol(msg),
                },
            );
            return;
        }
        let bytes = codec::payload_bytes(&msg);
        let depart = self.serialize(from, bytes, now);
        self.ledger
            .record_protocol_message(msg.instance(), bytes, msg.is_view_change());
        let delay = self.cfg.latency.sample(
            self.cfg.latency.region_of(from.index()),
            self.cfg.latency.region_of(to.index()),
            &mut self.rng,
        );
        let arrive = depart + delay + self.cfg.faults.extra_delay(from, now);
        let src = Endpoint::Node(from);
        self.push(
            arrive,
            src,
            Endpoint::Node(to),
            Kind::Arrive {
                to,
                from: src,
                sent_at: now,
                bytes,
                inbound: Inbound::Protocol(msg),
            },
        );
    }

    fn apply(
        &mut self,
        node: NodeId,
        action: Action<E::Message>,
        now: Time,
    ) -> Result<(), SimError> {
        match action {
            Action::Send(to, msg) => self.send(node, to, msg, now),
            Action::Broadcast(msg) => {
                for p in (0..self.n as u32).map(NodeId).filter(|p| *p != node) {
                    self.send(node, p, msg.clone(), now);
                }
            }
            Action::SetTimer { after, id } => {
                let g = self.timers.entry((node, id)).or_insert(0);
                *g += 1;
                let generation = *g;
                let me = Endpoint::Node(node);
                self.push(
                    now + after,
                    me,
                    me,
                    Kind::Timer {
                        node,
                        id,
                        generation,
                    },
                );
            }
            Action::CancelTimer(id) => {
                if let Some(g) = self.timers.get_mut(&(node, id)) {
                    *g += 1;
                }
            }
            Action::CommitBlock(block) => self.commit(node, block, now)?,
            Action::ReplyToClient { client, sequence } => {
                let bytes = codec::payload_bytes(&(client, sequence, node));
                let depart = self.serialize(node, bytes, now);
                self.ledger.record_reply(bytes);
                let delay = self.cfg.latency.sample(
                    self.cfg.latency.region_of(node.index()),
                    self.client_region(client),
                    &mut self.rng,
                );
                let arrive = depart + delay + self.cfg.faults.extra_delay(node, now);
                self.push(
                    arrive,
                    Endpoint::Node(node),
                    Endpoint::Client(client),
                    Kind::ReplyArrive {
                        client,
                        sequence,
                        from: node,
                    },
                );
            }
        }
        Ok(())
    }

    fn commit(&mut self, node: NodeId, block: Block, now: Time) -> Result<(), SimError> {
        let chain = &mut self.chains[node.index()];
        let (last_height, last_hash) = match chain.last() {
            Some(b) => (b.height, b.hash()),
            None => (0, Block::genesis().hash()),
        };
        if block.height <= last_height {
            return Err(SimError::NonMonotonicCommit {
                node,
                height: block.height,
                last: last_height,
            });
        }
        if block.height != last_height + 1 || block.parent_hash != last_hash {
            return Err(SimError::BrokenChain {
                node,
                height: block.height,
            });
        }
        self.stores[node.index()].apply(&block);
        chain.push(block);
        self.commit_times[node.index()].push(now);

        if self.cfg.clients.accept_on_commit {
            let ready: Vec<(ClientId, u64)> = self
                .clients
                .iter()
                .enumerate()
                .flat_map(|(c, st)| {
                    st.outstanding
                        .iter()
                        .filter(|(_, p)| p.targets.contains(&node))
                        .map(move |(s, _)| (c as ClientId, *s))
                })
                .collect();
            for (c, s) in ready {
                self.client_accept(c, s, now);
            }
        }
        Ok(())
    }

    fn route(&self, client: ClientId) -> Vec<NodeId> {
        let all = || (0..self.n as u32).map(NodeId).collect();
        match self.cfg.clients.route {
            _ if self.clients[client as usize].broadcast_mode => all(),
            ClientRoute::All => all(),
            ClientRoute::Leader(l) => vec![l],
        }
    }

    fn client_submit(&mut self, client: ClientId, now: Time) {
        let (payload, max, interval) = match &self.cfg.workload {
            Workload::ClosedLoop {
                payload_bytes,
                max_per_client,
                ..
            } => (*payload_bytes, *max_per_client, None),
            Workload::OpenLoop {
                payload_bytes,
                max_per_client,
                interval,
                ..
            } => (*payload_bytes, *max_per_client, Some(*interval)),
            _ => return,
        };
        let st = &self.clients[client as usize];
        if max.is_some_and(|m| st.next_sequence >= m) {
            return;
        }
        let cmd = synthetic_command(client, st.next_sequence, payload);
        let targets = self.route(client);
        self.send_request(client, cmd, targets, now);
        if let Some(iv) = interval {
            let c = Endpoint::Client(client);
            self.push(now + iv.max(1), c, c, Kind::Submit { client });
        }
    }

    fn send_request(&mut self, client: ClientId, cmd: Command, targets: Vec<NodeId>, now: Time) {
        let sequence = cmd.sequence;
        let st = &mut self.clients[client as usize];
        st.next_sequence = st.next_sequence.max(sequence + 1);
        self.ledger.submit(client, sequence, now);
        let p = st.outstanding.entry(sequence).or_insert_with(|| Pending {
            repliers: BTreeSet::new(),
            targets: BTreeSet::new(),
            command: cmd.clone(),
            timer_generation: 0,
        });
        p.targets.extend(targets.iter().copied());
        p.timer_generation += 1;
        let generation = p.timer_generation;
        self.transmit(client, &cmd, &targets, now);
        if let Some(after) = self.cfg.clients.retry_after {
            let c = Endpoint::Client(client);
            self.push(
                now + after,
                c,
                c,
                Kind::ClientTimer {
                    client,
                    sequence,
                    generation,
                },
            );
        }
    }

    fn transmit(&mut self, client: ClientId, cmd: &Command, targets: &[NodeId], now: Time) {
        let bytes = codec::payload_bytes(cmd);
        let src = Endpoint::Client(client);
        for &t in targets {
            self.ledger.client_messages += 1;
            let delay = self.cfg.latency.sample(
                self.client_region(client),
                self.cfg.latency.region_of(t.index()),
                &mut self.rng,
            );
            self.push(
                now + delay,
                src,
                Endpoint::Node(t),
                Kind::Arrive {
                    to: t,
                    from: src,
                    sent_at: now,
                    bytes,
                    inbound: Inbound::Request(cmd.clone()),
                },
            );
        }
    }

    fn client_reply(&mut self, client: ClientId, sequence: u64, from: NodeId, now: Time) {
        let needed = self.cfg.clients.replies_needed.max(1);
        let Some(st) = self.clients.get_mut(client as usize) else {
            return;
        };
        let Some(p) = st.outstanding.get_mut(&sequence) else {
            return;
        };
        p.repliers.insert(from);
        if p.repliers.len() >= needed {
            self.client_accept(client, sequence, now);
        }
    }

    fn client_accept(&mut self, client: ClientId, sequence: u64, now: Time) {
        let st = &mut self.clients[client as usize];
        if st.outstanding.remove(&sequence).is_none() {
            return;
        }
        self.ledger.accept(client, sequence, now);
        if matches!(self.cfg.workload, Workload::ClosedLoop { .. }) {
            let c = Endpoint::Client(client);
            self.push(now, c, c, Kind::Submit { client });
        }
    }

    fn client_timeout(&mut self, client: ClientId, sequence: u64, generation: u64, now: Time) {
        let Some(after) = self.cfg.clients.retry_after else {
            return;
        };
        let st = &mut self.clients[client as usize];
        let Some(p) = st.outstanding.get_mut(&sequence) else {
            return;
        };
        if p.timer_generation != generation {
            return;
        }
        st.broadcast_mode = true;
        p.timer_generation += 1;
        let generation = p.timer_generation;
        let cmd = p.command.clone();
        let all: Vec<NodeId> = (0..self.n as u32).map(NodeId).collect();
        p.targets.extend(all.iter().copied());
        self.ledger.client_retries += 1;
        self.transmit(client, &cmd, &all, now);
        let c = Endpoint::Client(client);
        self.push(
            now + after,
            c,
            c,
            Kind::ClientTimer {
                client,
                sequence,
                generation,
            },
        );
    }
}
