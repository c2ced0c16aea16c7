use proptest::prelude::*;
use serde::{Deserialize, Serialize};

use qlab_core::{
    Action, Block, Command, Endpoint, Engine, Event, NodeId, ProtocolMessage, Time, TimerId,
};
use qlab_simnet::{
    run, Behavior, ClientPolicy, CpuCostModel, FaultPlan, LatencyModel, SimConfig, SimError,
    Submission, Workload,
};

/// Toy leader protocol: node 0 forwards each request, followers ack, the
/// leader commits on a majority and tells everyone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Toy {
    Propose(Block),
    Ack(u64),
    Commit(Block),
}

impl ProtocolMessage for Toy {
    fn is_proposal(&self) -> bool {
        matches!(self, Toy::Propose(_))
    }
    fn instance(&self) -> u64 {
        match self {
            Toy::Propose(b) | Toy::Commit(b) => b.height,
            Toy::Ack(h) => *h,
        }
    }
}

struct Node {
    id: NodeId,
    n: usize,
    head: Block,
    inflight: Option<(Block, usize)>,
    queue: Vec<Command>,
}

impl Node {
    fn new(id: NodeId, n: usize) -> Self {
        Self {
            id,
            n,
            head: Block::genesis(),
            inflight: None,
            queue: Vec::new(),
        }
    }

    fn propose(&mut self, out: &mut Vec<Action<Toy>>) {
        if self.inflight.is_some() || self.queue.is_empty() {
            return;
        }
        let b = Block::child_of(&self.head, std::mem::take(&mut self.queue), self.id, 0);
        self.inflight = Some((b.clone(), 1));
        out.push(Action::Broadcast(Toy::Propose(b)));
        self.try_commit(out);
    }

    fn try_commit(&mut self, out: &mut Vec<Action<Toy>>) {
        let Some((b, acks)) = &self.inflight else {
            return;
        };
        if *acks <= self.n / 2 {
            return;
        }
        let b = b.clone();
        self.inflight = None;
        self.head = b.clone();
        for c in &b.commands {
            out.push(Action::ReplyToClient {
                client: c.client_id as u32,
                sequence: c.sequence,
            });
        }
        out.push(Action::Broadcast(Toy::Commit(b.clone())));
        out.push(Action::CommitBlock(b));
        self.propose(out);
    }
}

impl Engine for Node {
    type Message = Toy;

    fn id(&self) -> NodeId {
        self.id
    }

    fn on_event(&mut self, e: Event<Toy>, _now: Time) -> Vec<Action<Toy>> {
        let mut out = Vec::new();
        match e {
            Event::ClientRequest(c) if self.id == NodeId(0) => {
                self.queue.push(c);
                self.propose(&mut out);
            }
            Event::Message {
                from,
                msg: Toy::Propose(b),
            } => out.push(Action::Send(from, Toy::Ack(b.height))),
            Event::Message {
                msg: Toy::Ack(h), ..
            } => {
                if let Some((b, acks)) = &mut self.inflight {
                    if b.height == h {
                        *acks += 1;
                    }
                }
                self.try_commit(&mut out);
            }
            Event::Message {
                msg: Toy::Commit(b),
                ..
            } => {
                self.head = b.clone();
                out.push(Action::CommitBlock(b));
            }
            _ => {}
        }
        out
    }
}

fn cfg(latency: Time, cpu: CpuCostModel, workload: Workload) -> SimConfig {
    let mut c = SimConfig::new(LatencyModel::Constant(latency), 10_000_000);
    c.cpu = cpu;
    c.workload = workload;
    c.clients = ClientPolicy::leader(1);
    c
}

fn closed(clients: u32, max: u64) -> Workload {
    Workload::ClosedLoop {
        clients,
        payload_bytes: 16,
        start: 0,
        max_per_client: Some(max),
    }
}

#[test]
fn single_node_without_workload_is_quiet() {
    let out = run(
        1,
        |id| Node::new(id, 1),
        &cfg(10, CpuCostModel::ZERO, Workload::None),
    )
    .unwrap();
    assert!(out.chains[0].is_empty());
    assert_eq!(out.ledger.protocol_messages, 0);
    assert_eq!(out.ledger.nodes[0].messages_sent, 0);
}

#[test]
fn closed_loop_commits_everything_in_order() {
    let out = run(
        3,
        |id| Node::new(id, 3),
        &cfg(10, CpuCostModel::ZERO, closed(2, 5)),
    )
    .unwrap();
    assert_eq!(out.ledger.completed_count(), 10);
    assert!(out.agreement().ok);
    assert_eq!(out.committed_commands(NodeId(0)).len(), 10);
    assert_eq!(out.stores[1].len(), 2);
    for chain in &out.chains {
        for (i, b) in chain.iter().enumerate() {
            assert_eq!(b.height, i as u64 + 1);
        }
    }
}

#[test]
fn single_request_latency_is_hop_count_times_delay() {
    let w = Workload::Scripted(vec![Submission {
        at: 0,
        client: 0,
        command: Command::new(0, 0, b"k".to_vec(), b"v".to_vec()),
        target: None,
    }]);
    let out = run(3, |id| Node::new(id, 3), &cfg(7, CpuCostModel::ZERO, w)).unwrap();
    // request, propose, ack, reply
    assert_eq!(out.ledger.latencies(), vec![28]);
}

#[test]
fn delay_outbound_shifts_arrivals_exactly() {
    let w = Workload::Scripted(vec![Submission {
        at: 0,
        client: 0,
        command: Command::new(0, 0, b"k".to_vec(), b"v".to_vec()),
        target: None,
    }]);
    let mut base = cfg(100, CpuCostModel::ZERO, w);
    base.trace = true;
    let mut delayed = base.clone();
    delayed.faults = FaultPlan::none().with(NodeId(2), Behavior::DelayOutbound(10), 0);
    let a = run(3, |id| Node::new(id, 3), &base).unwrap();
    let b = run(3, |id| Node::new(id, 3), &delayed).unwrap();
    let ack_from_2 = |o: &qlab_simnet::SimOutput<Toy>| {
        o.trace
            .iter()
            .find(|d| d.from == Endpoint::Node(NodeId(2)) && matches!(d.payload, Some(Toy::Ack(_))))
            .map(|d| d.handled_at)
            .unwrap()
    };
    assert_eq!(ack_from_2(&b), ack_from_2(&a) + 10);
}

#[test]
fn leader_is_busier_than_followers() {
    let cpu = CpuCostModel {
        per_message: 5,
        per_byte: 0.01,
    };
    let out = run(5, |id| Node::new(id, 5), &cfg(50, cpu, closed(4, 20))).unwrap();
    let leader = out.ledger.nodes[0].busy_time;
    assert!(out.ledger.nodes[1..].iter().all(|n| n.busy_time < leader));
}

#[test]
fn rejects_bad_configs() {
    let c = cfg(10, CpuCostModel::ZERO, Workload::None);
    assert!(matches!(
        run(0, |id| Node::new(id, 0), &c),
        Err(SimError::Config(_))
    ));
    let zero = cfg(0, CpuCostModel::ZERO, Workload::None);
    assert!(matches!(
        run(3, |id| Node::new(id, 3), &zero),
        Err(SimError::Config(_))
    ));
    let mut bad_fault = c.clone();
    bad_fault.faults = FaultPlan::none().with(NodeId(9), Behavior::CrashStop, 0);
    assert!(run(3, |id| Node::new(id, 3), &bad_fault).is_err());
}

struct Rewinder(NodeId, u8);

impl Engine for Rewinder {
    type Message = Toy;
    fn id(&self) -> NodeId {
        self.0
    }
    fn on_event(&mut self, e: Event<Toy>, _now: Time) -> Vec<Action<Toy>> {
        let g = Block::genesis();
        let b1 = Block::child_of(&g, vec![], self.0, 0);
        match (e, self.1) {
            (Event::Init, 0) => vec![Action::CommitBlock(b1.clone()), Action::CommitBlock(b1)],
            (Event::Init, _) => vec![Action::CommitBlock(Block::child_of(&b1, vec![], self.0, 0))],
            _ => vec![],
        }
    }
}

#[test]
fn commit_invariants_are_enforced() {
    let c = cfg(10, CpuCostModel::ZERO, Workload::None);
    assert!(matches!(
        run(1, |id| Rewinder(id, 0), &c),
        Err(SimError::NonMonotonicCommit { .. })
    ));
    assert!(matches!(
        run(1, |id| Rewinder(id, 1), &c),
        Err(SimError::BrokenChain { .. })
    ));
}

/// Timer engine: fires, re-arms, cancels every third arming.
struct Ticker(NodeId, u64);

impl Engine for Ticker {
    type Message = Toy;
    fn id(&self) -> NodeId {
        self.0
    }
    fn on_event(&mut self, e: Event<Toy>, _now: Time) -> Vec<Action<Toy>> {
        match e {
            Event::Init | Event::TimerFired(_) => {
                self.1 += 1;
                let mut v = vec![Action::SetTimer {
                    after: 10,
                    id: TimerId(0),
                }];
                if self.1.is_multiple_of(3) {
                    v.push(Action::SetTimer {
                        after: 5,
                        id: TimerId(0),
                    });
                }
                v
            }
            _ => vec![],
        }
    }
}

#[test]
fn rearming_a_timer_supersedes_the_old_deadline() {
    let mut c = cfg(10, CpuCostModel::ZERO, Workload::None);
    c.horizon = 100;
    let out = run(1, |id| Ticker(id, 0), &c).unwrap();
    // deadlines: 10, 20, 25, 35, 45, 50, 60, 70, 75, 85, 95, 100
    assert_eq!(out.end_time, 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn busy_time_is_conserved(per_message in 0u64..20, per_byte in 0.0f64..0.5, seed in any::<u64>()) {
        let cpu = CpuCostModel { per_message, per_byte };
        let mut c = cfg(30, cpu, closed(3, 4));
        c.latency = LatencyModel::UniformJitter { lo: 10, hi: 60 };
        c.seed = seed;
        let out = run(4, |id| Node::new(id, 4), &c).unwrap();
        for node in &out.ledger.nodes {
            // every send and receive costs exactly one cost() evaluation
            let lower = per_message * (node.messages_sent + node.messages_received);
            let bytes = (node.bytes_sent + node.bytes_received) as f64 * per_byte;
            let upper = lower + bytes.ceil() as u64 + node.messages_sent + node.messages_received;
            prop_assert!(node.busy_time >= lower && node.busy_time <= upper);
        }
    }

    #[test]
    fn deliveries_respect_causality(seed in any::<u64>()) {
        let mut c = cfg(30, CpuCostModel { per_message: 3, per_byte: 0.0 }, closed(3, 4));
        c.latency = LatencyModel::UniformJitter { lo: 10, hi: 60 };
        c.seed = seed;
        c.trace = true;
        let out = run(4, |id| Node::new(id, 4), &c).unwrap();
        for d in &out.trace {
            if d.from != Endpoint::Node(d.to) {
                prop_assert!(d.handled_at >= d.sent_at + 10);
            }
        }
        for r in out.ledger.completed() {
            prop_assert!(r.commit_time.unwrap() >= r.submit_time);
        }
    }

    #[test]
    fn same_seed_same_run(seed in any::<u64>()) {
        let mut c = cfg(30, CpuCostModel { per_message: 2, per_byte: 0.1 }, closed(3, 4));
        c.latency = LatencyModel::UniformJitter { lo: 10, hi: 60 };
        c.seed = seed;
        let a = run(4, |id| Node::new(id, 4), &c).unwrap();
        let b = run(4, |id| Node::new(id, 4), &c).unwrap();
        prop_assert_eq!(a.ledger.fingerprint(), b.ledger.fingerprint());
        prop_assert_eq!(a.chains, b.chains);
    }
}
