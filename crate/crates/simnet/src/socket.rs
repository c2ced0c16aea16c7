//! Runs engines as threads that talk over TCP on the loopback interface.
//!
//! Every node owns a listener; peers connect lazily on first send. Frames
//! are length-prefixed canonical encodings. Time is wall-clock microseconds
//! since start, so results are not reproducible the way simulator runs are.
//! The client lives in the calling thread.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use qlab_core::{codec, Action, Block, ClientId, Command, Engine, Event, NodeId, Time, TimerId};

use crate::faults::{Adversarial, FaultPlan};
use crate::workload::{synthetic_command, ClientPolicy, ClientRoute};

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Wire<M> {
    Request(Command),
    Protocol {
        from: NodeId,
        msg: M,
    },
    Reply {
        from: NodeId,
        client: ClientId,
        sequence: u64,
    },
}

#[derive(Clone, Debug)]
pub struct LoopbackConfig {
    pub clients: u32,
    pub requests_per_client: u64,
    pub payload_bytes: usize,
    pub policy: ClientPolicy,
    pub faults: FaultPlan,
    /// Gives up on outstanding requests after this long.
    pub deadline: Duration,
}

#[derive(Clone, Debug)]
pub struct LoopbackOutput {
    pub chains: Vec<Vec<Block>>,
    /// Accepted request latencies in microseconds, sorted.
    pub latencies: Vec<Time>,
    pub submitted: u64,
    pub elapsed: Duration,
    pub messages_sent: Vec<u64>,
}

enum Notice {
    Commit(NodeId, Block),
    Sent(NodeId, u64),
}

fn bind() -> io::Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    l.set_nonblocking(true)?;
    let addr = l.local_addr()?;
    Ok((l, addr))
}

/// Accepts connections until `stop` and forwards decoded frames to `tx`.
fn spawn_acceptor<M>(
    listener: TcpListener,
    tx: Sender<Wire<M>>,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()>
where
    M: qlab_core::ProtocolMessage,
{
    thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let tx = tx.clone();
                    let _ = stream.set_nonblocking(false);
                    let _ = stream.set_nodelay(true);
                    thread::spawn(move || {
                        let mut r = BufReader::new(stream);
                        while let Ok(Some(bytes)) = codec::read_frame(&mut r) {
                            match codec::decode::<Wire<M>>(&bytes) {
                                Ok(w) => {
                                    if tx.send(w).is_err() {
                                        return;
                                    }
                                }
                                Err(_) => return,
                            }
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(1))
                }
                Err(_) => return,
            }
        }
    })
}

struct Outbox {
    addrs: Vec<SocketAddr>,
    conns: HashMap<usize, BufWriter<TcpStream>>,
}

impl Outbox {
    fn send<M: Serialize>(&mut self, to: usize, wire: &Wire<M>) {
        let conn = match self.conns.entry(to) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => {
                match TcpStream::connect(self.addrs[to]) {
                    Ok(s) => {
                        let _ = s.set_nodelay(true);
                        v.insert(BufWriter::new(s))
                    }
                    Err(_) => return,
                }
            }
        };
        if codec::write_frame(conn, wire)
            .and_then(|_| conn.flush())
            .is_err()
        {
            self.conns.remove(&to);
        }
    }
}

/// Runs `n` engines over loopback TCP with a closed-loop client driver.
pub fn run_loopback<E, F>(
    n: usize,
    mut factory: F,
    cfg: &LoopbackConfig,
) -> io::Result<LoopbackOutput>
where
    E: Engine + 'static,
    F: FnMut(NodeId) -> E,
{
    let stop = Arc::new(AtomicBool::new(false));
    let mut listeners = Vec::with_capacity(n + 1);
    let mut addrs = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        let (l, a) = bind()?;
        listeners.push(l);
        addrs.push(a);
    }
    // the last address is the client driver
    let client_idx = n;
    let start = Instant::now();
    let (notice_tx, notice_rx) = mpsc::channel();
    let mut handles = Vec::new();
    let mut listeners = listeners.into_iter();

    for i in 0..n {
        let engine = Adversarial::new(factory(NodeId(i as u32)), n, &cfg.faults);
        let (tx, rx) = mpsc::channel::<Wire<E::Message>>();
        handles.push(spawn_acceptor(listeners.next().unwrap(), tx, stop.clone()));
        let outbox = Outbox {
            addrs: addrs.clone(),
            conns: HashMap::new(),
        };
        let stop = stop.clone();
        let notice = notice_tx.clone();
        handles.push(thread::spawn(move || {
            node_loop(engine, n, client_idx, rx, outbox, notice, stop, start)
        }));
    }
    drop(notice_tx);

    let (reply_tx, reply_rx) = mpsc::channel::<Wire<E::Message>>();
    handles.push(spawn_acceptor(
        listeners.next().unwrap(),
        reply_tx,
        stop.clone(),
    ));
    let mut outbox = Outbox {
        addrs,
        conns: HashMap::new(),
    };

    let out = drive_clients::<E::Message>(n, cfg, &mut outbox, &reply_rx, &notice_rx, start);
    stop.store(true, Ordering::Relaxed);
    drop(outbox);
    for h in handles {
        let _ = h.join();
    }
    let mut out = out;
    for notice in notice_rx.try_iter() {
        absorb(&mut out, notice);
    }
    Ok(out)
}

fn absorb(out: &mut LoopbackOutput, notice: Notice) -> Option<NodeId> {
    match notice {
        Notice::Commit(node, b) => {
            out.chains[node.index()].push(b);
            Some(node)
        }
        Notice::Sent(node, k) => {
            out.messages_sent[node.index()] += k;
            None
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn node_loop<E: Engine>(
    mut engine: Adversarial<E>,
    n: usize,
    client_idx: usize,
    rx: Receiver<Wire<E::Message>>,
    mut outbox: Outbox,
    notice: Sender<Notice>,
    stop: Arc<AtomicBool>,
    start: Instant,
) {
    let me = engine.id();
    let now = || start.elapsed().as_micros() as Time;
    let mut timers: BTreeMap<TimerId, Time> = BTreeMap::new();
    let mut pending = vec![Event::Init];
    loop {
        for ev in pending.drain(..) {
            let actions = engine.on_event(ev, now());
            let mut sent = 0;
            for a in actions {
                match a {
                    Action::Send(to, msg) => {
                        sent += 1;
                        outbox.send(to.index(), &Wire::Protocol { from: me, msg });
                    }
                    Action::Broadcast(msg) => {
                        let w = Wire::Protocol { from: me, msg };
                        for p in (0..n).filter(|p| *p != me.index()) {
                            sent += 1;
                            outbox.send(p, &w);
                        }
                    }
                    Action::SetTimer { after, id } => {
                        timers.insert(id, now() + after);
                    }
                    Action::CancelTimer(id) => {
                        timers.remove(&id);
                    }
                    Action::CommitBlock(b) => {
                        let _ = notice.send(Notice::Commit(me, b));
                    }
                    Action::ReplyToClient { client, sequence } => {
                        outbox.send::<E::Message>(
                            client_idx,
                            &Wire::Reply {
                                from: me,
                                client,
                                sequence,
                            },
                        );
                    }
                }
            }
            if sent > 0 {
                let _ = notice.send(Notice::Sent(me, sent));
            }
        }
        if stop.load(Ordering::Relaxed) {
            return;
        }
        let t = now();
        let due: Vec<TimerId> = timers
            .iter()
            .filter(|(_, d)| **d <= t)
            .map(|(id, _)| *id)
            .collect();
        for id in due {
            timers.remove(&id);
            pending.push(Event::TimerFired(id));
        }
        if !pending.is_empty() {
            continue;
        }
        let wait = timers
            .values()
            .min()
            .map_or(5_000, |d| d.saturating_sub(t))
            .clamp(1, 5_000);
        match rx.recv_timeout(Duration::from_micros(wait)) {
            Ok(Wire::Request(c)) => pending.push(Event::ClientRequest(c)),
            Ok(Wire::Protocol { from, msg }) => pending.push(Event::Message { from, msg }),
            Ok(Wire::Reply { .. }) | Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

struct Outstanding {
    submitted: Instant,
    repliers: BTreeSet<NodeId>,
    targets: Vec<NodeId>,
}

fn drive_clients<M: qlab_core::ProtocolMessage>(
    n: usize,
    cfg: &LoopbackConfig,
    outbox: &mut Outbox,
    replies: &Receiver<Wire<M>>,
    notices: &Receiver<Notice>,
    start: Instant,
) -> LoopbackOutput {
    let mut out = LoopbackOutput {
        chains: vec![Vec::new(); n],
        latencies: Vec::new(),
        submitted: 0,
        elapsed: Duration::ZERO,
        messages_sent: vec![0; n],
    };
    let targets = |policy: &ClientPolicy| -> Vec<NodeId> {
        match policy.route {
            ClientRoute::Leader(l) => vec![l],
            ClientRoute::All => (0..n as u32).map(NodeId).collect(),
        }
    };
    let mut next_seq = vec![0u64; cfg.clients as usize];
    let mut outstanding: BTreeMap<(ClientId, u64), Outstanding> = BTreeMap::new();
    let mut submit = |client: ClientId,
                      outbox: &mut Outbox,
                      out: &mut LoopbackOutput,
                      outstanding: &mut BTreeMap<_, _>| {
        let seq = next_seq[client as usize];
        if seq >= cfg.requests_per_client {
            return;
        }
        next_seq[client as usize] += 1;
        let cmd = synthetic_command(client, seq, cfg.payload_bytes);
        let to = targets(&cfg.policy);
        for t in &to {
            outbox.send::<M>(t.index(), &Wire::Request(cmd.clone()));
        }
        out.submitted += 1;
        outstanding.insert(
            (client, seq),
            Outstanding {
                submitted: Instant::now(),
                repliers: BTreeSet::new(),
                targets: to,
            },
        );
    };
    for c in 0..cfg.clients {
        submit(c, outbox, &mut out, &mut outstanding);
    }
    let deadline = Instant::now() + cfg.deadline;
    let needed = cfg.policy.replies_needed.max(1);
    while !outstanding.is_empty() && Instant::now() < deadline {
        let mut accepted = Vec::new();
        match replies.recv_timeout(Duration::from_millis(1)) {
            Ok(Wire::Reply {
                from,
                client,
                sequence,
            }) => {
                if let Some(o) = outstanding.get_mut(&(client, sequence)) {
                    o.repliers.insert(from);
                    if o.repliers.len() >= needed {
                        accepted.push((client, sequence));
                    }
                }
            }
            Ok(_) | Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        for notice in notices.try_iter() {
            if let Some(node) = absorb(&mut out, notice) {
                if cfg.policy.accept_on_commit {
                    accepted.extend(
                        outstanding
                            .iter()
                            .filter(|(_, o)| o.targets.contains(&node))
                            .map(|(k, _)| *k),
                    );
                }
            }
        }
        for key in accepted {
            if let Some(o) = outstanding.remove(&key) {
                out.latencies
                    .push(o.submitted.elapsed().as_micros() as Time);
                submit(key.0, outbox, &mut out, &mut outstanding);
            }
        }
    }
    out.elapsed = start.elapsed();
    out.latencies.sort_unstable();
    out
}
