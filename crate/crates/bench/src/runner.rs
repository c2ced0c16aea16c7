use rayon::prelude::*;

use qlab_analysis::Protocol;
use qlab_core::{
    ms, quorum_sizes, Authenticator, Block, Endpoint, Engine, MetricsLedger, NodeContext, NodeId,
    ProtocolMessage, QuorumConfig, Time,
};
use qlab_protocols::hotstuff::{HotStuff, HotStuffConfig};
use qlab_protocols::paxos::{Paxos, PaxosConfig};
use qlab_protocols::pbft::{Pbft, PbftConfig};
use qlab_protocols::snowball::{Snowball, SnowballConfig, COLOR_CLIENT};
use qlab_protocols::streamlet::{Streamlet, StreamletConfig};
use qlab_protocols::tendermint::{Tendermint, TendermintConfig};
use qlab_simnet::{run, ClientPolicy, SimConfig, SimOutput, Workload};

use crate::{BenchConfig, BenchError, RunReport};

/// How clients reach a protocol and when they accept: `f + 1` matching
/// replies for Byzantine engines, one reply from the Paxos leader, and a
/// local commit for Snowball.
pub fn client_policy(protocol: Protocol, quorum: &QuorumConfig, retry: Time) -> ClientPolicy {
    let byzantine_f = (quorum.n - 1) / 3;
    match protocol {
        Protocol::Paxos => ClientPolicy::leader(1).with_retry(retry),
        Protocol::Pbft => ClientPolicy::leader(byzantine_f + 1).with_retry(retry),
        Protocol::Snowball => ClientPolicy {
            accept_on_commit: true,
            ..ClientPolicy::all(1)
        },
        _ => ClientPolicy::all(byzantine_f + 1).with_retry(retry),
    }
}

/// The simulator settings a cell describes.
pub fn sim_config(cfg: &BenchConfig) -> Result<SimConfig, BenchError> {
    let quorum = quorum(cfg)?;
    let mut s = SimConfig::new(cfg.latency.model(cfg.n), cfg.horizon_time());
    s.cpu = cfg.cpu_model();
    s.faults = cfg.fault_plan();
    s.seed = cfg.seed;
    s.workload = match cfg.request_interval {
        None => Workload::ClosedLoop {
            clients: cfg.clients,
            payload_bytes: cfg.payload_bytes,
            start: 0,
            max_per_client: cfg.requests_per_client,
        },
        Some(i) => Workload::OpenLoop {
            clients: cfg.clients,
            interval: ms(i),
            payload_bytes: cfg.payload_bytes,
            start: 0,
            max_per_client: cfg.requests_per_client,
        },
    };
    let base = cfg.timeout_time().unwrap_or(20_000);
    s.clients = client_policy(cfg.protocol, &quorum, 4 * base);
    Ok(s)
}

fn quorum(cfg: &BenchConfig) -> Result<QuorumConfig, BenchError> {
    quorum_sizes(cfg.n, cfg.fault_model()).map_err(|e| BenchError::Config(e.to_string()))
}

/// What a finished simulation leaves behind, minus the message type.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub ledger: MetricsLedger,
    pub chains: Vec<Vec<Block>>,
    pub commit_times: Vec<Vec<Time>>,
    pub honest: Vec<bool>,
    pub agreement_ok: bool,
    /// `(sent_at, sender)` of every delivered proposal, oldest first. Only
    /// filled when the simulator traced deliveries.
    pub proposals: Vec<(Time, NodeId)>,
}

impl Outcome {
    fn from_output<M: ProtocolMessage>(out: SimOutput<M>) -> Self {
        let agreement_ok = out.agreement().ok;
        let mut proposals: Vec<(Time, NodeId)> = out
            .trace
            .iter()
            .filter(|d| d.payload.as_ref().is_some_and(|m| m.is_proposal()))
            .filter_map(|d| match d.from {
                Endpoint::Node(id) => Some((d.sent_at, id)),
                Endpoint::Client(_) => None,
            })
            .collect();
        proposals.sort();
        proposals.dedup();
        Outcome {
            proposals,
            ledger: out.ledger,
            chains: out.chains,
            commit_times: out.commit_times,
            honest: out.honest,
            agreement_ok,
        }
    }

    /// Client commands in the longest honest chain.
    pub fn committed(&self) -> u64 {
        self.chains
            .iter()
            .zip(&self.honest)
            .filter(|(_, h)| **h)
            .map(|(c, _)| {
                c.iter()
                    .flat_map(|b| &b.commands)
                    .filter(|c| c.client_id <= u32::MAX as u64 && c.client_id != COLOR_CLIENT)
                    .count() as u64
            })
            .max()
            .unwrap_or(0)
    }
}

fn simulate<E, F>(n: usize, sim: &SimConfig, factory: F) -> Result<Outcome, BenchError>
where
    E: Engine,
    F: FnMut(NodeId) -> E,
{
    Ok(Outcome::from_output(run(n, factory, sim)?))
}

/// Simulates one cell to its horizon.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<RunReport, BenchError> {
    let out = execute(cfg, &sim_config(cfg)?)?;
    let committed = out.committed();
    Ok(RunReport::from_ledger(
        cfg.protocol,
        cfg.clients,
        cfg.seed,
        cfg.horizon_time(),
        &out.ledger,
        committed,
        out.agreement_ok,
    ))
}

/// Runs the engines `cfg` selects under arbitrary simulator settings.
pub fn execute(cfg: &BenchConfig, sim: &SimConfig) -> Result<Outcome, BenchError> {
    cfg.validate()?;
    let quorum = quorum(cfg)?;
    let n = cfg.n;
    let ctx = |id: NodeId| NodeContext {
        id,
        quorum,
        auth: Authenticator::hashed(cfg.seed),
        seed: cfg.seed,
    };
    let timeout = cfg.timeout_time();
    match cfg.protocol {
        Protocol::Paxos => {
            let mut p = PaxosConfig {
                max_batch: cfg.batch,
                window: cfg.window,
                ..PaxosConfig::default()
            };
            if let Some(t) = timeout {
                p.election_timeout = t;
            }
            simulate(n, sim, |id| Paxos::new(ctx(id), p.clone()))
        }
        Protocol::Pbft => {
            let mut p = PbftConfig {
                max_batch: cfg.batch,
                window: cfg.window,
                ..PbftConfig::default()
            };
            if let Some(t) = timeout {
                p.view_timeout = t;
            }
            simulate(n, sim, |id| Pbft::new(ctx(id), p.clone()))
        }
        Protocol::Tendermint | Protocol::TendermintStar => {
            let mut p = TendermintConfig {
                max_batch: cfg.batch,
                delta: cfg.delta_time(),
                star: cfg.protocol == Protocol::TendermintStar,
                ..TendermintConfig::default()
            };
            if let Some(t) = timeout {
                p.timeout_propose = t;
                p.timeout_vote = t / 2;
                p.timeout_increment = t / 4;
            }
            simulate(n, sim, |id| Tendermint::new(ctx(id), p.clone()))
        }
        Protocol::HotStuff => {
            let mut p = HotStuffConfig {
                max_batch: cfg.batch,
                ..HotStuffConfig::default()
            };
            if let Some(t) = timeout {
                p.view_timeout = t;
            }
            simulate(n, sim, |id| HotStuff::new(ctx(id), p.clone()))
        }
        Protocol::Streamlet => {
            let p = StreamletConfig {
                max_batch: cfg.batch,
                epoch: cfg.epoch_time(),
            };
            simulate(n, sim, |id| Streamlet::new(ctx(id), p.clone()))
        }
        Protocol::Snowball => {
            let mut p = SnowballConfig {
                k: cfg.snowball.k,
                alpha: cfg.snowball.alpha,
                beta: cfg.snowball.beta,
                ..SnowballConfig::default()
            };
            if let Some(t) = timeout {
                p.query_timeout = t;
            }
            // surface parameter errors before building the roster
            Snowball::new(ctx(NodeId(0)), p.clone())
                .map_err(|e| BenchError::Config(e.to_string()))?;
            simulate(n, sim, |id| {
                Snowball::new(ctx(id), p.clone()).expect("validated")
            })
        }
    }
}

/// A cartesian grid over a base config.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: BenchConfig,
    pub protocols: Vec<Protocol>,
    pub ns: Vec<usize>,
    pub clients: Vec<u32>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Cells in `(protocol, n, clients, seed)` order.
    pub fn cells(&self) -> Vec<BenchConfig> {
        let mut out = Vec::new();
        for &protocol in &self.protocols {
            for &n in &self.ns {
                for &clients in &self.clients {
                    for &seed in &self.seeds {
                        out.push(BenchConfig {
                            protocol,
                            n,
                            clients,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub reports: Vec<RunReport>,
    /// Cells that failed, with the error; the rest of the sweep still ran.
    pub failures: Vec<(BenchConfig, String)>,
}

/// Runs every cell in parallel. Reports keep the order of `cells`.
pub fn sweep(cells: &[BenchConfig]) -> SweepOutcome {
    let results: Vec<Result<RunReport, String>> = cells
        .par_iter()
        .map(|c| run_benchmark(c).map_err(|e| e.to_string()))
        .collect();
    let mut outcome = SweepOutcome::default();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(report) => outcome.reports.push(report),
            Err(e) => outcome.failures.push((cell.clone(), e)),
        }
    }
    outcome
}
