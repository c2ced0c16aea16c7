#![allow(dead_code)]

use qlab_core::{quorum_sizes, Authenticator, Command, FaultModel, NodeContext, NodeId, Time};
use qlab_simnet::{
    ClientPolicy, CpuCostModel, FaultPlan, LatencyModel, SimConfig, Submission, Workload,
};

pub fn ctx(i: NodeId, n: usize, model: FaultModel, seed: u64) -> NodeContext {
    NodeContext {
        id: i,
        quorum: quorum_sizes(n, model).unwrap(),
        auth: Authenticator::hashed(seed),
        seed,
    }
}

pub fn one_request(at: Time) -> Workload {
    Workload::Scripted(vec![Submission {
        at,
        client: 0,
        command: Command::new(0, 0, b"k".to_vec(), b"v".to_vec()),
        target: None,
    }])
}

pub fn config(delay: Time, workload: Workload, policy: ClientPolicy, horizon: Time) -> SimConfig {
    let mut c = SimConfig::new(LatencyModel::Constant(delay), horizon);
    c.workload = workload;
    c.clients = policy;
    c
}

pub fn closed(clients: u32, max: Option<u64>) -> Workload {
    Workload::ClosedLoop {
        clients,
        payload_bytes: 16,
        start: 0,
        max_per_client: max,
    }
}

pub fn jitter(
    seed: u64,
    workload: Workload,
    policy: ClientPolicy,
    faults: FaultPlan,
    horizon: Time,
) -> SimConfig {
    let mut c = SimConfig::new(LatencyModel::UniformJitter { lo: 100, hi: 900 }, horizon);
    c.workload = workload;
    c.clients = policy;
    c.faults = faults;
    c.seed = seed;
    c.cpu = CpuCostModel {
        per_message: 5,
        per_byte: 0.0,
    };
    c
}
