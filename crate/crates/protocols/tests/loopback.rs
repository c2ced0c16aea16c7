mod support;

use std::time::Duration;

use qlab_core::FaultModel;
use qlab_protocols::paxos::{Paxos, PaxosConfig};
use qlab_protocols::pbft::{Pbft, PbftConfig};
use qlab_simnet::socket::{run_loopback, LoopbackConfig};
use qlab_simnet::{chains_prefix_consistent, ClientPolicy, FaultPlan};
use support::*;

fn loopback(policy: ClientPolicy) -> LoopbackConfig {
    LoopbackConfig {
        clients: 2,
        requests_per_client: 10,
        payload_bytes: 16,
        policy,
        faults: FaultPlan::none(),
        deadline: Duration::from_secs(20),
    }
}

#[test]
fn paxos_over_tcp() {
    let n = 3;
    let cfg = PaxosConfig {
        election_timeout: 2_000_000,
        ..PaxosConfig::default()
    };
    let out = run_loopback(
        n,
        |id| Paxos::new(ctx(id, n, FaultModel::Crash, 1), cfg.clone()),
        &loopback(ClientPolicy::leader(1)),
    )
    .unwrap();
    assert_eq!(out.latencies.len(), 20);
    assert!(chains_prefix_consistent(&out.chains, &vec![true; n]).ok);
    let commands: usize = out
        .chains
        .iter()
        .map(|c| c.iter().map(|b| b.commands.len()).sum::<usize>())
        .max()
        .unwrap();
    assert_eq!(commands, 20);
}

#[test]
fn pbft_over_tcp() {
    let n = 4;
    let cfg = PbftConfig {
        view_timeout: 2_000_000,
        ..PbftConfig::default()
    };
    let out = run_loopback(
        n,
        |id| Pbft::new(ctx(id, n, FaultModel::Byzantine, 1), cfg.clone()),
        &loopback(ClientPolicy::leader(2)),
    )
    .unwrap();
    assert_eq!(out.latencies.len(), 20);
    assert!(chains_prefix_consistent(&out.chains, &vec![true; n]).ok);
    assert!(out.messages_sent.iter().all(|m| *m > 0));
}
