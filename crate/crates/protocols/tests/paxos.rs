mod support;

use qlab_core::{FaultModel, NodeId};
use qlab_protocols::paxos::{Paxos, PaxosConfig};
use qlab_simnet::{run, Behavior, ClientPolicy, FaultPlan};
use support::*;

fn paxos(n: usize, cfg: PaxosConfig) -> impl FnMut(NodeId) -> Paxos {
    move |id| Paxos::new(ctx(id, n, FaultModel::Crash, 1), cfg.clone())
}

#[test]
fn steady_state_slot_costs_three_fanouts() {
    let c = config(100, one_request(0), ClientPolicy::leader(1), 1_000_000);
    let out = run(3, paxos(3, PaxosConfig::default()), &c).unwrap();
    assert_eq!(out.ledger.instance_messages.get(&1), Some(&6));
    assert_eq!(out.ledger.protocol_messages, 6);
    assert_eq!(out.ledger.latencies(), vec![400]);
    assert!(out.chains.iter().all(|c| c.len() == 1));
}

#[test]
fn closed_loop_agrees() {
    let c = config(
        100,
        closed(8, Some(20)),
        ClientPolicy::leader(1),
        10_000_000,
    );
    let out = run(5, paxos(5, PaxosConfig::default()), &c).unwrap();
    assert_eq!(out.ledger.completed_count(), 160);
    assert!(out.agreement().ok);
    assert!(out.chains.iter().all(|c| c.len() == 160));
}

#[test]
fn leader_crash_elects_successor() {
    for seed in 0..20 {
        let faults = FaultPlan::none().with(NodeId(0), Behavior::CrashStop, 3_000);
        let policy = ClientPolicy::leader(1).with_retry(10_000);
        let c = jitter(seed, closed(4, Some(30)), policy, faults, 5_000_000);
        let out = run(
            5,
            paxos(
                5,
                PaxosConfig {
                    election_timeout: 5_000,
                    ..PaxosConfig::default()
                },
            ),
            &c,
        )
        .unwrap();
        let rep = out.agreement();
        assert!(rep.ok, "seed {seed}: {rep:?}");
        assert_eq!(out.ledger.completed_count(), 120, "seed {seed}");
    }
}
