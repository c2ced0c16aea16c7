mod support;

use qlab_core::{FaultModel, NodeId};
use qlab_protocols::hotstuff::{HotStuff, HotStuffConfig};
use qlab_simnet::{run, Behavior, ClientPolicy, FaultPlan};
use support::*;

fn hs(n: usize, cfg: HotStuffConfig) -> impl FnMut(NodeId) -> HotStuff {
    move |id| HotStuff::new(ctx(id, n, FaultModel::Byzantine, 1), cfg.clone())
}

fn fast() -> HotStuffConfig {
    HotStuffConfig {
        view_timeout: 4_000,
        ..HotStuffConfig::default()
    }
}

#[test]
fn every_view_costs_two_fanouts() {
    for n in [4usize, 7, 10] {
        let f = (n - 1) / 3;
        let c = config(100, one_request(0), ClientPolicy::all(f + 1), 1_000_000);
        let out = run(n, hs(n, HotStuffConfig::default()), &c).unwrap();
        // one block with the command plus three to push it through the chain
        let views: Vec<u64> = out.ledger.instance_messages.keys().copied().collect();
        assert_eq!(views, vec![1, 2, 3, 4], "n = {n}");
        for m in out.ledger.instance_messages.values() {
            assert_eq!(*m as usize, 2 * (n - 1), "n = {n}");
        }
        assert_eq!(out.ledger.view_change_messages, 0);
        assert!(out.chains.iter().all(|c| c[0].commands.len() == 1));
        // request, then four proposals each followed by votes except the last, then reply
        assert_eq!(out.ledger.latencies(), vec![900]);
    }
}

#[test]
fn closed_loop_agrees() {
    let c = config(100, closed(8, Some(20)), ClientPolicy::all(2), 20_000_000);
    let out = run(
        4,
        hs(
            4,
            HotStuffConfig {
                max_batch: 8,
                ..HotStuffConfig::default()
            },
        ),
        &c,
    )
    .unwrap();
    assert_eq!(out.ledger.completed_count(), 160);
    assert!(out.agreement().ok);
    let commands: usize = out.chains[2].iter().map(|b| b.commands.len()).sum();
    assert_eq!(commands, 160);
}

#[test]
fn crashed_leader_is_skipped_by_the_pacemaker() {
    for seed in 0..20 {
        let faults = FaultPlan::none().with(NodeId(2), Behavior::CrashStop, 2_000);
        let policy = ClientPolicy::all(2).with_retry(20_000);
        let c = jitter(seed, closed(3, Some(20)), policy, faults, 10_000_000);
        let out = run(4, hs(4, fast()), &c).unwrap();
        let rep = out.agreement();
        assert!(rep.ok, "seed {seed}: {rep:?}");
        assert_eq!(out.ledger.completed_count(), 60, "seed {seed}");
        assert!(out.ledger.view_change_messages > 0);
    }
}

#[test]
fn equivocating_leader_cannot_fork() {
    for seed in 0..20 {
        let faults = FaultPlan::none().with(NodeId(1), Behavior::Equivocate, 0);
        let policy = ClientPolicy::all(2).with_retry(20_000);
        let c = jitter(seed, closed(3, Some(10)), policy, faults, 10_000_000);
        let out = run(4, hs(4, fast()), &c).unwrap();
        let rep = out.agreement();
        assert!(rep.ok, "seed {seed}: {rep:?}");
        assert_eq!(out.ledger.completed_count(), 30, "seed {seed}");
    }
}

#[test]
fn silent_leader_is_skipped() {
    let faults = FaultPlan::none().with(NodeId(1), Behavior::SilentLeader, 0);
    let policy = ClientPolicy::all(2).with_retry(20_000);
    let c = jitter(5, closed(3, Some(10)), policy, faults, 10_000_000);
    let out = run(4, hs(4, fast()), &c).unwrap();
    assert!(out.agreement().ok);
    assert_eq!(out.ledger.completed_count(), 30);
}

#[test]
fn larger_roster_tolerates_two_crashes() {
    let faults = FaultPlan::none()
        .with(NodeId(1), Behavior::CrashStop, 1_000)
        .with(NodeId(4), Behavior::CrashStop, 1_000);
    let policy = ClientPolicy::all(3).with_retry(20_000);
    let c = jitter(11, closed(3, Some(10)), policy, faults, 10_000_000);
    let out = run(7, hs(7, fast()), &c).unwrap();
    assert!(out.agreement().ok);
    assert_eq!(out.ledger.completed_count(), 30);
}
