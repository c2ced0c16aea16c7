mod support;

use qlab_core::{FaultModel, NodeId};
use qlab_protocols::hotstuff_basic::{BasicHotStuff, BasicHotStuffConfig};
use qlab_simnet::{run, Behavior, ClientPolicy, FaultPlan};
use support::*;

fn basic(n: usize, cfg: BasicHotStuffConfig) -> impl FnMut(NodeId) -> BasicHotStuff {
    move |id| BasicHotStuff::new(ctx(id, n, FaultModel::Byzantine, 1), cfg.clone())
}

fn fast() -> BasicHotStuffConfig {
    BasicHotStuffConfig {
        view_timeout: 4_000,
        ..BasicHotStuffConfig::default()
    }
}

#[test]
fn four_phases_take_ten_hops() {
    for n in [4usize, 7] {
        let f = (n - 1) / 3;
        let c = config(100, one_request(0), ClientPolicy::all(f + 1), 1_000_000);
        let out = run(n, basic(n, BasicHotStuffConfig::default()), &c).unwrap();
        // request, new-view, then prepare / pre-commit / commit each with votes, decide, reply
        assert_eq!(out.ledger.latencies(), vec![1_000], "n = {n}");
        assert_eq!(out.ledger.view_change_messages, 0);
        assert!(out.chains.iter().all(|c| c.len() == 1));
        // new-views, then four leader fanouts and three vote rounds
        let expected = (n - 1) + 4 * (n - 1) + 3 * (n - 1);
        assert_eq!(
            out.ledger.instance_messages[&1] as usize, expected,
            "n = {n}"
        );
    }
}

#[test]
fn closed_loop_agrees() {
    let c = config(100, closed(8, Some(20)), ClientPolicy::all(2), 20_000_000);
    let out = run(
        4,
        basic(
            4,
            BasicHotStuffConfig {
                max_batch: 8,
                ..BasicHotStuffConfig::default()
            },
        ),
        &c,
    )
    .unwrap();
    assert_eq!(out.ledger.completed_count(), 160);
    assert!(out.agreement().ok);
}

#[test]
fn crashed_leader_is_skipped() {
    for seed in 0..20 {
        let faults = FaultPlan::none().with(NodeId(2), Behavior::CrashStop, 2_000);
        let policy = ClientPolicy::all(2).with_retry(20_000);
        let c = jitter(seed, closed(3, Some(10)), policy, faults, 10_000_000);
        let out = run(4, basic(4, fast()), &c).unwrap();
        let rep = out.agreement();
        assert!(rep.ok, "seed {seed}: {rep:?}");
        assert_eq!(out.ledger.completed_count(), 30, "seed {seed}");
        assert!(out.ledger.view_change_messages > 0);
    }
}

#[test]
fn equivocating_leader_cannot_fork() {
    for seed in 0..20 {
        let faults = FaultPlan::none().with(NodeId(1), Behavior::Equivocate, 0);
        let policy = ClientPolicy::all(2).with_retry(20_000);
        let c = jitter(seed, closed(3, Some(10)), policy, faults, 10_000_000);
        let out = run(4, basic(4, fast()), &c).unwrap();
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
    let out = run(4, basic(4, fast()), &c).unwrap();
    assert!(out.agreement().ok);
    assert_eq!(out.ledger.completed_count(), 30);
}
