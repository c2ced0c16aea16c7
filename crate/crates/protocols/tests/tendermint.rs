mod support;

use qlab_core::{FaultModel, NodeId};
use qlab_protocols::tendermint::{Tendermint, TendermintConfig};
use qlab_simnet::{run, Behavior, ClientPolicy, FaultPlan};
use support::*;

fn tm(n: usize, cfg: TendermintConfig) -> impl FnMut(NodeId) -> Tendermint {
    move |id| Tendermint::new(ctx(id, n, FaultModel::Byzantine, 1), cfg.clone())
}

fn star() -> TendermintConfig {
    TendermintConfig {
        star: true,
        ..TendermintConfig::default()
    }
}

fn fast(star: bool) -> TendermintConfig {
    TendermintConfig {
        timeout_propose: 4_000,
        timeout_vote: 3_000,
        timeout_increment: 1_000,
        star,
        ..TendermintConfig::default()
    }
}

#[test]
fn gossip_height_costs_two_all_to_all_rounds() {
    for n in [4usize, 7] {
        let f = (n - 1) / 3;
        let c = config(100, one_request(0), ClientPolicy::all(f + 1), 1_000_000);
        let out = run(n, tm(n, TendermintConfig::default()), &c).unwrap();
        let per_height = out.ledger.instance_messages[&1] + out.ledger.reply_messages;
        assert_eq!(
            per_height as usize,
            (n - 1) + 2 * n * (n - 1) + (f + 1),
            "n = {n}"
        );
        // request, proposal, prevote, precommit, reply
        assert_eq!(out.ledger.latencies(), vec![500]);
    }
}

#[test]
fn star_height_costs_five_fanouts() {
    for n in [4usize, 7, 10] {
        let f = (n - 1) / 3;
        let c = config(100, one_request(0), ClientPolicy::all(f + 1), 1_000_000);
        let out = run(n, tm(n, star()), &c).unwrap();
        assert_eq!(
            out.ledger.instance_messages[&1] as usize,
            5 * (n - 1),
            "n = {n}"
        );
        assert!(out.chains.iter().all(|c| c.len() == 1));
        // request, proposal, prevote, certificate, precommit, certificate, reply
        assert_eq!(out.ledger.latencies(), vec![700]);
    }
}

#[test]
fn commit_wait_adds_delta() {
    let c = config(100, one_request(0), ClientPolicy::all(2), 1_000_000);
    let cfg = TendermintConfig {
        delta: 250,
        ..TendermintConfig::default()
    };
    let out = run(4, tm(4, cfg), &c).unwrap();
    assert_eq!(out.ledger.latencies(), vec![750]);
}

#[test]
fn closed_loop_agrees_in_both_modes() {
    for star in [false, true] {
        let c = config(100, closed(6, Some(15)), ClientPolicy::all(2), 20_000_000);
        let cfg = TendermintConfig {
            max_batch: 4,
            star,
            ..TendermintConfig::default()
        };
        let out = run(4, tm(4, cfg), &c).unwrap();
        assert_eq!(out.ledger.completed_count(), 90, "star = {star}");
        assert!(out.agreement().ok);
    }
}

#[test]
fn crashed_proposer_is_skipped() {
    for star in [false, true] {
        for seed in 0..10 {
            let faults = FaultPlan::none().with(NodeId(1), Behavior::CrashStop, 2_000);
            let policy = ClientPolicy::all(2).with_retry(20_000);
            let c = jitter(seed, closed(3, Some(15)), policy, faults, 10_000_000);
            let out = run(4, tm(4, fast(star)), &c).unwrap();
            let rep = out.agreement();
            assert!(rep.ok, "seed {seed}: {rep:?}");
            assert_eq!(
                out.ledger.completed_count(),
                45,
                "star = {star}, seed {seed}"
            );
        }
    }
}

#[test]
fn equivocating_proposer_cannot_fork() {
    for star in [false, true] {
        for seed in 0..10 {
            let faults = FaultPlan::none().with(NodeId(0), Behavior::Equivocate, 0);
            let policy = ClientPolicy::all(2).with_retry(20_000);
            let c = jitter(seed, closed(3, Some(10)), policy, faults, 10_000_000);
            let out = run(4, tm(4, fast(star)), &c).unwrap();
            let rep = out.agreement();
            assert!(rep.ok, "seed {seed}: {rep:?}");
            assert_eq!(
                out.ledger.completed_count(),
                30,
                "star = {star}, seed {seed}"
            );
        }
    }
}

#[test]
fn weighted_stakes_shift_proposals() {
    let c = config(100, closed(1, Some(12)), ClientPolicy::all(2), 10_000_000);
    let cfg = TendermintConfig {
        stakes: Some(vec![3, 1, 1, 1]),
        ..TendermintConfig::default()
    };
    let out = run(4, tm(4, cfg), &c).unwrap();
    assert!(out.agreement().ok);
    let by_zero = out.chains[0]
        .iter()
        .filter(|b| b.proposer == NodeId(0))
        .count();
    assert_eq!(by_zero, 6);
}
