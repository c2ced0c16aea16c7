mod support;

use qlab_core::{Command, FaultModel, NodeId};
use qlab_protocols::snowball::{decision_block, Color, Mode, Snowball, SnowballConfig};
use qlab_simnet::{
    run, Behavior, ClientPolicy, FaultPlan, LatencyModel, SimConfig, SimOutput, Submission,
    Workload,
};
use support::*;

fn split(n: usize, red: usize, cfg: SnowballConfig) -> impl FnMut(NodeId) -> Snowball {
    move |id| {
        let initial = if id.index() < red {
            Color::Red
        } else {
            Color::Blue
        };
        let cfg = SnowballConfig {
            initial: Some(initial),
            ..cfg.clone()
        };
        Snowball::new(ctx(id, n, FaultModel::Crash, 1 + id.0 as u64), cfg).unwrap()
    }
}

fn sim(seed: u64) -> SimConfig {
    let mut c = SimConfig::new(LatencyModel::UniformJitter { lo: 100, hi: 900 }, 60_000_000);
    c.seed = seed;
    c
}

fn decided<M>(out: &SimOutput<M>) -> Vec<Option<Color>> {
    let red = decision_block(Color::Red);
    out.chains
        .iter()
        .map(|c| match c.first() {
            Some(b) if *b == red => Some(Color::Red),
            Some(_) => Some(Color::Blue),
            None => None,
        })
        .collect()
}

#[test]
fn sixty_forty_split_converges() {
    let n = 50;
    let mut unanimous = 0;
    for seed in 0..100 {
        let cfg = SnowballConfig {
            k: 10,
            alpha: 0.8,
            beta: 15,
            ..SnowballConfig::default()
        };
        let out = run(n, split(n, 30, cfg), &sim(seed)).unwrap();
        assert!(out.agreement().ok, "seed {seed}");
        let d = decided(&out);
        if d.iter().all(|c| c.is_some() && *c == d[0]) {
            unanimous += 1;
        }
    }
    assert!(unanimous >= 99, "{unanimous} of 100");
}

#[test]
fn unanimous_start_never_flips() {
    let n = 20;
    for seed in 0..20 {
        let cfg = SnowballConfig {
            k: 5,
            ..SnowballConfig::default()
        };
        let out = run(n, split(n, n, cfg), &sim(seed)).unwrap();
        assert!(decided(&out).iter().all(|c| *c == Some(Color::Red)));
        assert!(out.ledger.nodes.iter().all(|x| x.engine.color_flips == 0));
    }
}

#[test]
fn snowflake_and_slush_decide() {
    let n = 20;
    for mode in [Mode::Snowflake, Mode::Slush] {
        let cfg = SnowballConfig {
            mode,
            k: 5,
            alpha: 0.8,
            beta: 10,
            m: 30,
            ..SnowballConfig::default()
        };
        let out = run(n, split(n, 16, cfg), &sim(3)).unwrap();
        let d = decided(&out);
        assert!(d.iter().all(|c| c.is_some()), "{mode:?}");
        if mode == Mode::Snowflake {
            assert!(d.iter().all(|c| *c == d[0]));
        }
    }
}

#[test]
fn each_round_costs_two_k_messages() {
    let n = 12;
    let k = 4;
    let cfg = SnowballConfig {
        k,
        beta: 5,
        ..SnowballConfig::default()
    };
    let out = run(n, split(n, n, cfg), &sim(1)).unwrap();
    // unanimous start: every round succeeds, so each node runs exactly beta rounds
    let total: u64 = out.ledger.instance_messages.values().sum();
    assert_eq!(total as usize, n * 5 * 2 * k);
}

#[test]
fn client_request_colors_the_network() {
    let n = 10;
    let command = Command::new(0, 0, b"k".to_vec(), vec![1]);
    let workload = Workload::Scripted(vec![Submission {
        at: 0,
        client: 0,
        command,
        target: Some(NodeId(3)),
    }]);
    let mut c = config(
        100,
        workload,
        ClientPolicy {
            accept_on_commit: true,
            ..ClientPolicy::all(1)
        },
        60_000_000,
    );
    c.seed = 4;
    let cfg = SnowballConfig {
        k: 4,
        beta: 8,
        ..SnowballConfig::default()
    };
    let out = run(
        n,
        move |id| Snowball::new(ctx(id, n, FaultModel::Crash, 1), cfg.clone()).unwrap(),
        &c,
    )
    .unwrap();
    assert!(decided(&out).iter().all(|c| *c == Some(Color::Blue)));
    assert_eq!(out.ledger.completed_count(), 1);
}

#[test]
fn crashed_peers_time_out_and_retry() {
    let n = 20;
    let faults = FaultPlan::none()
        .with(NodeId(0), Behavior::CrashStop, 0)
        .with(NodeId(1), Behavior::CrashStop, 0);
    let mut c = sim(9);
    c.faults = faults;
    let cfg = SnowballConfig {
        k: 5,
        alpha: 0.6,
        beta: 10,
        query_timeout: 5_000,
        ..SnowballConfig::default()
    };
    let out = run(n, split(n, 14, cfg), &c).unwrap();
    let d = decided(&out);
    assert!(d[2..].iter().all(|c| c.is_some() && *c == d[2]));
    let timeouts: u64 = out.ledger.nodes.iter().map(|x| x.engine.timeouts).sum();
    assert!(timeouts > 0);
}
