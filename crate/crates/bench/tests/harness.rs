use qlab_analysis::Protocol;
use qlab_bench::{
    run_benchmark, sweep, write_csv, BenchConfig, FaultKind, FaultSpec, LatencyProfile, SweepSpec,
    CSV_HEADER,
};

fn small(protocol: Protocol) -> BenchConfig {
    BenchConfig {
        protocol,
        n: 4,
        clients: 8,
        horizon: 50.0,
        ..BenchConfig::default()
    }
}

fn csv_text(cfg: &BenchConfig) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, &[run_benchmark(cfg).unwrap()]).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn every_protocol_runs_and_agrees() {
    for p in Protocol::ALL {
        let mut cfg = small(p);
        cfg.snowball.k = 3;
        let r = run_benchmark(&cfg).unwrap();
        assert!(r.agreement_ok, "{p}");
        assert!(r.completed > 0, "{p}");
        assert_eq!(r.nodes.len(), 4);
        if p != Protocol::Snowball {
            assert!(r.throughput > 0.0, "{p}");
        }
    }
}

#[test]
fn throughput_times_horizon_is_committed() {
    for p in [Protocol::Paxos, Protocol::Pbft, Protocol::HotStuff] {
        let cfg = small(p);
        let r = run_benchmark(&cfg).unwrap();
        assert!(
            (r.throughput * cfg.horizon / 1_000.0 - r.committed as f64).abs() < 1e-6,
            "{p}"
        );
    }
}

#[test]
fn zero_clients_give_zero_throughput() {
    let r = run_benchmark(&BenchConfig {
        clients: 0,
        ..small(Protocol::Pbft)
    })
    .unwrap();
    assert_eq!(r.throughput, 0.0);
    assert_eq!(r.completed, 0);
    assert_eq!((r.p50, r.p99, r.mean_latency), (0.0, 0.0, 0.0));
}

#[test]
fn rerun_is_byte_identical() {
    let mut cfg = small(Protocol::Tendermint);
    cfg.latency = LatencyProfile::Jitter { lo: 0.1, hi: 0.9 };
    cfg.faults = vec![FaultSpec {
        node: 2,
        behavior: FaultKind::Equivocate,
        at: 5.0,
        delay: 0.0,
    }];
    assert_eq!(csv_text(&cfg), csv_text(&cfg));
    let other = BenchConfig {
        seed: 2,
        ..cfg.clone()
    };
    assert_ne!(csv_text(&cfg), csv_text(&other));
}

#[test]
fn paxos_beats_pbft_at_four_nodes() {
    let paxos = run_benchmark(&BenchConfig {
        clients: 90,
        horizon: 200.0,
        ..small(Protocol::Paxos)
    })
    .unwrap();
    let pbft = run_benchmark(&BenchConfig {
        clients: 90,
        horizon: 200.0,
        ..small(Protocol::Pbft)
    })
    .unwrap();
    assert!(
        paxos.throughput > pbft.throughput,
        "{} vs {}",
        paxos.throughput,
        pbft.throughput
    );
}

#[test]
fn star_tendermint_doubles_throughput_at_eight() {
    let cell = |p| BenchConfig {
        n: 8,
        clients: 90,
        horizon: 200.0,
        ..small(p)
    };
    let plain = run_benchmark(&cell(Protocol::Tendermint)).unwrap();
    let star = run_benchmark(&cell(Protocol::TendermintStar)).unwrap();
    assert!(
        star.throughput >= 2.0 * plain.throughput,
        "{} vs {}",
        star.throughput,
        plain.throughput
    );
}

#[test]
fn sweep_keeps_cell_order_and_matches_single_runs() {
    let spec = SweepSpec {
        base: small(Protocol::Pbft),
        protocols: vec![Protocol::Pbft, Protocol::HotStuff],
        ns: vec![4, 7],
        clients: vec![4],
        seeds: vec![1, 2],
    };
    let cells = spec.cells();
    assert_eq!(cells.len(), 8);
    let out = sweep(&cells);
    assert!(out.failures.is_empty());
    let keys: Vec<_> = out
        .reports
        .iter()
        .map(|r| (r.protocol, r.n, r.seed))
        .collect();
    let want: Vec<_> = cells.iter().map(|c| (c.protocol, c.n, c.seed)).collect();
    assert_eq!(keys, want);
    assert_eq!(out.reports[3], run_benchmark(&cells[3]).unwrap());
}

#[test]
fn sweep_records_failures_and_continues() {
    let good = small(Protocol::Paxos);
    let bad = BenchConfig {
        n: 3,
        ..small(Protocol::Pbft)
    };
    let out = sweep(&[bad, good]);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.reports.len(), 1);
}

#[test]
fn hotstuff_beats_pbft_across_roster_sizes() {
    // at n = 4 the all-to-all rounds are still cheap and PBFT leads
    for n in [8usize, 12, 16, 20] {
        let cell = |p| BenchConfig {
            n,
            clients: 90,
            horizon: 200.0,
            ..small(p)
        };
        let hs = run_benchmark(&cell(Protocol::HotStuff)).unwrap();
        let pbft = run_benchmark(&cell(Protocol::Pbft)).unwrap();
        assert!(
            hs.throughput >= pbft.throughput,
            "n = {n}: {} vs {}",
            hs.throughput,
            pbft.throughput
        );
    }
}

#[test]
fn pbft_latency_grows_faster_than_hotstuff() {
    let lat = |p, n| {
        run_benchmark(&BenchConfig {
            n,
            clients: 90,
            horizon: 200.0,
            ..small(p)
        })
        .unwrap()
        .mean_latency
    };
    let pbft = lat(Protocol::Pbft, 16) - lat(Protocol::Pbft, 4);
    let hs = lat(Protocol::HotStuff, 16) - lat(Protocol::HotStuff, 4);
    assert!(pbft > hs, "pbft +{pbft:.3} ms, hotstuff +{hs:.3} ms");
}

#[test]
fn csv_header_is_fixed() {
    let text = csv_text(&small(Protocol::Paxos));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert!(lines.next().unwrap().starts_with("paxos,4,8,1,"));
    assert!(lines.next().is_none());
}
