//! Property suites behind `qlab check`.
//!
//! Every check returns a [`CheckResult`] with a one-line verdict and the
//! measured numbers. Tolerances live next to the code that applies them.

use std::fmt;

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qlab_analysis::{
    canonical_load_params, characteristics, expected_message_count, fit_complexity_exponent, load,
    Protocol,
};
use qlab_core::{ms, quorum_sizes, Authenticator, Command, FaultModel, NodeContext, NodeId, Time};
use qlab_protocols::hotstuff_basic::{BasicHotStuff, BasicHotStuffConfig};
use qlab_protocols::snowball::{decision_block, Color, Snowball, SnowballConfig};
use qlab_simnet::{run, CpuCostModel, LatencyModel, SimConfig, Submission, Workload};

use crate::{
    execute, run_benchmark, sim_config, BenchConfig, BenchError, FaultKind, FaultSpec,
    LatencyProfile, Outcome,
};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{verdict}] {:>2} {}: {}",
            self.id, self.name, self.detail
        )
    }
}

fn verdict(id: u8, name: &'static str, r: Result<(bool, String), BenchError>) -> CheckResult {
    match r {
        Ok((passed, detail)) => CheckResult {
            id,
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            id,
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Names of the suites, indexed by id - 1.
pub const NAMES: [&str; 10] = [
    "load-formulas",
    "critical-path",
    "complexity",
    "safety",
    "liveness",
    "throughput-order",
    "responsiveness",
    "snowball",
    "determinism",
    "load-balance",
];

/// Runs one suite by id (1 to 10).
pub fn run_check(id: u8) -> Option<CheckResult> {
    Some(match id {
        1 => load_formulas(),
        2 => critical_path(),
        3 => complexity(),
        4 => safety(500),
        5 => liveness(100),
        6 => throughput_order(),
        7 => responsiveness(),
        8 => snowball(100),
        9 => determinism(),
        10 => load_balance(),
        _ => return None,
    })
}

pub fn run_all() -> Vec<CheckResult> {
    (1..=10).filter_map(run_check).collect()
}

/// One-way delay used wherever hops are counted.
const UNIT: Time = 1_000;

const BYZANTINE: [Protocol; 5] = [
    Protocol::Pbft,
    Protocol::Tendermint,
    Protocol::TendermintStar,
    Protocol::HotStuff,
    Protocol::Streamlet,
];

/// A quiet cell: zero CPU cost, one command per block.
fn quiet(protocol: Protocol, n: usize) -> BenchConfig {
    BenchConfig {
        protocol,
        n,
        batch: 1,
        cpu: Some(CpuCostModel::ZERO),
        delta: Some(0.0),
        epoch: Some(50.0),
        horizon: 500.0,
        ..BenchConfig::default()
    }
}

fn one_request(at: Time) -> Workload {
    Workload::Scripted(vec![Submission {
        at,
        client: 0,
        command: Command::new(0, 0, b"k".to_vec(), b"v".to_vec()),
        target: None,
    }])
}

fn constant_sim(
    cfg: &BenchConfig,
    delay: Time,
    workload: Workload,
) -> Result<SimConfig, BenchError> {
    let mut s = sim_config(cfg)?;
    s.latency = LatencyModel::Constant(delay);
    s.workload = workload;
    Ok(s)
}

fn single_latency(out: &Outcome) -> Result<Time, BenchError> {
    match out.ledger.latencies().as_slice() {
        [l] => Ok(*l),
        other => Err(BenchError::Config(format!(
            "expected one completed request, got {}",
            other.len()
        ))),
    }
}

fn jitter() -> LatencyProfile {
    LatencyProfile::Jitter { lo: 0.1, hi: 0.9 }
}

pub fn load_formulas() -> CheckResult {
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, want) in [
        (Protocol::Paxos, 4),
        (Protocol::Pbft, 10),
        (Protocol::HotStuff, 5),
    ] {
        match canonical_load_params(p, 9).and_then(|params| load(&params)) {
            Ok(l) => {
                ok &= l == Ratio::from_integer(want);
                parts.push(format!("{p}={l} (want {want})"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{p}: {e}"));
            }
        }
    }
    CheckResult {
        id: 1,
        name: NAMES[0],
        passed: ok,
        detail: format!("N=9: {}", parts.join(", ")),
    }
}

/// Client-submit to client-accept latency of one request, in one-way hops.
pub fn measured_hops(protocol: Protocol, n: usize) -> Result<u64, BenchError> {
    let cfg = quiet(protocol, n);
    let out = execute(&cfg, &constant_sim(&cfg, UNIT, one_request(0))?)?;
    Ok(single_latency(&out)? / UNIT)
}

/// Same as [`measured_hops`] for four-phase (unchained) HotStuff.
pub fn basic_hotstuff_hops(n: usize) -> Result<u64, BenchError> {
    let cfg = quiet(Protocol::HotStuff, n);
    let sim = constant_sim(&cfg, UNIT, one_request(0))?;
    let quorum =
        quorum_sizes(n, FaultModel::Byzantine).map_err(|e| BenchError::Config(e.to_string()))?;
    let ctx = |id| NodeContext {
        id,
        quorum,
        auth: Authenticator::hashed(cfg.seed),
        seed: cfg.seed,
    };
    let out = run(
        n,
        |id| BasicHotStuff::new(ctx(id), BasicHotStuffConfig::default()),
        &sim,
    )?;
    match out.ledger.latencies().as_slice() {
        [l] => Ok(l / UNIT),
        other => Err(BenchError::Config(format!(
            "expected one completed request, got {}",
            other.len()
        ))),
    }
}

pub fn critical_path() -> CheckResult {
    verdict(2, NAMES[1], critical_path_inner())
}

fn critical_path_inner() -> Result<(bool, String), BenchError> {
    let table = |p| {
        characteristics(p)
            .map(|c| c.critical_path_messages as u64)
            .unwrap_or(0)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [
        Protocol::Paxos,
        Protocol::Pbft,
        Protocol::Tendermint,
        Protocol::Streamlet,
    ] {
        let got = measured_hops(p, 4)?;
        ok &= got == table(p);
        parts.push(format!("{p}={got}/{}", table(p)));
    }
    let basic = basic_hotstuff_hops(4)?;
    ok &= basic == table(Protocol::HotStuff);
    parts.push(format!(
        "hotstuff(unchained)={basic}/{}",
        table(Protocol::HotStuff)
    ));
    parts.push(format!(
        "hotstuff(chained)={} (info)",
        measured_hops(Protocol::HotStuff, 4)?
    ));
    let star = measured_hops(Protocol::TendermintStar, 4)?;
    let note = characteristics(Protocol::TendermintStar)
        .ok()
        .and_then(|c| c.mismatch)
        .unwrap_or("");
    parts.push(format!(
        "tendermint*={star}/{} (mismatch: {note})",
        table(Protocol::TendermintStar)
    ));
    Ok((ok, format!("measured/table: {}", parts.join(", "))))
}

/// Envelopes spent on the first instance of one fault-free request, counted
/// the way [`expected_message_count`] counts them.
pub fn instance_messages(protocol: Protocol, n: usize) -> Result<u64, BenchError> {
    let cfg = quiet(protocol, n);
    let out = execute(&cfg, &constant_sim(&cfg, UNIT, one_request(0))?)?;
    let first = out.ledger.instance_messages.get(&1).copied().unwrap_or(0);
    let replies = match protocol {
        Protocol::Pbft | Protocol::Tendermint => out.ledger.reply_messages,
        _ => 0,
    };
    Ok(first + replies)
}

/// View-change bytes of one PBFT leader replacement with a committed
/// checkpoint to carry.
pub fn pbft_view_change_bytes(n: usize) -> Result<u64, BenchError> {
    let mut cfg = quiet(Protocol::Pbft, n);
    cfg.timeout = Some(10.0);
    cfg.faults = vec![FaultSpec {
        node: 0,
        behavior: FaultKind::CrashStop,
        at: 20.0,
        delay: 0.0,
    }];
    let mut sim = constant_sim(&cfg, UNIT, Workload::None)?;
    sim.workload = Workload::Scripted(
        [0, 30]
            .into_iter()
            .enumerate()
            .map(|(i, at)| Submission {
                at: ms(at as f64),
                client: 0,
                command: Command::new(0, i as u64, b"k".to_vec(), b"v".to_vec()),
                target: None,
            })
            .collect(),
    );
    let out = execute(&cfg, &sim)?;
    if out.ledger.completed_count() != 2 {
        return Err(BenchError::Config(format!(
            "view change at n={n} did not complete both requests"
        )));
    }
    Ok(out.ledger.view_change_bytes)
}

pub const COMPLEXITY_NS: [usize; 5] = [4, 7, 10, 13, 16];

pub fn complexity() -> CheckResult {
    verdict(3, NAMES[2], complexity_inner())
}

fn complexity_inner() -> Result<(bool, String), BenchError> {
    let targets = [
        (Protocol::Paxos, 1.0),
        (Protocol::HotStuff, 1.0),
        (Protocol::TendermintStar, 1.0),
        (Protocol::Pbft, 2.0),
        (Protocol::Tendermint, 2.0),
        (Protocol::Streamlet, 3.0),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, want) in targets {
        let mut samples = Vec::new();
        let mut exact = true;
        for n in COMPLEXITY_NS {
            let got = instance_messages(p, n)?;
            exact &= expected_message_count(p, n as u64).ok() == Some(got);
            samples.push((n as f64, got as f64));
        }
        let k = fit_complexity_exponent(&samples).map_err(|e| BenchError::Config(e.to_string()))?;
        ok &= (k - want).abs() <= 0.3;
        let closed = if exact {
            ""
        } else {
            ", differs from closed form"
        };
        parts.push(format!("{p}={k:.2} (want {want}{closed})"));
    }
    let mut vc = Vec::new();
    for n in COMPLEXITY_NS {
        vc.push((n as f64, pbft_view_change_bytes(n)? as f64));
    }
    let k = fit_complexity_exponent(&vc).map_err(|e| BenchError::Config(e.to_string()))?;
    ok &= k >= 2.5;
    parts.push(format!("pbft view-change bytes={k:.2} (want >= 2.5)"));
    Ok((ok, parts.join(", ")))
}

/// Up to `f` faulty nodes with random behaviors and onsets.
pub fn random_faults(seed: u64, n: usize, f: usize, crash_only: bool) -> Vec<FaultSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5afe);
    let count = rng.gen_range(1..=f.max(1)).min(n);
    let kinds = [
        FaultKind::CrashStop,
        FaultKind::SilentLeader,
        FaultKind::Equivocate,
        FaultKind::DelayOutbound,
    ];
    sample(&mut rng, n, count)
        .into_iter()
        .map(|node| FaultSpec {
            node: node as u32,
            behavior: if crash_only {
                FaultKind::CrashStop
            } else {
                kinds[rng.gen_range(0..kinds.len())]
            },
            at: rng.gen_range(0.0..30.0),
            delay: rng.gen_range(1.0..10.0),
        })
        .collect()
}

fn stress_cell(protocol: Protocol, n: usize, seed: u64) -> BenchConfig {
    BenchConfig {
        protocol,
        n,
        clients: 4,
        requests_per_client: Some(25),
        latency: jitter(),
        cpu: Some(CpuCostModel {
            per_message: 5,
            per_byte: 0.0,
        }),
        batch: 4,
        timeout: Some(5.0),
        delta: Some(1.0),
        epoch: Some(3.0),
        seed,
        horizon: 150.0,
        ..BenchConfig::default()
    }
}

/// Runs `seeds` fault mixes per protocol and roster size; returns
/// `(runs, violations, committed)` and the first violating cell, if any.
pub fn safety_sweep(seeds: u64) -> (usize, Vec<String>, u64) {
    let mut cells = Vec::new();
    for p in BYZANTINE {
        for n in [4usize, 7] {
            for seed in 0..seeds {
                let mut c = stress_cell(p, n, seed);
                c.faults = random_faults(seed, n, (n - 1) / 3, false);
                cells.push(c);
            }
        }
    }
    for n in [3usize, 5] {
        for seed in 0..seeds {
            let mut c = stress_cell(Protocol::Paxos, n, seed);
            c.faults = random_faults(seed, n, (n - 1) / 2, true);
            cells.push(c);
        }
    }
    let results: Vec<(String, Result<Outcome, String>)> = cells
        .par_iter()
        .map(|c| {
            let label = format!("{} n={} seed={}", c.protocol, c.n, c.seed);
            let r = sim_config(c)
                .and_then(|s| execute(c, &s))
                .map_err(|e| e.to_string());
            (label, r)
        })
        .collect();
    let mut bad = Vec::new();
    let mut committed = 0;
    for (label, r) in &results {
        match r {
            Ok(out) if out.agreement_ok => committed += out.committed(),
            Ok(_) => bad.push(format!("{label}: fork")),
            Err(e) => bad.push(format!("{label}: {e}")),
        }
    }
    (results.len(), bad, committed)
}

pub fn safety(seeds: u64) -> CheckResult {
    let (runs, bad, committed) = safety_sweep(seeds);
    let mut detail = format!(
        "{runs} runs, {} violations, {committed} commands committed",
        bad.len()
    );
    if let Some(first) = bad.first() {
        detail.push_str(&format!("; first: {first}"));
    }
    CheckResult {
        id: 4,
        name: NAMES[3],
        passed: bad.is_empty() && seeds >= 500,
        detail,
    }
}

/// Blocks committed after crashing whoever proposed last before `crash_at`,
/// proposed by someone else. Returns `(crashed node, new blocks)`.
pub fn blocks_after_leader_crash(
    protocol: Protocol,
    seed: u64,
) -> Result<(NodeId, usize), BenchError> {
    let mut cfg = stress_cell(protocol, 4, seed);
    cfg.requests_per_client = None;
    cfg.horizon = 150.0;
    let crash_at = ms(20.0 + (seed % 10) as f64);
    let mut dry = sim_config(&cfg)?;
    dry.trace = true;
    dry.horizon = crash_at;
    let leader = execute(&cfg, &dry)?
        .proposals
        .last()
        .map(|(_, id)| *id)
        .ok_or_else(|| {
            BenchError::Config(format!(
                "{protocol} seed {seed}: no proposal before the crash"
            ))
        })?;
    cfg.faults = vec![FaultSpec {
        node: leader.0,
        behavior: FaultKind::CrashStop,
        at: crash_at as f64 / 1_000.0,
        delay: 0.0,
    }];
    let out = execute(&cfg, &sim_config(&cfg)?)?;
    if !out.agreement_ok {
        return Err(BenchError::Config(format!("{protocol} seed {seed}: fork")));
    }
    let fresh = out
        .chains
        .iter()
        .zip(&out.commit_times)
        .enumerate()
        .filter(|(i, _)| *i != leader.index())
        .map(|(_, (chain, times))| {
            chain
                .iter()
                .zip(times)
                .filter(|(b, t)| **t > crash_at && b.proposer != leader)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok((leader, fresh))
}

pub fn liveness(seeds: u64) -> CheckResult {
    let protocols = [
        Protocol::Pbft,
        Protocol::Tendermint,
        Protocol::HotStuff,
        Protocol::Streamlet,
    ];
    let jobs: Vec<(Protocol, u64)> = protocols
        .iter()
        .flat_map(|&p| (0..seeds).map(move |s| (p, s)))
        .collect();
    let results: Vec<(Protocol, u64, Result<(NodeId, usize), String>)> = jobs
        .par_iter()
        .map(|&(p, s)| {
            (
                p,
                s,
                blocks_after_leader_crash(p, s).map_err(|e| e.to_string()),
            )
        })
        .collect();
    let mut ok = seeds >= 100;
    let mut parts = Vec::new();
    for p in protocols {
        let mine: Vec<_> = results.iter().filter(|r| r.0 == p).collect();
        let live = mine
            .iter()
            .filter(|r| matches!(r.2, Ok((_, k)) if k > 0))
            .count();
        let least = mine
            .iter()
            .filter_map(|r| r.2.as_ref().ok().map(|x| x.1))
            .min()
            .unwrap_or(0);
        ok &= live == mine.len();
        let mut part = format!("{p} {live}/{} (min {least} new blocks)", mine.len());
        if let Some((_, s, r)) = mine.iter().find(|r| !matches!(r.2, Ok((_, k)) if k > 0)) {
            part.push_str(&format!(" first failure seed {s}: {r:?}"));
        }
        parts.push(part);
    }
    CheckResult {
        id: 5,
        name: NAMES[4],
        passed: ok,
        detail: parts.join(", "),
    }
}

/// The saturated N=16 LAN cell used for the throughput comparison.
pub fn throughput_cell(protocol: Protocol) -> BenchConfig {
    BenchConfig {
        protocol,
        n: 16,
        clients: 90,
        latency: LatencyProfile::Lan,
        horizon: 1_000.0,
        ..BenchConfig::default()
    }
}

pub fn throughput_order() -> CheckResult {
    verdict(6, NAMES[5], throughput_inner())
}

fn throughput_inner() -> Result<(bool, String), BenchError> {
    let ps = [
        Protocol::Paxos,
        Protocol::Pbft,
        Protocol::Tendermint,
        Protocol::TendermintStar,
        Protocol::HotStuff,
    ];
    let reports: Vec<_> = ps
        .par_iter()
        .map(|&p| run_benchmark(&throughput_cell(p)))
        .collect();
    let mut tput = std::collections::BTreeMap::new();
    for (p, r) in ps.iter().zip(reports) {
        tput.insert(*p, r?.throughput);
    }
    let t = |p| tput[&p];
    let rules = [
        ("hotstuff>pbft", t(Protocol::HotStuff) > t(Protocol::Pbft)),
        (
            "pbft>tendermint",
            t(Protocol::Pbft) > t(Protocol::Tendermint),
        ),
        ("paxos>pbft", t(Protocol::Paxos) > t(Protocol::Pbft)),
        (
            "tendermint*>=2x",
            t(Protocol::TendermintStar) >= 2.0 * t(Protocol::Tendermint),
        ),
        (
            "hotstuff within 2x of paxos",
            t(Protocol::HotStuff) * 2.0 >= t(Protocol::Paxos)
                && t(Protocol::Paxos) * 2.0 >= t(Protocol::HotStuff),
        ),
    ];
    let ok = rules.iter().all(|r| r.1);
    let nums: Vec<String> = ps.iter().map(|p| format!("{p}={:.0}", t(*p))).collect();
    let failed: Vec<&str> = rules.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let mut detail = format!("tx/s at N=16: {}", nums.join(", "));
    if !failed.is_empty() {
        detail.push_str(&format!("; violated: {}", failed.join(", ")));
    }
    Ok((ok, detail))
}

fn latency_with(
    protocol: Protocol,
    delay: Time,
    timeout: f64,
    delta: f64,
) -> Result<Time, BenchError> {
    let mut cfg = quiet(protocol, 4);
    cfg.timeout = Some(timeout);
    cfg.delta = Some(delta);
    single_latency(&execute(&cfg, &constant_sim(&cfg, delay, one_request(0))?)?)
}

pub fn responsiveness() -> CheckResult {
    verdict(7, NAMES[6], responsiveness_inner())
}

fn responsiveness_inner() -> Result<(bool, String), BenchError> {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [Protocol::HotStuff, Protocol::Paxos] {
        let base = latency_with(p, UNIT, 40.0, 0.0)?;
        let slow_timer = latency_with(p, UNIT, 80.0, 0.0)?;
        let double_delay = latency_with(p, 2 * UNIT, 40.0, 0.0)?;
        let pure = base == slow_timer && double_delay == 2 * base;
        ok &= pure;
        parts.push(format!(
            "{p}: {base}us, timeout x2 {slow_timer}us, delay x2 {double_delay}us"
        ));
    }
    for delta in [2.0, 10.0] {
        let l = latency_with(Protocol::Tendermint, UNIT, 40.0, delta)?;
        ok &= l >= ms(delta);
        parts.push(format!("tendermint delta {delta}ms: {l}us"));
    }
    let mut cfg = quiet(Protocol::Streamlet, 4);
    cfg.epoch = Some(5.0);
    cfg.batch = 1;
    cfg.clients = 8;
    cfg.horizon = 200.0;
    let mut sim = sim_config(&cfg)?;
    sim.latency = LatencyModel::Constant(UNIT / 4);
    let out = execute(&cfg, &sim)?;
    let chain = out
        .chains
        .iter()
        .max_by_key(|c| c.len())
        .cloned()
        .unwrap_or_default();
    let epochs = (cfg.horizon / 5.0).ceil() as usize;
    let mut views: Vec<u64> = chain.iter().map(|b| b.view).collect();
    views.dedup();
    let one_per_epoch = views.len() == chain.len() && chain.len() <= epochs;
    ok &= one_per_epoch && !chain.is_empty();
    parts.push(format!(
        "streamlet: {} blocks in {epochs} epochs",
        chain.len()
    ));
    Ok((ok, parts.join(", ")))
}

/// Decided colors per node (`None` when undecided) for one Snowball run.
pub fn snowball_run(
    n: usize,
    red: usize,
    seed: u64,
) -> Result<(Vec<Option<Color>>, u64), BenchError> {
    let quorum =
        quorum_sizes(n, FaultModel::Crash).map_err(|e| BenchError::Config(e.to_string()))?;
    let cfg = SnowballConfig {
        k: 10,
        alpha: 0.8,
        beta: 15,
        ..SnowballConfig::default()
    };
    let mut sim = SimConfig::new(
        LatencyModel::UniformJitter { lo: 100, hi: 900 },
        ms(60_000.0),
    );
    sim.seed = seed;
    let out = run(
        n,
        |id: NodeId| {
            let initial = if id.index() < red {
                Color::Red
            } else {
                Color::Blue
            };
            let ctx = NodeContext {
                id,
                quorum,
                auth: Authenticator::hashed(seed),
                seed,
            };
            Snowball::new(
                ctx,
                SnowballConfig {
                    initial: Some(initial),
                    ..cfg.clone()
                },
            )
            .expect("valid parameters")
        },
        &sim,
    )?;
    let red_block = decision_block(Color::Red);
    let colors = out
        .chains
        .iter()
        .map(|c| {
            c.first().map(|b| {
                if *b == red_block {
                    Color::Red
                } else {
                    Color::Blue
                }
            })
        })
        .collect();
    let flips = out.ledger.nodes.iter().map(|x| x.engine.color_flips).sum();
    Ok((colors, flips))
}

pub fn snowball(seeds: u64) -> CheckResult {
    verdict(8, NAMES[7], snowball_inner(seeds))
}

fn snowball_inner(seeds: u64) -> Result<(bool, String), BenchError> {
    let n = 50;
    let split: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|s| snowball_run(n, 30, s))
        .collect();
    let mut unanimous = 0;
    for r in split {
        let (colors, _) = r?;
        if colors[0].is_some() && colors.iter().all(|c| *c == colors[0]) {
            unanimous += 1;
        }
    }
    let same: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|s| snowball_run(n, n, s))
        .collect();
    let mut clean = 0;
    for r in same {
        let (colors, flips) = r?;
        if flips == 0 && colors.iter().all(|c| *c == Some(Color::Red)) {
            clean += 1;
        }
    }
    let need = (seeds * 99).div_ceil(100);
    let ok = seeds >= 100 && unanimous >= need && clean == seeds;
    Ok((ok, format!("60/40 split unanimous {unanimous}/{seeds}, identical start without flips {clean}/{seeds}")))
}

pub fn determinism() -> CheckResult {
    verdict(9, NAMES[8], determinism_inner())
}

fn csv_line(cfg: &BenchConfig) -> Result<String, BenchError> {
    let mut buf = Vec::new();
    crate::write_csv(&mut buf, &[run_benchmark(cfg)?])?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn determinism_inner() -> Result<(bool, String), BenchError> {
    let mut cells = Vec::new();
    for p in [
        Protocol::Paxos,
        Protocol::Pbft,
        Protocol::Tendermint,
        Protocol::HotStuff,
        Protocol::Streamlet,
    ] {
        let mut c = stress_cell(p, 4, 7);
        c.requests_per_client = None;
        c.faults = vec![FaultSpec {
            node: 1,
            behavior: FaultKind::CrashStop,
            at: 20.0,
            delay: 0.0,
        }];
        cells.push(c);
    }
    cells.push(BenchConfig {
        protocol: Protocol::Snowball,
        n: 20,
        latency: jitter(),
        horizon: 200.0,
        ..BenchConfig::default()
    });
    let mut same = 0;
    for c in &cells {
        if csv_line(c)? == csv_line(c)? {
            same += 1;
        }
    }
    Ok((
        same == cells.len(),
        format!("{same}/{} cells byte-identical on rerun", cells.len()),
    ))
}

/// Per-node busy time of a fault-free, saturated N=8 LAN cell, and the
/// number of instances it ran.
pub fn busy_times(protocol: Protocol) -> Result<(Vec<Time>, usize), BenchError> {
    let cfg = BenchConfig {
        protocol,
        n: 8,
        clients: 90,
        horizon: 100.0,
        ..BenchConfig::default()
    };
    let out = execute(&cfg, &sim_config(&cfg)?)?;
    let busy = out.ledger.nodes.iter().map(|c| c.busy_time).collect();
    Ok((busy, out.ledger.instance_messages.len()))
}

pub fn load_balance() -> CheckResult {
    verdict(10, NAMES[9], load_balance_inner())
}

fn load_balance_inner() -> Result<(bool, String), BenchError> {
    let (hs, views) = busy_times(Protocol::HotStuff)?;
    let max = *hs.iter().max().unwrap_or(&0) as f64;
    let min = (*hs.iter().min().unwrap_or(&0)).max(1) as f64;
    let spread = max / min;
    let (pbft, _) = busy_times(Protocol::Pbft)?;
    let mut followers: Vec<Time> = pbft[1..].to_vec();
    followers.sort_unstable();
    let median = followers[followers.len() / 2].max(1) as f64;
    let hotspot = pbft[0] as f64 / median;
    let ok = views >= 64 && spread <= 2.0 && hotspot >= 3.0;
    Ok((
        ok,
        format!("hotstuff {views} views max/min busy {spread:.2} (want <= 2), pbft leader/median follower {hotspot:.2} (want >= 3)"),
    ))
}
