use std::collections::BTreeMap;
use std::fs::File;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qlab_analysis::{
    canonical_load_params, capacity, characteristics, expected_message_count,
    fit_complexity_exponent, latency_estimate, load, Protocol,
};
use qlab_bench::{
    checks, run_benchmark, sweep, write_csv, BenchConfig, CsvRow, LatencyProfile, RunReport,
    SweepSpec,
};

#[derive(Parser)]
#[command(name = "qlab", about = "Consensus protocol workbench")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one cell and print its report.
    Run(CellArgs),
    /// Simulate a grid of cells and write one CSV row per cell.
    Sweep {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<Protocol>,
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long = "client-counts", value_delimiter = ',')]
        client_counts: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Load, latency and complexity calculators.
    Analyze {
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long, default_value_t = 9)]
        n: u64,
        /// One-way client delay added to latency estimates.
        #[arg(long, default_value_t = 1)]
        client_delay: u64,
        #[arg(long, default_value_t = 0)]
        delta: u64,
        /// Fit message complexity exponents from a sweep CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run property suites by id (all when none given).
    Check { ids: Vec<u8> },
}

#[derive(Args, Clone, Default)]
struct CellArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    protocol: Option<Protocol>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    clients: Option<u32>,
    #[arg(long)]
    payload_bytes: Option<usize>,
    /// `lan`, `wan`, or a constant one-way delay in ms.
    #[arg(long)]
    latency: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epoch: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated ms.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

impl CellArgs {
    fn config(&self) -> Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(p) => BenchConfig::load(p)?,
            None => BenchConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            protocol,
            n,
            clients,
            payload_bytes,
            batch,
            window,
            seed,
            horizon
        );
        if self.timeout.is_some() {
            cfg.timeout = self.timeout;
        }
        if self.delta.is_some() {
            cfg.delta = self.delta;
        }
        if self.epoch.is_some() {
            cfg.epoch = self.epoch;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        if let Some(l) = &self.latency {
            cfg.latency = match l.as_str() {
                "lan" => LatencyProfile::Lan,
                "wan" => LatencyProfile::Wan,
                d => LatencyProfile::Constant(
                    d.parse().with_context(|| format!("bad latency {d:?}"))?,
                ),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit_csv(path: Option<&PathBuf>, reports: &[RunReport]) -> Result<()> {
    match path {
        Some(p) => write_csv(
            File::create(p).with_context(|| p.display().to_string())?,
            reports,
        )?,
        None => write_csv(io::stdout().lock(), reports)?,
    }
    Ok(())
}

fn print_report(r: &RunReport) {
    println!(
        "{} n={} clients={} seed={}",
        r.protocol, r.n, r.clients, r.seed
    );
    println!(
        "  throughput   {:.1} tx/s ({} committed, {} accepted)",
        r.throughput, r.committed, r.completed
    );
    println!(
        "  latency ms   p50 {:.3}  p95 {:.3}  p99 {:.3}  mean {:.3}",
        r.p50, r.p95, r.p99, r.mean_latency
    );
    println!(
        "  per instance {:.1} msgs, {:.0} bytes",
        r.msgs_per_instance, r.bytes_per_instance
    );
    println!(
        "  view change  {} msgs, {} bytes",
        r.view_change_messages, r.view_change_bytes
    );
    println!(
        "  agreement    {}",
        if r.agreement_ok { "ok" } else { "VIOLATED" }
    );
    println!("  node   sent  recv  bytes_out  bytes_in  busy_ms");
    for (i, node) in r.nodes.iter().enumerate() {
        println!(
            "  {i:>4} {:>6} {:>5} {:>10} {:>9} {:>8.3}",
            node.messages_sent,
            node.messages_received,
            node.bytes_sent,
            node.bytes_received,
            node.busy
        );
    }
}

fn analyze(
    protocol: Option<Protocol>,
    n: u64,
    client_delay: u64,
    delta: u64,
    csv: Option<PathBuf>,
) -> Result<()> {
    if let Some(path) = csv {
        let mut samples: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        let mut rd = csv::Reader::from_path(&path).with_context(|| path.display().to_string())?;
        for row in rd.deserialize() {
            let row: CsvRow = row?;
            if row.msgs_per_instance > 0.0 {
                samples
                    .entry(row.protocol)
                    .or_default()
                    .push((row.n as f64, row.msgs_per_instance));
            }
        }
        for (p, s) in samples {
            match fit_complexity_exponent(&s) {
                Ok(k) => println!("{p}: messages ~ N^{k:.2}"),
                Err(e) => println!("{p}: {e}"),
            }
        }
        return Ok(());
    }
    let protocols = match protocol {
        Some(p) => vec![p],
        None => Protocol::ALL.to_vec(),
    };
    for p in protocols {
        println!("{p} (n = {n})");
        match canonical_load_params(p, n).and_then(|lp| Ok((load(&lp)?, capacity(&lp)?))) {
            Ok((l, c)) => println!("  load {l}, capacity {c}"),
            Err(e) => println!("  load: {e}"),
        }
        match expected_message_count(p, n) {
            Ok(m) => println!("  messages per instance {m}"),
            Err(e) => println!("  messages: {e}"),
        }
        if let Ok(c) = characteristics(p) {
            let hops = c.critical_path_messages as u64;
            println!(
                "  critical path {hops}, latency estimate {}",
                latency_estimate(hops, client_delay, delta)
            );
            if let Some(m) = c.mismatch {
                println!("  note: {m}");
            }
        }
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run(args) => {
            let cfg = args.config()?;
            let report = run_benchmark(&cfg)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_report(&report);
            }
            if let Some(p) = &cfg.output {
                emit_csv(Some(p), std::slice::from_ref(&report))?;
            }
            if !report.agreement_ok {
                eprintln!("agreement violated");
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Sweep {
            cell,
            protocols,
            ns,
            client_counts,
            seeds,
        } => {
            let base = cell.config()?;
            let spec = SweepSpec {
                protocols: if protocols.is_empty() {
                    vec![base.protocol]
                } else {
                    protocols
                },
                ns: if ns.is_empty() { vec![base.n] } else { ns },
                clients: if client_counts.is_empty() {
                    vec![base.clients]
                } else {
                    client_counts
                },
                seeds: if seeds.is_empty() {
                    vec![base.seed]
                } else {
                    seeds
                },
                base: base.clone(),
            };
            let cells = spec.cells();
            if cells.is_empty() {
                bail!("empty sweep");
            }
            let outcome = sweep(&cells);
            for (c, e) in &outcome.failures {
                eprintln!(
                    "{} n={} clients={} seed={}: {e}",
                    c.protocol, c.n, c.clients, c.seed
                );
            }
            emit_csv(base.output.as_ref(), &outcome.reports)?;
            if outcome.reports.iter().any(|r| !r.agreement_ok) {
                eprintln!("agreement violated");
                return Ok(ExitCode::from(2));
            }
            if !outcome.failures.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Analyze {
            protocol,
            n,
            client_delay,
            delta,
            csv,
        } => analyze(protocol, n, client_delay, delta, csv)?,
        Cmd::Check { ids } => {
            let ids = if ids.is_empty() {
                (1..=10).collect()
            } else {
                ids
            };
            let mut failed = false;
            for id in ids {
                let Some(r) = checks::run_check(id) else {
                    bail!("no check with id {id}")
                };
                println!("{r}");
                failed |= !r.passed;
            }
            if failed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
