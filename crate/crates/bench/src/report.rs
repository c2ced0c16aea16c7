use std::io::Write;

use serde::{Deserialize, Serialize};

use qlab_analysis::Protocol;
use qlab_core::{MetricsLedger, Time};

use crate::BenchError;

pub const CSV_HEADER: [&str; 13] = [
    "protocol",
    "n",
    "clients",
    "seed",
    "throughput",
    "p50",
    "p95",
    "p99",
    "mean_latency",
    "msgs_per_instance",
    "bytes_per_instance",
    "max_node_busy",
    "agreement_ok",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Milliseconds spent handling envelopes.
    pub busy: f64,
}

/// Outcome of one benchmark cell. Latencies and busy times are in ms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub protocol: Protocol,
    pub n: usize,
    pub clients: u32,
    pub seed: u64,
    pub horizon: f64,
    /// Client commands committed per simulated second.
    pub throughput: f64,
    /// Client commands in the longest honest chain.
    pub committed: u64,
    /// Requests the clients accepted.
    pub completed: u64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean_latency: f64,
    pub msgs_per_instance: f64,
    pub bytes_per_instance: f64,
    pub view_change_messages: u64,
    pub view_change_bytes: u64,
    pub max_node_busy: f64,
    pub agreement_ok: bool,
    pub nodes: Vec<NodeRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub protocol: String,
    pub n: usize,
    pub clients: u32,
    pub seed: u64,
    pub throughput: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean_latency: f64,
    pub msgs_per_instance: f64,
    pub bytes_per_instance: f64,
    pub max_node_busy: f64,
    pub agreement_ok: bool,
}

fn to_ms(t: Time) -> f64 {
    t as f64 / 1_000.0
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[Time], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    to_ms(sorted[rank.min(sorted.len()) - 1])
}

fn mean(values: impl Iterator<Item = u64>) -> f64 {
    let (sum, count) = values.fold((0u128, 0u64), |(s, c), v| (s + v as u128, c + 1));
    if count == 0 {
        0.0
    } else {
        sum as f64 / count as f64
    }
}

impl RunReport {
    pub(crate) fn from_ledger(
        protocol: Protocol,
        clients: u32,
        seed: u64,
        horizon: Time,
        ledger: &MetricsLedger,
        committed: u64,
        agreement_ok: bool,
    ) -> Self {
        let lat = ledger.latencies();
        Self {
            protocol,
            n: ledger.nodes.len(),
            clients,
            seed,
            horizon: to_ms(horizon),
            throughput: committed as f64 / (horizon as f64 / 1e6),
            committed,
            completed: ledger.completed_count(),
            p50: percentile(&lat, 50.0),
            p95: percentile(&lat, 95.0),
            p99: percentile(&lat, 99.0),
            mean_latency: mean(lat.iter().copied()) / 1_000.0,
            msgs_per_instance: mean(ledger.instance_messages.values().copied()),
            bytes_per_instance: mean(ledger.instance_bytes.values().copied()),
            view_change_messages: ledger.view_change_messages,
            view_change_bytes: ledger.view_change_bytes,
            max_node_busy: to_ms(ledger.max_busy()),
            agreement_ok,
            nodes: ledger
                .nodes
                .iter()
                .map(|c| NodeRow {
                    messages_sent: c.messages_sent,
                    messages_received: c.messages_received,
                    bytes_sent: c.bytes_sent,
                    bytes_received: c.bytes_received,
                    busy: to_ms(c.busy_time),
                })
                .collect(),
        }
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            protocol: self.protocol.to_string(),
            n: self.n,
            clients: self.clients,
            seed: self.seed,
            throughput: self.throughput,
            p50: self.p50,
            p95: self.p95,
            p99: self.p99,
            mean_latency: self.mean_latency,
            msgs_per_instance: self.msgs_per_instance,
            bytes_per_instance: self.bytes_per_instance,
            max_node_busy: self.max_node_busy,
            agreement_ok: self.agreement_ok,
        }
    }
}

/// Writes the header and one row per report.
pub fn write_csv<W: Write>(w: W, reports: &[RunReport]) -> Result<(), BenchError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        out.serialize(r.csv_row())?;
    }
    out.flush().map_err(|e| BenchError::Io("csv".into(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let d: Vec<Time> = (1..=100).map(|x| x * 1_000).collect();
        assert_eq!(percentile(&d, 50.0), 50.0);
        assert_eq!(percentile(&d, 99.0), 99.0);
        assert_eq!(percentile(&[7_000], 95.0), 7.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn header_matches_row_fields() {
        let row = CsvRow {
            protocol: "pbft".into(),
            n: 4,
            clients: 1,
            seed: 0,
            throughput: 0.0,
            p50: 0.0,
            p95: 0.0,
            p99: 0.0,
            mean_latency: 0.0,
            msgs_per_instance: 0.0,
            bytes_per_instance: 0.0,
            max_node_busy: 0.0,
            agreement_ok: true,
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }
}
