use std::collections::BTreeSet;

use crate::{AnalysisError, Protocol, Result};

/// Closed-form node-to-node envelope count for one fault-free consensus
/// instance.
///
/// * Paxos: accept, ack and commit, `3(n-1)`.
/// * PBFT and Tendermint: proposal, two all-to-all vote rounds, and the
///   `f+1` client replies, `(n-1) + 2n(n-1) + (f+1)`.
/// * Tendermint*: proposal, two vote rounds to the proposer and two relayed
///   aggregates, `3(n-1) + 2(n-1)`.
/// * HotStuff (chained, per view): proposal and votes to the next leader,
///   `2(n-1)`.
/// * Streamlet (per epoch): proposal, every vote to every peer, and each
///   node echoing each other node's vote once to the `n-2` remaining peers,
///   `(n-1) + n(n-1) + n(n-1)(n-2)`.
pub fn expected_message_count(protocol: Protocol, n: u64) -> Result<u64> {
    let min = if protocol.is_byzantine() { 4 } else { 1 };
    if n < min {
        return Err(AnalysisError::InvalidParams(format!(
            "{protocol} needs n >= {min}"
        )));
    }
    let f = (n - 1) / 3;
    Ok(match protocol {
        Protocol::Paxos => 3 * (n - 1),
        Protocol::Pbft | Protocol::Tendermint => (n - 1) + 2 * n * (n - 1) + (f + 1),
        Protocol::TendermintStar => 3 * (n - 1) + 2 * (n - 1),
        Protocol::HotStuff => 2 * (n - 1),
        Protocol::Streamlet => (n - 1) + n * (n - 1) + n * (n - 1) * (n - 2),
        Protocol::Snowball => {
            return Err(AnalysisError::NotModeled(
                protocol,
                "sampling rounds are random",
            ))
        }
    })
}

/// Least-squares slope of `ln(y)` against `ln(n)`.
pub fn fit_complexity_exponent(samples: &[(f64, f64)]) -> Result<f64> {
    if samples
        .iter()
        .any(|&(n, y)| n <= 0.0 || y <= 0.0 || !n.is_finite() || !y.is_finite())
    {
        return Err(AnalysisError::NonPositive);
    }
    let distinct: BTreeSet<u64> = samples.iter().map(|(n, _)| n.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(AnalysisError::TooFewSamples(distinct.len()));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(n, y)| (n.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(expected_message_count(Protocol::Pbft, 4).unwrap(), 29);
        assert_eq!(expected_message_count(Protocol::Tendermint, 4).unwrap(), 29);
        assert_eq!(expected_message_count(Protocol::HotStuff, 4).unwrap(), 6);
        assert_eq!(expected_message_count(Protocol::Paxos, 3).unwrap(), 6);
        assert_eq!(
            expected_message_count(Protocol::TendermintStar, 4).unwrap(),
            15
        );
        assert_eq!(
            expected_message_count(Protocol::Streamlet, 4).unwrap(),
            3 + 12 + 24
        );
        assert!(expected_message_count(Protocol::Pbft, 3).is_err());
        assert!(expected_message_count(Protocol::Snowball, 10).is_err());
    }

    #[test]
    fn exact_quadratic_fit() {
        let e = fit_complexity_exponent(&[(4.0, 16.0), (8.0, 64.0), (16.0, 256.0)]).unwrap();
        assert!((e - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            fit_complexity_exponent(&[(4.0, 1.0), (4.0, 2.0), (8.0, 3.0)]),
            Err(AnalysisError::TooFewSamples(2))
        );
        assert_eq!(
            fit_complexity_exponent(&[(4.0, 0.0), (5.0, 2.0), (8.0, 3.0)]),
            Err(AnalysisError::NonPositive)
        );
    }

    #[test]
    fn formula_exponents() {
        let ns = [4u64, 7, 10, 13, 16];
        let fit = |p| {
            let s: Vec<(f64, f64)> = ns
                .iter()
                .map(|&n| (n as f64, expected_message_count(p, n).unwrap() as f64))
                .collect();
            fit_complexity_exponent(&s).unwrap()
        };
        assert!((fit(Protocol::Paxos) - 1.0).abs() < 0.3);
        assert!((fit(Protocol::Pbft) - 2.0).abs() < 0.3);
        assert!((fit(Protocol::Streamlet) - 3.0).abs() < 0.3);
    }

    proptest! {
        #[test]
        fn recovers_power_laws(a in 0.5f64..4.0, c in 0.1f64..100.0) {
            let s: Vec<(f64, f64)> = [3.0, 5.0, 9.0, 17.0].iter().map(|&n: &f64| (n, c * n.powf(a))).collect();
            prop_assert!((fit_complexity_exponent(&s).unwrap() - a).abs() < 1e-9);
        }
    }
}
