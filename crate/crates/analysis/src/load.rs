use num_rational::Ratio;

use crate::{AnalysisError, Protocol, Result};

/// Parameters of the busiest-validator load formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadParams {
    /// Number of operation leaders.
    pub leaders: u64,
    /// Quorum size `Q` used in the formula.
    pub quorum: u64,
    /// Quorums handled per transaction while leading.
    pub numq_leader: u64,
    /// Quorums handled per transaction while following.
    pub numq_follower: u64,
}

impl LoadParams {
    fn validate(&self) -> Result<()> {
        if self.leaders == 0 {
            return Err(AnalysisError::InvalidParams("L must be >= 1".into()));
        }
        if self.quorum == 0 {
            return Err(AnalysisError::InvalidParams("Q must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(1/L)(Q-1)·NumQ_leader + (1 - 1/L)(Q-1)·NumQ_follower`.
///
/// A validator leads a given request with probability `1/L`. The follower
/// term takes the follower's own quorum count; with a single shared `NumQ`
/// the expression would not depend on `L` at all.
pub fn load(params: &LoadParams) -> Result<Ratio<u64>> {
    params.validate()?;
    let lead = Ratio::new(1, params.leaders);
    let follow = Ratio::from_integer(1) - lead;
    let q1 = Ratio::from_integer(params.quorum - 1);
    Ok(lead * q1 * params.numq_leader + follow * q1 * params.numq_follower)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Capacity {
    Finite(Ratio<u64>),
    Infinite,
}

impl std::fmt::Display for Capacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Capacity::Finite(r) => write!(f, "{r}"),
            Capacity::Infinite => f.write_str("unbounded"),
        }
    }
}

/// `Cap(S) = 1 / load(S)`; a zero load yields [`Capacity::Infinite`].
pub fn capacity(params: &LoadParams) -> Result<Capacity> {
    let l = load(params)?;
    if *l.numer() == 0 {
        Ok(Capacity::Infinite)
    } else {
        Ok(Capacity::Finite(l.recip()))
    }
}

/// The load parameterization used for the three analysed protocols:
/// `Q = floor(n/2) + 1` for Paxos, `Q = floor(2n/3)` for the Byzantine ones.
/// Tendermint and Streamlet are excluded because their busiest node is
/// dominated by fixed waits rather than quorum work.
pub fn canonical_load_params(protocol: Protocol, n: u64) -> Result<LoadParams> {
    if n == 0 {
        return Err(AnalysisError::InvalidParams("n must be >= 1".into()));
    }
    match protocol {
        Protocol::Paxos => Ok(LoadParams {
            leaders: 1,
            quorum: n / 2 + 1,
            numq_leader: 1,
            numq_follower: 0,
        }),
        Protocol::Pbft => Ok(LoadParams {
            leaders: 1,
            quorum: 2 * n / 3,
            numq_leader: 2,
            numq_follower: 0,
        }),
        Protocol::HotStuff => Ok(LoadParams {
            leaders: 4,
            quorum: 2 * n / 3,
            numq_leader: 4,
            numq_follower: 0,
        }),
        Protocol::Tendermint | Protocol::Streamlet => Err(AnalysisError::NotModeled(
            protocol,
            "excluded from load analysis (fixed waits)",
        )),
        Protocol::TendermintStar | Protocol::Snowball => Err(AnalysisError::NotModeled(
            protocol,
            "no load parameterization",
        )),
    }
}

/// Critical path + client round trip + fixed wait, all in one unit.
pub fn latency_estimate(critical_path: u64, d_l: u64, delta: u64) -> u64 {
    critical_path + d_l + delta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_loads_at_n9() {
        let l = |p| load(&canonical_load_params(p, 9).unwrap()).unwrap();
        assert_eq!(l(Protocol::Paxos), Ratio::from_integer(4));
        assert_eq!(l(Protocol::Pbft), Ratio::from_integer(10));
        assert_eq!(l(Protocol::HotStuff), Ratio::from_integer(5));
    }

    #[test]
    fn explicit_params() {
        let p = LoadParams {
            leaders: 4,
            quorum: 6,
            numq_leader: 4,
            numq_follower: 0,
        };
        assert_eq!(load(&p).unwrap(), Ratio::from_integer(5));
        assert_eq!(capacity(&p).unwrap(), Capacity::Finite(Ratio::new(1, 5)));
        // follower term contributes when L > 1
        let p = LoadParams {
            leaders: 2,
            quorum: 3,
            numq_leader: 1,
            numq_follower: 1,
        };
        assert_eq!(load(&p).unwrap(), Ratio::from_integer(2));
    }

    #[test]
    fn zero_load_has_infinite_capacity() {
        let p = LoadParams {
            leaders: 1,
            quorum: 1,
            numq_leader: 3,
            numq_follower: 0,
        };
        assert_eq!(capacity(&p).unwrap(), Capacity::Infinite);
    }

    #[test]
    fn rejects_degenerate_params() {
        let p = LoadParams {
            leaders: 0,
            quorum: 3,
            numq_leader: 1,
            numq_follower: 0,
        };
        assert!(load(&p).is_err());
        let p = LoadParams {
            leaders: 1,
            quorum: 0,
            numq_leader: 1,
            numq_follower: 0,
        };
        assert!(load(&p).is_err());
        assert!(canonical_load_params(Protocol::Tendermint, 9).is_err());
        assert!(canonical_load_params(Protocol::Streamlet, 9).is_err());
    }

    #[test]
    fn capacity_order_at_n9() {
        let cap = |p| match capacity(&canonical_load_params(p, 9).unwrap()).unwrap() {
            Capacity::Finite(c) => c,
            Capacity::Infinite => unreachable!(),
        };
        assert!(cap(Protocol::Paxos) > cap(Protocol::HotStuff));
        assert!(cap(Protocol::HotStuff) > cap(Protocol::Pbft));
    }

    #[test]
    fn latency_examples() {
        assert_eq!(latency_estimate(2, 2, 0), 4);
        assert_eq!(latency_estimate(3, 2, 0), 5);
        assert_eq!(latency_estimate(0, 0, 0), 0);
    }
}
