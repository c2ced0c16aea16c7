use rand::Rng;
use serde::{Deserialize, Serialize};

use qlab_core::Time;

/// Region names of the default WAN profile.
pub const WAN_REGIONS: [&str; 4] = ["ohio", "n-california", "oregon", "n-virginia"];

/// One-way delays in microseconds between the WAN profile regions.
/// Representative values, not measurements; override through config.
const WAN_DELAYS_US: [[Time; 4]; 4] = [
    [250, 25_000, 35_000, 6_000],
    [25_000, 250, 10_000, 31_000],
    [35_000, 10_000, 250, 37_000],
    [6_000, 31_000, 37_000, 250],
];

/// One-way network delay model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    Constant(Time),
    UniformJitter {
        lo: Time,
        hi: Time,
    },
    RegionMatrix {
        /// Region index of each node.
        node_region: Vec<usize>,
        /// `delays[a][b]`: one-way delay from region `a` to region `b`.
        delays: Vec<Vec<Time>>,
    },
}

impl LatencyModel {
    /// The four-region WAN profile with nodes assigned round-robin.
    pub fn wan(n: usize) -> LatencyModel {
        LatencyModel::RegionMatrix {
            node_region: (0..n).map(|i| i % WAN_REGIONS.len()).collect(),
            delays: WAN_DELAYS_US.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        match self {
            LatencyModel::Constant(d) if *d == 0 => Err("constant delay must be > 0".into()),
            LatencyModel::UniformJitter { lo, hi } if *lo == 0 || hi < lo => Err(format!(
                "jitter bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )),
            LatencyModel::RegionMatrix {
                node_region,
                delays,
            } => {
                let r = delays.len();
                if r == 0 || delays.iter().any(|row| row.len() != r) {
                    return Err("region matrix must be square and non-empty".into());
                }
                if delays.iter().flatten().any(|d| *d == 0) {
                    return Err("region delays must be > 0".into());
                }
                if node_region.len() != n {
                    return Err(format!(
                        "{} region assignments for {n} nodes",
                        node_region.len()
                    ));
                }
                if node_region.iter().any(|&x| x >= r) {
                    return Err("node assigned to unknown region".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Region of node `index`; everything is region 0 outside the matrix model.
    pub fn region_of(&self, index: usize) -> usize {
        match self {
            LatencyModel::RegionMatrix { node_region, .. } => {
                node_region[index % node_region.len()]
            }
            _ => 0,
        }
    }

    pub fn sample<R: Rng>(&self, from_region: usize, to_region: usize, rng: &mut R) -> Time {
        match self {
            LatencyModel::Constant(d) => *d,
            LatencyModel::UniformJitter { lo, hi } => rng.gen_range(*lo..=*hi),
            LatencyModel::RegionMatrix { delays, .. } => delays[from_region][to_region],
        }
    }

    pub fn min_delay(&self) -> Time {
        match self {
            LatencyModel::Constant(d) => *d,
            LatencyModel::UniformJitter { lo, .. } => *lo,
            LatencyModel::RegionMatrix { delays, .. } => {
                delays.iter().flatten().copied().min().unwrap_or(0)
            }
        }
    }

    pub fn max_delay(&self) -> Time {
        match self {
            LatencyModel::Constant(d) => *d,
            LatencyModel::UniformJitter { hi, .. } => *hi,
            LatencyModel::RegionMatrix { delays, .. } => {
                delays.iter().flatten().copied().max().unwrap_or(0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wan_profile_is_complete() {
        let m = LatencyModel::wan(9);
        m.validate(9).unwrap();
        assert_eq!(m.region_of(5), 1);
        assert_eq!(m.min_delay(), 250);
        assert!(m.validate(8).is_err());
    }

    #[test]
    fn rejects_zero_delay() {
        assert!(LatencyModel::Constant(0).validate(1).is_err());
        assert!(LatencyModel::UniformJitter { lo: 5, hi: 4 }
            .validate(1)
            .is_err());
        let bad = LatencyModel::RegionMatrix {
            node_region: vec![0],
            delays: vec![vec![1, 2]],
        };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn jitter_stays_in_bounds_and_is_seeded() {
        let m = LatencyModel::UniformJitter { lo: 10, hi: 20 };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| m.sample(0, 0, &mut rng))
                .collect::<Vec<_>>()
        };
        assert!(draw(1).iter().all(|d| (10..=20).contains(d)));
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }
}
