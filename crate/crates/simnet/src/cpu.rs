use serde::{Deserialize, Serialize};

use qlab_core::Time;

/// CPU time charged for serializing (at the sender) or deserializing (at the
/// receiver) one envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuCostModel {
    /// Fixed cost per envelope, in microseconds.
    pub per_message: Time,
    /// Cost per payload byte, in microseconds.
    pub per_byte: f64,
}

impl CpuCostModel {
    pub const ZERO: CpuCostModel = CpuCostModel {
        per_message: 0,
        per_byte: 0.0,
    };

    pub fn cost(&self, bytes: u64) -> Time {
        self.per_message + (self.per_byte * bytes as f64).round() as Time
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.per_byte >= 0.0 && self.per_byte.is_finite()) {
            return Err(format!(
                "per_byte cost must be finite and >= 0, got {}",
                self.per_byte
            ));
        }
        Ok(())
    }
}

impl Default for CpuCostModel {
    fn default() -> Self {
        Self::ZERO
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_is_affine_in_bytes() {
        let m = CpuCostModel {
            per_message: 3,
            per_byte: 0.5,
        };
        assert_eq!(m.cost(0), 3);
        assert_eq!(m.cost(10), 8);
        assert_eq!(CpuCostModel::ZERO.cost(1_000_000), 0);
        assert!(CpuCostModel {
            per_message: 0,
            per_byte: -1.0
        }
        .validate()
        .is_err());
    }
}
