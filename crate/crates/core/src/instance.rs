//! Compute instance sizes.

use crate::clock::Millis;
use core::fmt;

/// Per-core speed, in thousandths of a compute unit per virtual millisecond.
/// A Small instance therefore executes 1.6 units per ms.
const SPEED_MILLI_PER_CORE: u64 = 1_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstanceSize {
    /// 1 core at 1.6, 1.75 GB.
    Small,
    /// 2 cores at 1.6, 3.5 GB.
    Medium,
}

impl InstanceSize {
    pub fn cores(self) -> u64 {
        match self {
            InstanceSize::Small => 1,
            InstanceSize::Medium => 2,
        }
    }

    /// Per-core speed in compute units per virtual ms, scaled by 1000.
    pub fn speed_milli(self) -> u64 {
        SPEED_MILLI_PER_CORE
    }

    pub fn speed(self) -> f64 {
        self.speed_milli() as f64 / 1_000.0
    }

    pub fn memory_gb(self) -> f64 {
        match self {
            InstanceSize::Small => 1.75,
            InstanceSize::Medium => 3.5,
        }
    }

    /// Whole-instance throughput in thousandths of a unit per ms.
    pub fn throughput_milli(self) -> u64 {
        self.cores() * self.speed_milli()
    }

    /// Execution time of `cost` compute units, rounded up to whole ms.
    pub fn execution_ms(self, cost: u64) -> Millis {
        let num = cost as u128 * 1_000;
        let den = self.throughput_milli() as u128;
        num.div_ceil(den) as Millis
    }

    pub fn name(self) -> &'static str {
        match self {
            InstanceSize::Small => "Small",
            InstanceSize::Medium => "Medium",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "Small" | "small" => Some(InstanceSize::Small),
            "Medium" | "medium" => Some(InstanceSize::Medium),
            _ => None,
        }
    }
}

impl fmt::Display for InstanceSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
