//! Deterministic discrete-event simulation of a validator roster.
//!
//! [`run`] drives any [`qlab_core::Engine`] through a timestamped event
//! queue. Each envelope costs CPU time at the sender (serialize) and at the
//! receiver (deserialize); a node handles one envelope at a time, so a
//! leader that fans out to `N - 1` peers becomes the bottleneck long before
//! any link would. Faults are injected by wrapping engines in
//! [`Adversarial`]. [`socket::run_loopback`] drives the same engines over
//! real TCP sockets.

mod check;
mod cpu;
mod faults;
mod latency;
mod sim;
pub mod socket;
mod workload;

pub use check::{chains_prefix_consistent, AgreementReport};
pub use cpu::CpuCostModel;
pub use faults::{Adversarial, Behavior, FaultEntry, FaultPlan};
pub use latency::{LatencyModel, WAN_REGIONS};
pub use sim::{run, Delivery, SimConfig, SimError, SimOutput};
pub use workload::{ClientPolicy, ClientRoute, Submission, Workload};
