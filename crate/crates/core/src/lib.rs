//! Cycle-level model of a bit-particle multiply-accumulate unit and an
//! elastic array of such units.
//!
//! * [`smcore`]: sign-magnitude operands, particles, the IR matrix and
//!   partial-product packing.
//! * [`macunit`]: the variable-latency MAC unit, exact and approximate.
//! * [`macarray`]: a rows x cols array with bounded column divergence and
//!   per-unit operand queues.
//! * [`workload`]: synthetic and profile-driven operand streams, layer shapes.
//! * [`metrics`]: utilization, cycle statistics, skipped-bit accounting and
//!   reference schedules.
//! * [`experiment`]: named presets, parameter grids and verification.

pub mod error;
pub mod experiment;
pub mod macarray;
pub mod macunit;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod smcore;
pub mod workload;

pub use error::{Error, Result};
pub use macarray::{simulate, ArrayConfig, Simulator};
pub use macunit::{MacUnit, MacVariant, OperandPair};
pub use metrics::{MetricsReport, Scheme};
pub use parallel::Exec;
pub use smcore::SignMagnitude8;
pub use workload::{OperandStreams, SparsityProfile};
