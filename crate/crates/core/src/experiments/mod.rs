//! Experimental designs built on the simulator.
//!
//! Replications are the unit of work. Every design maps over
//! `(condition, replication)` pairs in parallel and aggregates in a fixed
//! order, so results do not depend on scheduling. Replication `m` of any
//! condition draws its shocks from the same streams.

pub mod controls;
pub mod convergence;
pub mod factorial;
pub mod matched;
pub mod replication;
pub mod scan;
pub mod spline;
pub mod stress;
pub mod threshold;

pub use factorial::{factorial_regression, run_factorial, FactorialCell, FactorialEstimates, FactorialRun};
pub use replication::{run_replication, run_replications, ReplicationOutput};
pub use scan::{run_scan, ControlMode, ScanResult};
pub use threshold::{estimate_threshold, ThresholdEstimate, ThresholdMethod, ThresholdOutcome};
