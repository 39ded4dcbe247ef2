//! Seed-reproducible multi-agent market simulator built around
//! representation-readout trading agents and an inventory-sensitive dealer.
//!
//! The crate is organised bottom-up:
//!
//! - [`state`], [`config`] and [`rng`] hold the shared domain types, run
//!   configuration and the deterministic random-stream contract.
//! - [`engine`] is the reduced-form pricing block (fundamental, dealer
//!   inventory, nonlinear liquidity coefficients, shock generators).
//! - [`agents`] implements encoding, forecasting, slippage estimation,
//!   position choice, readout learning, representation drift and
//!   asynchronous clocks.
//! - [`sim`] wires agents and dealer into the per-period step loop.
//! - [`metrics`] measures homogeneity, synchronisation and tail risk.
//! - [`calibration`] fits the pricing block by simulated method of moments.
//! - [`experiments`] orchestrates the factorial, scan, threshold, matched,
//!   convergence, control and stress designs.

pub mod agents;
pub mod calibration;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod state;
pub mod stats;
pub mod table;

pub use config::{Config, RunConfig};
pub use error::{Error, Result};
pub use state::{AgentParams, AgentState, DealerState, MarketState, PricingParams, VolEstimator};
