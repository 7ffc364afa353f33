//! Clearing engine for two-stage stochastic electricity auctions under
//! supply uncertainty, with and without Arrow-Debreu risk trading.
//!
//! The crate is organised around the market pipeline:
//!
//! * [`model`] — immutable problem instances and empirical distributions,
//! * [`lp`] — the bounded-variable simplex solver with dual resolution,
//! * [`risk`] — coherent risk measures in mean/tail-deviation form,
//! * [`dispatch`] — the stochastic dispatch mechanism and settlement,
//! * [`riskmarket`] — risk-averse clearing with Arrow-Debreu securities,
//! * [`newsvendor`] — closed-form pre-commitment quantiles and their
//!   brute-force oracle,
//! * [`equilibrium`] — the no-trading competitive equilibrium,
//! * [`cli`] — command implementations and the deterministic report format.

pub mod cli;
pub mod dispatch;
pub mod equilibrium;
pub mod lp;
pub mod model;
pub mod newsvendor;
pub mod report;
pub mod risk;
pub mod riskmarket;

pub use model::{validate_instance, EmpiricalDistribution, MarketInstance};
