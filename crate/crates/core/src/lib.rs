//! Agent-based simulation of production networks that emerge from firms
//! learning prices and input purchases with hidden technologies.
//!
//! Module map:
//! - [`technology`]: production functions and the marginal experiment
//! - [`market`]: demand curves, the transaction round, profits
//! - [`learning`]: directed-learning price and plan updates
//! - [`engine`]: the period loop, runs, steady-state detection
//! - [`shocks`]: shock events, scenarios and the built-in catalog
//! - [`netmetrics`]: distances, flow shares, impact and propagation analytics
//! - [`harness`]: batches, robustness tests, propagation experiments
//! - [`io`]: CSV and JSON persistence

pub mod engine;
pub mod harness;
pub mod io;
pub mod learning;
pub mod market;
pub mod netmetrics;
pub mod rng;
pub mod shocks;
pub mod technology;
