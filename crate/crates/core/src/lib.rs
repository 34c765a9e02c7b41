//! Multistage stochastic AC optimal power flow for radial distribution
//! feeders with storage and solar.
//!
//! The crate builds branch-flow-model programs over scenario trees, solves
//! their second-order cone relaxation, recovers physically exact operating
//! points by a forward-backward sweep, and evaluates a-priori zero-gap
//! certificates together with a-posteriori gap bounds.

pub mod certify;
pub mod cli;
pub mod conic;
pub mod network;
pub mod oracle;
pub mod program;
pub mod scenario;
pub mod sweep;

pub use network::{load_network, NetworkFormat, RadialNetwork};
pub use scenario::{ScenarioTree, SdeParams, TimeGrid};
