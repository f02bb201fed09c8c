//! Multi-orbit LEO downlink network simulator and optimizer.
//!
//! The crate models a Walker constellation serving ground users through
//! orthogonal subcarriers, and searches for the satellite subset, user
//! association, bandwidth allocation, and per-user transmit powers that
//! maximize the network sum rate under per-satellite power budgets and a
//! constellation size cap.
//!
//! The pipeline is layered bottom-up:
//!
//! * [`orbits`] — constellation generation, circular-orbit propagation,
//!   user placement, cone-angle visibility.
//! * [`channel`] — path loss, linear power gains, interference, SINR, rates.
//! * [`netstate`] — network configurations, bandwidth partitioning,
//!   feasibility checking, the sum-rate objective.
//! * [`feasinit`] — feasible starting points that pin every user to its
//!   minimum rate via per-subcarrier linear systems.
//! * [`matching`] — two-sided matching rounds for user association and
//!   bandwidth allocation.
//! * [`power`] — per-satellite power allocation by a log-domain Lagrangian
//!   dual subgradient method.
//! * [`jubpa`] — block coordinate descent alternating matching and power
//!   allocation for a fixed satellite subset.
//! * [`selector`] — the outer Markov-chain search over satellite subsets,
//!   plus baseline selection policies.
//! * [`harness`] — scenario files, seeded experiment execution, CSV
//!   artifacts, and baseline comparison tables.

pub mod channel;
pub mod error;
pub mod feasinit;
pub mod harness;
pub mod jubpa;
pub mod matching;
pub mod netstate;
pub mod orbits;
pub mod power;
pub mod selector;

pub use error::{Error, Result};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Earth gravitational parameter in km^3/s^2.
pub const EARTH_MU: f64 = 398600.4418;

/// Speed of light in km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;
