//! Optimal consumption, investment and life-insurance control for a wage earner
//! in a jump-diffusion market driven by a non-tradable economic factor, with
//! CRRA preferences, solved by the martingale (dual) method and wrapped in an
//! American-put portfolio insurance so that wealth never drops below a floor.
//!
//! The crate is `no_std` compatible (it needs `alloc`). The default `std`
//! feature only switches Monte Carlo path loops to rayon; results are
//! bit-for-bit identical either way because every path owns a counter-based
//! random stream and reductions run in path order.
//!
//! Module map:
//!
//! * [`market`] coefficients, mortality, human capital, path simulation of `Z` and `S`.
//! * [`measure`] market prices of risk, Radon-Nikodym density, state-price deflator.
//! * [`dual`] power-utility dual problem: jump-measure optimiser, the semi-linear
//!   PDE for `h = -ln V`, Monte Carlo cross-check, Lagrange multiplier.
//! * [`strategy`] unrestricted optimal strategy and wealth, budget identities.
//! * [`put`] American put on the optimal portfolio (Longstaff-Schwartz), exercise boundary.
//! * [`obpi`] ratcheted option-based portfolio insurance and its floor check.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod coef;
pub mod dual;
mod error;
pub mod market;
pub mod math;
pub mod measure;
pub mod obpi;
mod par;
pub mod put;
pub mod rng;
pub mod strategy;

pub use error::{Error, Result};
