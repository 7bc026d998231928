//! Taxi carpool dispatch toolkit.
//!
//! Pipeline: bin historical trips onto a space-time grid ([`geo_time`], [`trips`]),
//! learn travel time and distance ([`eta`] on top of [`nn`]), simulate a carpooling
//! taxi day as an MDP ([`simulator`]), and learn dispatch policies ([`agents`]).
//! [`harness`] wires it all into experiments and the `carpool` CLI.

// Validation uses negated comparisons so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agents;
pub mod error;
pub mod eta;
pub mod geo_time;
pub mod harness;
pub mod nn;
pub mod simulator;
pub mod trips;

pub use error::{Error, Result};
