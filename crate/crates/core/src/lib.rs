//! Coarse-time GNSS snapshot positioning.
//!
//! Broadcast-orbit evaluation, atmospheric corrections, a mixed-integer
//! least-squares solver and the snapshot position solvers built on it, plus
//! a deterministic snapshot simulator. Works without `std` (needs `alloc`).
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod atmosphere;
pub mod constants;
pub mod error;
pub mod geodesy;
pub mod ils;
pub mod model;
pub mod nav;
pub mod sim;
pub mod solvers;
pub mod time;

pub use error::{Error, Result};
