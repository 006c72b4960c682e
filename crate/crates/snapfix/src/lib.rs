//! File formats, experiment drivers and command-line plumbing around
//! `snapfix-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod rinex;
pub mod snapfile;

pub use error::{Error, Result};
