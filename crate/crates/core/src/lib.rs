#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Distributable counterparty credit valuation engine.

pub mod credit;
pub mod curve;
pub mod cva;
pub mod dist;
pub mod error;
pub mod factor;
pub mod grid;
pub mod gridstore;
pub mod io;
pub mod market;
pub mod rng;
pub mod valuation;

pub use error::{CvaError, Result};
