//! Optimal consumption and investment under partially observed stochastic
//! volatility, solved by quantizing the unnormalized filter densities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod dp;
pub mod error;
pub mod filter;
pub mod market;
pub mod numeric;
pub mod pipeline;
pub mod quantizer;
pub mod sim;

pub use error::{Error, Result};
