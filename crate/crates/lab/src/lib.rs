//! Configuration, parallel ensemble runs, file formats and the acceptance
//! suite for `reduction-core`.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod output;
pub mod runner;
