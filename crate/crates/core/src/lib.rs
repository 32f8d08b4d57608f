//! Bayesian decision-theoretic design of observational studies: plans and
//! designs, models and posteriors, expected utility, value of information,
//! plan search and worked scenarios.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod cost;
pub mod dataset;
pub mod design;
pub mod error;
pub mod expected;
pub mod frame;
pub mod inference;
pub mod models;
pub mod optim;
pub mod plan;
pub mod scenarios;
pub mod search;
pub mod testkit;
pub mod seed;
pub mod utility;
pub mod voi;
