//! Closed-loop artificial pancreas testbed: virtual patients, insulin
//! controllers, CGM and pump models, fault injection, profile estimation
//! and outcome analytics.

pub mod analytics;
pub mod cli;
pub mod controllers;
pub mod devices;
pub mod engine;
pub mod error;
pub mod faults;
pub mod kinetics;
pub mod schema;
pub mod sysid;
pub mod trace_csv;
pub mod units;

pub use error::{Error, Result};
