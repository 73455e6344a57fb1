//! Deterministic discrete-event simulator for co-located containers under the
//! Linux CFS share/quota model, with request-based placement, autoscaling
//! policies and billing.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoscaler;
pub mod billing;
pub mod cfs;
pub mod cluster;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod workload;

pub use error::{Result, SimError};
