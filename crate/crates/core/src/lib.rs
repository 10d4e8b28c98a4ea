//! Hardware-aware few-shot latency prediction for cell-based neural
//! architectures.
//!
//! Devices are characterized by performance counters gathered while running
//! a fixed set of operator workloads. A regression model maps an
//! architecture encoding plus that descriptor to latency, and adapts to a new
//! device from a handful of measured samples.

pub mod baselines;
pub mod dataset;
pub mod devicesim;
pub mod error;
pub mod eval;
pub mod hwcounters;
pub mod kernels;
pub mod predictor;
pub mod search_space;

pub use error::{Error, Result};
