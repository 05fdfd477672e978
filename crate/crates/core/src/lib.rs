//! Online conformal calibration for two-stage regressors.
//!
//! The crate wraps a model `mu = g ∘ f` (feature extractor `f`, prediction
//! head `g`) and emits per-step prediction intervals whose long-run
//! miscoverage tracks a target level. Four calibrators are provided:
//!
//! | method | score space | history weights |
//! |--------|-------------|-----------------|
//! | OCP    | output      | uniform         |
//! | FOCP   | feature     | uniform         |
//! | AOCP   | output      | attention       |
//! | AFOCP  | feature     | attention       |
//!
//! Everything here is pure computation over `alloc` collections; file
//! formats, CSV ingestion and the experiment runner live in the `afocp`
//! companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attention;
pub mod calibration;
pub mod data;
mod error;
pub mod linalg;
pub mod metrics;
pub mod neuralnet;
pub mod rng;
pub mod scores;

pub use error::{Error, Result};
