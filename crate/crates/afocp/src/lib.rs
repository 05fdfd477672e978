//! File formats, dataset loading and the experiment runner around
//! [`afocp_core`].

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod plotdata;
pub mod report;

pub use error::{AppError, Result};
