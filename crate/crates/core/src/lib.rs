//! On-demand age-of-information scheduling for energy-harvesting sensor
//! fleets under a per-slot transmission budget.

pub mod analysis;
pub mod config;
pub mod error;
pub mod exact;
pub mod model;
pub mod pipeline;
pub mod relaxed;
pub mod runtime;
mod rvi;
pub mod sim;
pub mod store;

pub use error::{Error, Result};
pub use rvi::{RviaOptions, RviaResult, DEFAULT_SELF_LOOP};
