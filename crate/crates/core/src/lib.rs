//! Online posted-price reservation auction for EV charging stations with
//! behind-the-meter solar, plus the offline references used to judge it.
//!
//! Modules, bottom-up:
//!
//! - [`model`]: scenario, users, options, demand tallies, validation
//! - [`pricing`]: costs, conjugates, marginal price curves, α constants, DAPR check
//! - [`options`]: option-set generation per request
//! - [`engine`]: the online mechanism
//! - [`oracle`]: exact offline optimum, capacity-relaxed bound, no-mechanism baseline
//! - [`scenario_io`]: files, traces, presets, synthetic populations

pub mod engine;
pub mod error;
pub mod model;
pub mod options;
pub mod oracle;
pub mod pricing;
pub mod scenario_io;

pub use error::{Error, Result};
