//! Decentralized error-state EKF for multi-robot cooperative localization,
//! with zero-velocity updates and a deterministic simulator.

pub mod agent;
pub mod error;
pub mod linalg;
pub mod nav;
pub mod private;
pub mod protocol;
pub mod relative;

pub use error::{Error, Result};
pub mod sim;
pub mod metrics;
pub mod report;
