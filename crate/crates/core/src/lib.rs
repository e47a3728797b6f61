//! Probabilistic flexibility needs assessment for radial distribution feeders.

pub mod error;
pub mod fna;
pub mod grid;
pub mod io;
pub mod lp;
pub mod needs;
pub mod powerflow;
pub mod scenario;
pub mod studies;
pub mod zoning;

pub use error::{Error, Result};
pub use grid::{Network, NodeId, ProfileSet};
pub use scenario::{ScenarioConfig, ScenarioSet};
