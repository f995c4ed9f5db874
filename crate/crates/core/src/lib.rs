//! Lane-keeping test generation across several simulators ("digital
//! siblings"), with feature-map union and conservative merge, evaluated
//! against a separately parameterized reference simulator.

pub mod cell;
pub mod dynamics;
pub mod error;
pub mod execution;
pub mod featuremap;
pub mod pipeline;
pub mod road;
pub mod search;
pub mod seeds;
pub mod stats;

pub use error::ConfigError;
