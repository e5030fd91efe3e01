//! Multi-radar worker re-identification and personalized particulate exposure.
//!
//! The pipeline localizes quasi-static workers in each radar's point cloud
//! ([`tdscan`]), cuts a range-Doppler activity signature around each of them
//! ([`signatures`]), maps signatures between radar viewpoints ([`view_adapt`]),
//! links detections across radars into global identities ([`reid`]) and
//! integrates an interpolated dust field along each identity's trajectory
//! ([`exposure`]). [`radar_sim`] synthesizes the radar observations and ground
//! truth that drive it.

pub mod assignment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exposure;
pub mod formats;
pub mod geometry;
pub mod harness;
pub mod pipeline;
pub mod radar_sim;
pub mod reid;
pub mod scenario;
pub mod signatures;
pub mod tdscan;
pub mod view_adapt;

pub use error::{Error, Result};
pub use geometry::Vec2;
