//! Multi-UAV 3D scanning mission simulator.
//!
//! The crate models small UAVs circling a static object, capturing views,
//! registering them with a structure-from-motion surrogate, merging them into
//! an incremental point cloud and re-planning toward under-covered angular
//! slices. Post-flight, camera poses are fused with UWB positions and the
//! reconstruction is scored against the ground-truth surface.

pub mod align;
pub mod assignment;
pub mod capture;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod geometry;
pub mod imaging;
pub mod metrics;
pub mod mission;
pub mod planner;
pub mod ply;
pub mod reconstruct;
pub mod scene;
pub mod spatial;
pub mod uav;

pub use error::{Result, ScanError};
