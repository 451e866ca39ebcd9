//! Self-supervised channel charting with sensor fusion.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`world`]: indoor scene, smooth UE trajectories and 2D laser scans.
//! - [`channel`]: delay-domain CIR synthesis with first-order image sources.
//! - [`features`]: CIR truncation, ToA extraction and received power.
//! - [`icp`]: scan matching and laser displacement estimation.
//! - [`chart`]: the convolutional chart function, its losses and training.
//! - [`pso`]: particle swarm optimizer, offset estimation and the TDoA baseline.
//! - [`metrics`]: trustworthiness, continuity and CE90.
//! - [`dataset`]: the on-disk dataset format.
//! - [`scenario`]: seeded train/test generation for a scene.

pub mod channel;
pub mod chart;
pub mod dataset;
mod error;
pub mod features;
pub mod geometry;
pub mod icp;
pub mod metrics;
pub mod pso;
pub mod rng;
pub mod scenario;
pub mod world;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
