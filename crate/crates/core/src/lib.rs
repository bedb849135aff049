//! Leader-private flocking workbench.
//!
//! A leader-driven Reynolds flock is simulated kinematically, scored with a
//! multi-term flocking loss, and its controller parameters are evolved by a
//! genetic algorithm against a convolutional discriminator that tries to
//! pick the leader out of position traces.

pub mod config;
pub mod coopt;
pub mod flocking;
pub mod ga;
pub mod metrics;
pub mod nn;
pub mod seed;

pub use config::{ConfigError, WorkbenchConfig};
pub use flocking::{Chromosome, FollowerParams, LeaderParams, SimConfig, SimTrace, Vec3};
pub use metrics::{MetricWeights, MetricsVector};
