//! Robot state, the follower/leader controller family, reference
//! trajectories, and the kinematic simulation loop.

mod control;
mod export;
mod params;
mod sim;
mod trajectory;
mod vec3;
mod window;

use thiserror::Error;

pub use control::{
    alignment_velocity, cohesion_velocity, follower_control, leader_control, neighborhood,
    separation_velocity, tracking_velocity, TRACKING_SINGULARITY,
};
pub use export::{read_trace_csv, read_windows_csv, write_trace_csv, write_windows_csv, TraceRows, TRACE_HEADER};
pub use params::{Chromosome, FollowerParams, LeaderParams, GENE_COUNT, GENE_NAMES, LEADER_OFFSET};
pub use sim::{initial_placement, simulate, RobotState, SimConfig, SimTrace};
pub use trajectory::{ReferenceTrajectory, TrajectoryKind, TrajectoryShape};
pub use vec3::Vec3;
pub use window::extract_windows;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlockingError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("chromosome out of range: {0}")]
    Chromosome(String),
    #[error("non-finite state at step {step}, robot {robot}")]
    NonFinite { step: usize, robot: usize },
    #[error("invalid observation window: {0}")]
    Window(String),
}
