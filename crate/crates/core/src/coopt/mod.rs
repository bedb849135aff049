//! The adversarial loop: evaluate chromosomes by simulation, score them
//! against a frozen discriminator, evolve one GA generation, then train the
//! discriminator on recent well-flocking experiments. Also discriminator
//! pre-training and the generalization and noise harnesses.

mod archive;
mod buffer;
mod evaluate;
mod harness;
mod pretrain;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flocking::{Chromosome, SimConfig, TrajectoryKind, TrajectoryShape};

pub use archive::{
    completed_generations, generation_dir, median, metrics_header, read_metrics, read_summary, trace_path,
    GenerationSummary, METRICS_FILE, NET_FILE, OFFSPRING_FILE, OPTIMIZER_FILE, POPULATION_FILE, RUN_FILE,
    SUMMARY_FILE,
};
pub use buffer::{BufferEntry, ReplayBuffer};
pub use evaluate::{evaluate_chromosome, simulate_windows, EvalContext, Experiment};
pub use harness::{add_noise, eval_generalization, eval_noise_robustness, generate_windows};
pub use pretrain::{hand_tuned_flight, pretrain, PretrainReport};
pub use run::{run_cooptimization, GenerationRecord, RunArchive, RunOptions};

#[derive(Debug, Error)]
pub enum CooptError {
    #[error("configuration: {path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Nn(#[from] crate::nn::NnError),
    #[error("{0}")]
    Flocking(#[from] crate::flocking::FlockingError),
    #[error("archive {path}: {message}")]
    Archive { path: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CooptError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { path: path.into(), message: message.into() }
    }

    pub fn archive(path: &std::path::Path, message: impl std::fmt::Display) -> Self {
        Self::Archive { path: path.display().to_string(), message: message.to_string() }
    }
}

/// A hand-tuned chromosome used for pre-training flights on one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandTuned {
    pub trajectory: TrajectoryKind,
    pub chromosome: Chromosome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Number of simulated flights.
    pub sample_count: usize,
    /// Trajectory kinds cycled through, one per flight.
    pub trajectories: Vec<TrajectoryKind>,
    pub hand_tuned: Vec<HandTuned>,
    /// Fraction of flights held out for testing.
    pub test_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            sample_count: 2000,
            trajectories: TrajectoryKind::ALL.to_vec(),
            hand_tuned: TrajectoryKind::ALL
                .iter()
                .map(|&trajectory| HandTuned { trajectory, chromosome: Chromosome::hand_tuned() })
                .collect(),
            test_fraction: 0.2,
        }
    }
}

impl PretrainConfig {
    pub fn chromosome_for(&self, kind: TrajectoryKind) -> Option<&Chromosome> {
        self.hand_tuned.iter().find(|h| h.trajectory == kind).map(|h| &h.chromosome)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CooptConfig {
    /// Trajectory flown during co-optimization.
    pub trajectory: TrajectoryKind,
    pub shape: TrajectoryShape,
    /// Discriminator epochs after each generation.
    pub online_epochs: usize,
    /// Most recent qualifying experiments kept for training.
    pub buffer_capacity: usize,
    /// Master seed of the run.
    pub seed: u64,
    pub pretrain: PretrainConfig,
    /// Noise variances of the robustness harness, m^2.
    pub noise_variances: Vec<f64>,
    /// Flights per cell of the evaluation harnesses.
    pub eval_experiments: usize,
}

impl Default for CooptConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::Line,
            shape: TrajectoryShape::default(),
            online_epochs: 1,
            buffer_capacity: 100,
            seed: 0,
            pretrain: PretrainConfig::default(),
            noise_variances: vec![0.25, 1.0, 4.0],
            eval_experiments: 20,
        }
    }
}

impl CooptConfig {
    /// On failure returns the field path below `coopt` and a message.
    pub fn validate(&self, sim: &SimConfig) -> Result<(), (String, String)> {
        let err = |f: &str, m: String| Err((f.to_string(), m));
        if self.online_epochs == 0 {
            return err("online_epochs", "must be >= 1".into());
        }
        if self.buffer_capacity == 0 {
            return err("buffer_capacity", "must be >= 1".into());
        }
        if self.eval_experiments == 0 {
            return err("eval_experiments", "must be >= 1".into());
        }
        self.shape.validate().map_err(|m| ("shape".to_string(), m))?;
        if let Some(v) = self.noise_variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return err("noise_variances", format!("variances must be finite and >= 0, got {v}"));
        }
        let p = &self.pretrain;
        if p.sample_count == 0 {
            return err("pretrain.sample_count", "must be >= 1".into());
        }
        if !(p.test_fraction > 0.0 && p.test_fraction < 1.0) {
            return err("pretrain.test_fraction", format!("must lie in (0, 1), got {}", p.test_fraction));
        }
        if p.trajectories.is_empty() {
            return err("pretrain.trajectories", "at least one trajectory kind is required".into());
        }
        for (i, h) in p.hand_tuned.iter().enumerate() {
            h.chromosome
                .validate(sim.sensing_range)
                .map_err(|m| (format!("pretrain.hand_tuned[{i}].chromosome"), m))?;
        }
        for kind in &p.trajectories {
            if p.chromosome_for(*kind).is_none() {
                return err("pretrain", format!("no hand-tuned chromosome for trajectory `{kind}`"));
            }
        }
        Ok(())
    }
}
