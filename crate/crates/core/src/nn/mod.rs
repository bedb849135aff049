//! Leader discriminator: a small CNN over position windows, trained with
//! plain SGD and momentum.

mod checkpoint;
mod loss;
mod net;
mod optim;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    load_net, load_optimizer, read_net, read_optimizer, save_net, save_optimizer, write_net, write_optimizer,
    CHECKPOINT_VERSION,
};
pub use loss::{argmax, cross_entropy, softmax};
pub use net::{Architecture, Discriminator, ForwardPass, Gradients, Mode, PARAM_NAMES};
pub use optim::Sgd;
pub use tensor::Tensor;
pub use train::{accuracy, privacy_loss, total_loss, train_epoch};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in `{layer}`: expected {expected:?}, found {found:?}")]
    Shape { layer: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// One labeled observation: positions of all robots over a time window,
/// stored `[sample][robot][axis]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationWindow {
    pub channels: usize,
    pub n_robots: usize,
    pub data: Vec<f64>,
    /// Index of the leader.
    pub label: usize,
}

impl ObservationWindow {
    pub fn new(channels: usize, n_robots: usize, data: Vec<f64>, label: usize) -> Self {
        assert_eq!(data.len(), channels * n_robots * 3, "window data length");
        assert!(label < n_robots, "label {label} out of range for {n_robots} robots");
        Self { channels, n_robots, data, label }
    }

    pub fn get(&self, robot: usize, axis: usize, channel: usize) -> f64 {
        self.data[(channel * self.n_robots + robot) * 3 + axis]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.n_robots * 3;
        &self.data[c * len..(c + 1) * len]
    }

    /// Subtract the mean position of the first sample from every entry.
    pub fn recenter(&mut self) {
        let n = self.n_robots;
        let mut centroid = [0.0; 3];
        for r in 0..n {
            for (a, c) in centroid.iter_mut().enumerate() {
                *c += self.data[r * 3 + a];
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }
        for (k, v) in self.data.iter_mut().enumerate() {
            *v -= centroid[k % 3];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl AsRef<ObservationWindow> for ObservationWindow {
    fn as_ref(&self) -> &ObservationWindow {
        self
    }
}

/// Training hyperparameters and discriminator shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnConfig {
    /// Window length W, seconds.
    pub window_seconds: f64,
    /// Discriminator sampling rate f_D, Hz.
    pub sample_rate: f64,
    pub conv_channels: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Offset in the privacy loss denominator.
    pub gamma: f64,
    /// Seed of the initial weights of a fresh discriminator.
    pub init_seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            window_seconds: 5.0,
            sample_rate: 2.0,
            conv_channels: 16,
            hidden: 512,
            learning_rate: 0.025,
            momentum: 0.9,
            batch_size: 32,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            gamma: 0.01,
            init_seed: 0,
        }
    }
}

impl NnConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((name, format!("must be > 0, got {v}")))
            }
        };
        pos("window_seconds", self.window_seconds)?;
        pos("sample_rate", self.sample_rate)?;
        pos("learning_rate", self.learning_rate)?;
        pos("bn_eps", self.bn_eps)?;
        pos("gamma", self.gamma)?;
        if self.window_channels() == 0 {
            return Err(("window_seconds", "window_seconds * sample_rate rounds to zero samples".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(("bn_momentum", format!("must lie in [0, 1], got {}", self.bn_momentum)));
        }
        for (name, v) in [("conv_channels", self.conv_channels), ("hidden", self.hidden), ("batch_size", self.batch_size)] {
            if v == 0 {
                return Err((name, "must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn window_channels(&self) -> usize {
        (self.window_seconds * self.sample_rate).round() as usize
    }

    pub fn architecture(&self, n_robots: usize) -> Architecture {
        Architecture {
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            ..Architecture::new(self.window_channels(), n_robots, self.conv_channels, self.hidden)
        }
    }

    pub fn optimizer(&self, net: &Discriminator) -> Sgd {
        Sgd::new(net, self.learning_rate, self.momentum)
    }

    /// Freshly initialized discriminator for `n_robots`, seeded by `init_seed`.
    pub fn init_net(&self, n_robots: usize) -> Discriminator {
        let mut rng = crate::seed::rng(self.init_seed, crate::seed::Stream::Init, 0);
        Discriminator::new(self.architecture(n_robots), &mut rng)
    }
}
