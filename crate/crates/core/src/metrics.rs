//! Flocking performance metrics, their temporal aggregation, and the scalar
//! flocking loss `F = b . m`.

use serde::{Deserialize, Serialize};

use crate::flocking::{ReferenceTrajectory, RobotState, SimTrace, Vec3};

/// Weights and thresholds of the flocking loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricWeights {
    pub b: [f64; 9],
    /// Acceptable mean nearest-neighbor spacing band, meters.
    pub r_lo: f64,
    pub r_hi: f64,
    /// Minimum acceptable flock speed, m/s.
    pub v_min: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self { b: [1.0; 9], r_lo: 1.0, r_hi: 5.0, v_min: 1.0 }
    }
}

impl MetricWeights {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(i) = self.b.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(format!("b[{i}] must be finite and >= 0, got {}", self.b[i]));
        }
        if !(self.r_lo < self.r_hi) {
            return Err(format!("r_lo ({}) must be < r_hi ({})", self.r_lo, self.r_hi));
        }
        if !(self.v_min >= 0.0 && self.v_min.is_finite()) {
            return Err(format!("v_min must be >= 0, got {}", self.v_min));
        }
        Ok(())
    }
}

/// The nine aggregated metrics, in loss order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsVector(pub [f64; 9]);

impl MetricsVector {
    pub const NAMES: [&'static str; 9] = [
        "neg_mean_alignment",
        "var_alignment",
        "spacing_penalty",
        "var_min_spacing",
        "mean_spacing_variance",
        "mean_tracking_error",
        "var_tracking_error",
        "speed_penalty",
        "var_flock_speed",
    ];

    pub fn neg_mean_alignment(&self) -> f64 {
        self.0[0]
    }
    pub fn spacing_penalty(&self) -> f64 {
        self.0[2]
    }
    pub fn mean_tracking_error(&self) -> f64 {
        self.0[5]
    }
    pub fn speed_penalty(&self) -> f64 {
        self.0[7]
    }

    pub fn weighted(&self, b: &[f64; 9]) -> f64 {
        self.0.iter().zip(b).map(|(m, w)| m * w).sum()
    }
}

/// Mean pairwise cosine similarity of velocities over ordered pairs. Robots
/// at rest are left out of both sums; with fewer than two moving robots the
/// result is 0.
pub fn velocity_correlation(snapshot: &[RobotState]) -> f64 {
    let moving: Vec<(Vec3, f64)> = snapshot
        .iter()
        .map(|s| (s.velocity, s.velocity.norm()))
        .filter(|&(_, n)| n > 0.0)
        .collect();
    let n = moving.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &(vi, ni)) in moving.iter().enumerate() {
        let mut row = 0.0;
        for (j, &(vj, nj)) in moving.iter().enumerate() {
            if i != j {
                row += vi.dot(vj) / (ni * nj);
            }
        }
        total += row / (n - 1) as f64;
    }
    total / n as f64
}

fn nearest_distances(snapshot: &[RobotState]) -> Vec<f64> {
    snapshot
        .iter()
        .enumerate()
        .map(|(i, a)| {
            snapshot
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| a.position.distance(b.position))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Mean over robots of the distance to the nearest other robot.
pub fn min_spacing(snapshot: &[RobotState]) -> f64 {
    let d = nearest_distances(snapshot);
    d.iter().sum::<f64>() / d.len() as f64
}

/// Zero inside the open band `(r_lo, r_hi)` and at its edges, otherwise the
/// distance to the nearer edge.
pub fn spacing_penalty(mean_min_spacing: f64, weights: &MetricWeights) -> f64 {
    let x = mean_min_spacing;
    if x >= weights.r_lo && x <= weights.r_hi {
        0.0
    } else {
        (x - weights.r_lo).abs().min((x - weights.r_hi).abs())
    }
}

/// Mean squared deviation of nearest-neighbor distances from their mean.
pub fn spacing_variance(snapshot: &[RobotState]) -> f64 {
    let d = nearest_distances(snapshot);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64
}

/// Distance from the leader to the trajectory point at `target_arc`.
pub fn tracking_error(snapshot: &[RobotState], leader: usize, traj: &ReferenceTrajectory, target_arc: f64) -> f64 {
    snapshot[leader].position.distance(traj.point(target_arc))
}

/// Speed of the center of mass: `|sum v_i| / N`.
pub fn flock_speed(snapshot: &[RobotState]) -> f64 {
    snapshot.iter().map(|s| s.velocity).sum::<Vec3>().norm() / snapshot.len() as f64
}

/// Zero above `v_min` and at it, otherwise the shortfall.
pub fn speed_penalty(mean_speed: f64, weights: &MetricWeights) -> f64 {
    if mean_speed >= weights.v_min {
        0.0
    } else {
        (mean_speed - weights.v_min).abs()
    }
}

/// Population mean and variance.
///
/// # Panics
/// On an empty series.
pub fn aggregate(series: &[f64]) -> (f64, f64) {
    assert!(!series.is_empty(), "aggregate of an empty series");
    let t = series.len() as f64;
    let mean = series.iter().sum::<f64>() / t;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
    (mean, var)
}

/// Per-snapshot metric series of a trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricSeries {
    pub alignment: Vec<f64>,
    pub min_spacing: Vec<f64>,
    pub spacing_variance: Vec<f64>,
    pub tracking_error: Vec<f64>,
    pub flock_speed: Vec<f64>,
}

pub fn metric_series(trace: &SimTrace, traj: &ReferenceTrajectory) -> MetricSeries {
    let mut s = MetricSeries::default();
    for (k, snap) in trace.states.iter().enumerate() {
        s.alignment.push(velocity_correlation(snap));
        s.min_spacing.push(min_spacing(snap));
        s.spacing_variance.push(spacing_variance(snap));
        s.tracking_error.push(tracking_error(snap, trace.leader_index, traj, trace.target_arc(k)));
        s.flock_speed.push(flock_speed(snap));
    }
    s
}

/// Aggregate per-step series into the metrics vector.
pub fn metrics_vector(series: &MetricSeries, weights: &MetricWeights) -> MetricsVector {
    let (align_mean, align_var) = aggregate(&series.alignment);
    let (spacing_mean, spacing_var) = aggregate(&series.min_spacing);
    let (spread_mean, _) = aggregate(&series.spacing_variance);
    let (track_mean, track_var) = aggregate(&series.tracking_error);
    let (speed_mean, speed_var) = aggregate(&series.flock_speed);
    MetricsVector([
        -align_mean,
        align_var,
        spacing_penalty(spacing_mean, weights),
        spacing_var,
        spread_mean,
        track_mean,
        track_var,
        speed_penalty(speed_mean, weights),
        speed_var,
    ])
}

/// Flocking loss `b . m` of a trace, together with `m`.
pub fn flocking_loss(trace: &SimTrace, traj: &ReferenceTrajectory, weights: &MetricWeights) -> (f64, MetricsVector) {
    let m = metrics_vector(&metric_series(trace, traj), weights);
    (m.weighted(&weights.b), m)
}
