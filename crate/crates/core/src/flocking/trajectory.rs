//! Reference trajectories followed by the leader.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Line,
    Sine,
    Chevron,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 3] = [TrajectoryKind::Line, TrajectoryKind::Sine, TrajectoryKind::Chevron];

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::Line => "line",
            TrajectoryKind::Sine => "sine",
            TrajectoryKind::Chevron => "chevron",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(TrajectoryKind::Line),
            "sine" => Ok(TrajectoryKind::Sine),
            "chevron" => Ok(TrajectoryKind::Chevron),
            other => Err(format!("unknown trajectory kind `{other}` (expected line, sine or chevron)")),
        }
    }
}

/// Shape parameters shared by every trajectory kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryShape {
    pub origin: Vec3,
    /// Planar direction of travel; normalized on use.
    pub heading: [f64; 2],
    /// Lateral amplitude of the sine, meters.
    pub amplitude: f64,
    /// Sine wavelength or chevron leg length, meters.
    pub period_length: f64,
    /// Height of the path above `origin.z`, meters.
    pub altitude: f64,
    /// Chevron leg angle relative to the heading, degrees.
    pub chevron_angle_deg: f64,
}

impl Default for TrajectoryShape {
    fn default() -> Self {
        Self {
            origin: Vec3::ZERO,
            heading: [1.0, 0.0],
            amplitude: 5.0,
            period_length: 30.0,
            altitude: 0.0,
            chevron_angle_deg: 45.0,
        }
    }
}

impl TrajectoryShape {
    pub fn validate(&self) -> Result<(), String> {
        let n = (self.heading[0].powi(2) + self.heading[1].powi(2)).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err("heading must be a nonzero finite 2-vector".into());
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(format!("amplitude must be >= 0, got {}", self.amplitude));
        }
        if !(self.period_length > 0.0 && self.period_length.is_finite()) {
            return Err(format!("period_length must be > 0, got {}", self.period_length));
        }
        if !(0.0..90.0).contains(&self.chevron_angle_deg) {
            return Err(format!("chevron_angle_deg must lie in [0, 90), got {}", self.chevron_angle_deg));
        }
        if !self.origin.is_finite() || !self.altitude.is_finite() {
            return Err("origin and altitude must be finite".into());
        }
        Ok(())
    }

    pub fn build(&self, kind: TrajectoryKind) -> ReferenceTrajectory {
        ReferenceTrajectory::new(kind, self.clone())
    }
}

/// A reference path parameterized by a scalar arc position in meters.
///
/// Line and chevron are parameterized by true arc length. The sine is
/// parameterized by distance travelled along the heading, so its lateral
/// offset vanishes at every multiple of the wavelength.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub kind: TrajectoryKind,
    pub shape: TrajectoryShape,
    heading: [f64; 2],
    lateral: [f64; 2],
}

impl ReferenceTrajectory {
    pub fn new(kind: TrajectoryKind, shape: TrajectoryShape) -> Self {
        let n = (shape.heading[0].powi(2) + shape.heading[1].powi(2)).sqrt();
        let heading = [shape.heading[0] / n, shape.heading[1] / n];
        let lateral = [-heading[1], heading[0]];
        Self { kind, shape, heading, lateral }
    }

    pub fn line(origin: Vec3, heading: [f64; 2], altitude: f64) -> Self {
        Self::new(
            TrajectoryKind::Line,
            TrajectoryShape { origin, heading, altitude, ..TrajectoryShape::default() },
        )
    }

    pub fn heading(&self) -> [f64; 2] {
        self.heading
    }

    fn planar(&self, forward: f64, side: f64) -> Vec3 {
        let o = self.shape.origin;
        Vec3::new(
            o.x + forward * self.heading[0] + side * self.lateral[0],
            o.y + forward * self.heading[1] + side * self.lateral[1],
            o.z + self.shape.altitude,
        )
    }

    /// Point on the path at the given arc position (negative values clamp to 0).
    pub fn point(&self, arc: f64) -> Vec3 {
        let s = arc.max(0.0);
        match self.kind {
            TrajectoryKind::Line => self.planar(s, 0.0),
            TrajectoryKind::Sine => {
                let phase = 2.0 * std::f64::consts::PI * s / self.shape.period_length;
                self.planar(s, self.shape.amplitude * phase.sin())
            }
            TrajectoryKind::Chevron => {
                let leg = self.shape.period_length;
                let (sin_a, cos_a) = self.shape.chevron_angle_deg.to_radians().sin_cos();
                let k = (s / leg).floor();
                let u = s - k * leg;
                let forward = s * cos_a;
                let side = if (k as u64) % 2 == 0 { u * sin_a } else { (leg - u) * sin_a };
                self.planar(forward, side)
            }
        }
    }

    /// Monotone projection: the arc position in `[from, from + span]` whose
    /// path point is closest to `p`, resolved on a fixed grid.
    pub fn project_forward(&self, p: Vec3, from: f64, span: f64) -> f64 {
        const STEP: f64 = 0.01;
        let from = from.max(0.0);
        let samples = (span / STEP).ceil().max(1.0) as usize;
        let mut best = from;
        let mut best_d = self.point(from).distance(p);
        for k in 1..=samples {
            let s = from + k as f64 * STEP;
            let d = self.point(s).distance(p);
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec3, b: Vec3) -> bool {
        a.distance(b) < 1e-12
    }

    #[test]
    fn line_point() {
        let t = ReferenceTrajectory::line(Vec3::ZERO, [1.0, 0.0], 2.0);
        assert!(close(t.point(3.0), Vec3::new(3.0, 0.0, 2.0)));
    }

    #[test]
    fn sine_zero_at_wavelength_multiples() {
        let t = TrajectoryShape::default().build(TrajectoryKind::Sine);
        for k in 0..5 {
            let p = t.point(30.0 * k as f64);
            assert!(p.y.abs() < 1e-9, "k={k}: {p:?}");
            assert!((p.x - 30.0 * k as f64).abs() < 1e-12);
        }
        assert!((t.point(7.5).y - 5.0).abs() < 1e-12);
    }

    #[test]
    fn chevron_first_vertex_at_one_leg() {
        let t = TrajectoryShape::default().build(TrajectoryKind::Chevron);
        let h = 30.0 * std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(t.point(30.0), Vec3::new(h, h, 0.0)));
        assert!((t.point(60.0).y).abs() < 1e-9);
        // direction changes at the vertex
        let before = t.point(30.0) - t.point(29.0);
        let after = t.point(31.0) - t.point(30.0);
        assert!(before.y > 0.0 && after.y < 0.0);
        // legs have unit speed in arc length
        assert!((before.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heading_is_normalized() {
        let t = ReferenceTrajectory::line(Vec3::new(1.0, 1.0, 0.0), [0.0, 2.0], 0.0);
        assert!(close(t.point(4.0), Vec3::new(1.0, 5.0, 0.0)));
    }

    #[test]
    fn projection_is_monotone_and_nearest() {
        let t = ReferenceTrajectory::line(Vec3::ZERO, [1.0, 0.0], 0.0);
        let s = t.project_forward(Vec3::new(4.2, 1.0, 0.0), 0.0, 10.0);
        assert!((s - 4.2).abs() < 1e-9);
        // never moves backwards
        let s = t.project_forward(Vec3::new(1.0, 0.0, 0.0), 3.0, 5.0);
        assert_eq!(s, 3.0);
    }

    #[test]
    fn kind_parse() {
        assert_eq!("sine".parse::<TrajectoryKind>().unwrap(), TrajectoryKind::Sine);
        assert!("zigzag".parse::<TrajectoryKind>().is_err());
    }
}
