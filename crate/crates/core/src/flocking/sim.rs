use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::control::{follower_control, leader_control};
use super::{Chromosome, FlockingError, ReferenceTrajectory, Vec3};
use crate::seed::{self, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl RobotState {
    pub fn at(position: Vec3) -> Self {
        Self { position, velocity: Vec3::ZERO }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_robots: usize,
    /// Sensing range R, meters. Caps every neighborhood radius.
    pub sensing_range: f64,
    /// Flight duration T, seconds.
    pub duration: f64,
    /// Control and sampling rate f_R, Hz.
    pub control_rate: f64,
    /// Look-ahead distance along the trajectory, meters.
    pub lookahead: f64,
    /// Velocity saturation, m/s.
    pub v_max: f64,
    /// Grid pitch of the initial formation, meters.
    pub formation_spacing: f64,
    /// Seeds the assignment of robot ids to formation slots.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_robots: 9,
            sensing_range: 10.0,
            duration: 180.0,
            control_rate: 2.0,
            lookahead: 3.0,
            v_max: 2.5,
            formation_spacing: 3.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_robots < 2 {
            return Err(format!("n_robots must be >= 2, got {}", self.n_robots));
        }
        let positive = [
            ("sensing_range", self.sensing_range),
            ("duration", self.duration),
            ("control_rate", self.control_rate),
            ("lookahead", self.lookahead),
            ("v_max", self.v_max),
            ("formation_spacing", self.formation_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate
    }

    /// Number of recorded snapshots, `round(T * f_R)`.
    pub fn steps(&self) -> usize {
        (self.duration * self.control_rate).round() as usize
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Positions and velocities of every robot at every snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    /// `states[k][i]`: robot `i` at time `k / f_R`.
    pub states: Vec<Vec<RobotState>>,
    pub leader_index: usize,
    /// The leader's projected arc position at each snapshot.
    pub leader_arc: Vec<f64>,
    pub config: SimConfig,
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.states.len()
    }

    pub fn n_robots(&self) -> usize {
        self.config.n_robots
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.config.control_rate
    }

    /// Arc position of the leader's look-ahead target at snapshot `k`.
    pub fn target_arc(&self, k: usize) -> f64 {
        self.leader_arc[k] + self.config.lookahead
    }
}

/// Formation slots on a square grid of side `ceil(sqrt(n))`, row-major,
/// skipping the center cell of odd grids. Returns the slots and the grid
/// half-extent.
fn grid_slots(n_followers: usize, n_robots: usize, spacing: f64) -> (Vec<[f64; 2]>, f64) {
    let side = (n_robots as f64).sqrt().ceil() as usize;
    let half = (side as f64 - 1.0) / 2.0;
    let center = (side % 2 == 1).then_some(side / 2);
    let mut slots = Vec::with_capacity(n_followers);
    'outer: for r in 0..side {
        for c in 0..side {
            if center == Some(r) && center == Some(c) {
                continue;
            }
            if slots.len() == n_followers {
                break 'outer;
            }
            slots.push([(c as f64 - half) * spacing, (r as f64 - half) * spacing]);
        }
    }
    (slots, half * spacing)
}

/// Initial formation: followers on a planar grid centered at `origin`, the
/// leader at `(init_x * E, init_y * E)` from the center where `E` is the grid
/// half-extent. Robot ids are assigned to slots by a permutation drawn from
/// `config.seed`. Returns the states and the leader's id.
pub fn initial_placement(
    config: &SimConfig,
    origin: Vec3,
    init_x: f64,
    init_y: f64,
) -> Result<(Vec<RobotState>, usize), FlockingError> {
    config.validate().map_err(FlockingError::Config)?;
    let n = config.n_robots;
    let (slots, extent) = grid_slots(n - 1, n, config.formation_spacing);
    let mut leader = [init_x * extent, init_y * extent];
    let clashes = |p: [f64; 2]| {
        slots
            .iter()
            .any(|s| ((s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2)).sqrt() < 1e-3)
    };
    while clashes(leader) {
        leader[0] += config.formation_spacing / 10.0;
    }

    let mut planar: Vec<[f64; 2]> = slots;
    planar.push(leader);
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(config.seed, Stream::Experiment, 0);
    ids.shuffle(&mut rng);

    let mut states = vec![RobotState::default(); n];
    for (slot, &id) in planar.iter().zip(&ids) {
        states[id] = RobotState::at(Vec3::new(origin.x + slot[0], origin.y + slot[1], origin.z));
    }
    Ok((states, ids[n - 1]))
}

/// Forward-Euler simulation with synchronous control updates.
///
/// Snapshot `k` holds positions at `t = k / f_R` and the velocity commanded
/// at the previous step (zero initially).
pub fn simulate(
    chromosome: &Chromosome,
    traj: &ReferenceTrajectory,
    config: &SimConfig,
) -> Result<SimTrace, FlockingError> {
    chromosome
        .validate(config.sensing_range)
        .map_err(FlockingError::Chromosome)?;
    let (mut states, leader) = initial_placement(
        config,
        traj.shape.origin,
        chromosome.leader.init_x,
        chromosome.leader.init_y,
    )?;
    let q = config.steps();
    let dt = config.dt();
    let step_reach = 2.0 * config.v_max * dt + 1.0;
    // wide enough to find the path from anywhere in the initial formation
    let initial_reach = 4.0 * config.formation_spacing * (config.n_robots as f64).sqrt() + config.lookahead;

    let mut trace_states = Vec::with_capacity(q);
    let mut arcs = Vec::with_capacity(q);
    let mut arc = 0.0;
    let mut controls = vec![Vec3::ZERO; config.n_robots];

    for k in 0..q {
        let reach = if k == 0 { initial_reach } else { step_reach };
        arc = traj.project_forward(states[leader].position, arc, reach);
        arcs.push(arc);
        trace_states.push(states.clone());
        if k + 1 == q {
            break;
        }
        for (i, u) in controls.iter_mut().enumerate() {
            *u = if i == leader {
                leader_control(
                    &states,
                    i,
                    &chromosome.leader,
                    traj,
                    arc,
                    config.lookahead,
                    config.sensing_range,
                    config.v_max,
                )
            } else {
                follower_control(&states, i, &chromosome.follower, config.sensing_range, config.v_max)
            };
        }
        for (i, (s, &u)) in states.iter_mut().zip(&controls).enumerate() {
            s.position += u * dt;
            s.velocity = u;
            if !s.is_finite() {
                return Err(FlockingError::NonFinite { step: k + 1, robot: i });
            }
        }
    }

    Ok(SimTrace { states: trace_states, leader_index: leader, leader_arc: arcs, config: config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flocking::TrajectoryShape;
    use crate::flocking::TrajectoryKind;

    fn cfg(n: usize) -> SimConfig {
        SimConfig { n_robots: n, ..SimConfig::default() }
    }

    #[test]
    fn nine_robot_grid_skips_center() {
        let (states, leader) = initial_placement(&cfg(9), Vec3::ZERO, 0.0, 0.0).unwrap();
        assert_eq!(states.len(), 9);
        assert_eq!(states[leader].position, Vec3::ZERO);
        let followers: Vec<Vec3> =
            (0..9).filter(|&i| i != leader).map(|i| states[i].position).collect();
        assert_eq!(followers.len(), 8);
        for p in &followers {
            assert!(p.x.abs() <= 3.0 && p.y.abs() <= 3.0);
            assert!(p.norm() >= 3.0 - 1e-12);
            assert_eq!(p.x % 3.0, 0.0);
            assert_eq!(p.y % 3.0, 0.0);
        }
        assert!(states.iter().all(|s| s.velocity == Vec3::ZERO));
    }

    #[test]
    fn leader_offset_maps_to_grid_edge() {
        // (1, 0) lands on the +x edge slot, so the leader is nudged outward.
        let (states, leader) = initial_placement(&cfg(9), Vec3::ZERO, 1.0, 0.0).unwrap();
        let p = states[leader].position;
        assert!((p.x - 3.3).abs() < 1e-12, "{p:?}");
        assert_eq!(p.y, 0.0);
        let (states, leader) = initial_placement(&cfg(9), Vec3::ZERO, 0.5, -0.5).unwrap();
        assert_eq!(states[leader].position, Vec3::new(1.5, -1.5, 0.0));
    }

    #[test]
    fn placement_centered_on_origin() {
        let o = Vec3::new(10.0, -4.0, 2.0);
        let (states, leader) = initial_placement(&cfg(9), o, 0.0, 0.0).unwrap();
        assert_eq!(states[leader].position, o);
        let c: Vec3 = states.iter().map(|s| s.position).sum::<Vec3>() / 9.0;
        assert!((c - o).norm() < 1e-12);
    }

    #[test]
    fn seed_permutes_ids() {
        let leaders: std::collections::BTreeSet<usize> = (0..40)
            .map(|s| initial_placement(&cfg(9).with_seed(s), Vec3::ZERO, 0.0, 0.0).unwrap().1)
            .collect();
        assert!(leaders.len() > 5);
    }

    #[test]
    fn small_flocks() {
        for n in 2..=5 {
            let (states, leader) = initial_placement(&cfg(n), Vec3::ZERO, 0.3, 0.1).unwrap();
            assert_eq!(states.len(), n);
            assert!(leader < n);
        }
        assert!(initial_placement(&cfg(1), Vec3::ZERO, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_gains_hold_still() {
        let c = SimConfig { duration: 10.0, ..cfg(9) };
        let traj = TrajectoryShape::default().build(TrajectoryKind::Line);
        let trace = simulate(&Chromosome::stationary(), &traj, &c).unwrap();
        assert_eq!(trace.steps(), 20);
        for snap in &trace.states {
            assert_eq!(snap, &trace.states[0]);
        }
    }

    #[test]
    fn step_count() {
        let traj = TrajectoryShape::default().build(TrajectoryKind::Line);
        let trace = simulate(&Chromosome::hand_tuned(), &traj, &cfg(9)).unwrap();
        assert_eq!(trace.steps(), 360);
        assert_eq!(trace.leader_arc.len(), 360);
        assert_eq!(trace.time(359), 179.5);
    }

    #[test]
    fn deterministic() {
        let traj = TrajectoryShape::default().build(TrajectoryKind::Sine);
        let c = SimConfig { duration: 30.0, seed: 11, ..cfg(9) };
        let a = simulate(&Chromosome::hand_tuned(), &traj, &c).unwrap();
        let b = simulate(&Chromosome::hand_tuned(), &traj, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leader_arc_is_monotone_and_advances() {
        let traj = TrajectoryShape::default().build(TrajectoryKind::Chevron);
        let c = SimConfig { duration: 60.0, ..cfg(9) };
        let t = simulate(&Chromosome::hand_tuned(), &traj, &c).unwrap();
        assert!(t.leader_arc.windows(2).all(|w| w[1] >= w[0]));
        assert!(t.leader_arc.last().unwrap() > &10.0);
    }

    #[test]
    fn rejects_out_of_range_chromosome() {
        let traj = TrajectoryShape::default().build(TrajectoryKind::Line);
        let mut ch = Chromosome::hand_tuned();
        ch.leader.init_y = 2.0;
        assert!(matches!(simulate(&ch, &traj, &cfg(9)), Err(FlockingError::Chromosome(_))));
    }
}
