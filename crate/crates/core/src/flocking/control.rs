//! Reynolds flocking terms and the leader's tracking controller.
//!
//! The scale function that turns a position offset into a velocity is the
//! identity (unit gain, 1/s); the evolved gains absorb any scaling.

use super::{FollowerParams, LeaderParams, ReferenceTrajectory, RobotState, Vec3};

/// Tracking targets closer than this produce no tracking term.
pub const TRACKING_SINGULARITY: f64 = 1e-9;

/// Indices of all robots other than `i` within `radius` of robot `i`.
pub fn neighborhood(states: &[RobotState], i: usize, radius: f64) -> Vec<usize> {
    let pi = states[i].position;
    states
        .iter()
        .enumerate()
        .filter(|&(j, s)| j != i && s.position.distance(pi) <= radius)
        .map(|(j, _)| j)
        .collect()
}

/// Mean repulsion `(p_i - p_j) / |p_i - p_j|^2` over neighbors within `r_sep`.
/// Coincident robots and robots at exactly `r_sep` count towards the mean but
/// contribute zero.
pub fn separation_velocity(states: &[RobotState], i: usize, r_sep: f64) -> Vec3 {
    let hood = neighborhood(states, i, r_sep);
    if hood.is_empty() {
        return Vec3::ZERO;
    }
    let pi = states[i].position;
    let sum: Vec3 = hood
        .iter()
        .map(|&j| {
            let d = pi - states[j].position;
            let dist2 = d.norm_squared();
            if dist2 > 0.0 && dist2.sqrt() < r_sep {
                d / dist2
            } else {
                Vec3::ZERO
            }
        })
        .sum();
    sum / hood.len() as f64
}

/// Mean neighbor velocity within `r_align`; the robot's own velocity when it
/// has no neighbors.
pub fn alignment_velocity(states: &[RobotState], i: usize, r_align: f64) -> Vec3 {
    let hood = neighborhood(states, i, r_align);
    if hood.is_empty() {
        return states[i].velocity;
    }
    let sum: Vec3 = hood.iter().map(|&j| states[j].velocity).sum();
    sum / hood.len() as f64
}

/// Mean offset towards neighbors within `r_coh`.
pub fn cohesion_velocity(states: &[RobotState], i: usize, r_coh: f64) -> Vec3 {
    let hood = neighborhood(states, i, r_coh);
    if hood.is_empty() {
        return Vec3::ZERO;
    }
    let pi = states[i].position;
    let sum: Vec3 = hood.iter().map(|&j| states[j].position - pi).sum();
    sum / hood.len() as f64
}

/// Unclipped weighted sum of the three Reynolds terms. Radii are capped at
/// the sensing range.
fn flocking_sum(states: &[RobotState], i: usize, p: &FollowerParams, sensing_range: f64) -> Vec3 {
    let mut u = Vec3::ZERO;
    if p.alpha_sep != 0.0 {
        u += separation_velocity(states, i, p.r_sep.min(sensing_range)) * p.alpha_sep;
    }
    if p.alpha_align != 0.0 {
        u += alignment_velocity(states, i, p.r_align.min(sensing_range)) * p.alpha_align;
    }
    if p.alpha_coh != 0.0 {
        u += cohesion_velocity(states, i, p.r_coh.min(sensing_range)) * p.alpha_coh;
    }
    u
}

/// Velocity command of a follower, norm-clipped to `v_max`.
pub fn follower_control(
    states: &[RobotState],
    i: usize,
    params: &FollowerParams,
    sensing_range: f64,
    v_max: f64,
) -> Vec3 {
    flocking_sum(states, i, params, sensing_range).clamp_norm(v_max)
}

/// Proportional pull of magnitude `omega` from `position` towards `target`.
pub fn tracking_velocity(position: Vec3, target: Vec3, omega: f64) -> Vec3 {
    let d = target - position;
    let n = d.norm();
    if n < TRACKING_SINGULARITY {
        Vec3::ZERO
    } else {
        d * (omega / n)
    }
}

/// Leader command: its own flocking terms plus tracking towards the point
/// `lookahead` meters past `leader_arc` on the trajectory.
pub fn leader_control(
    states: &[RobotState],
    l: usize,
    params: &LeaderParams,
    traj: &ReferenceTrajectory,
    leader_arc: f64,
    lookahead: f64,
    sensing_range: f64,
    v_max: f64,
) -> Vec3 {
    let target = traj.point(leader_arc + lookahead);
    let u = flocking_sum(states, l, &params.flocking, sensing_range)
        + tracking_velocity(states[l].position, target, params.omega);
    u.clamp_norm(v_max)
}
