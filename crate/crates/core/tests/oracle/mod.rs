//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the metric or gradient code it
//! checks; everything is recomputed from raw arrays.
#![allow(dead_code)]

use privflock::nn::{Discriminator, Mode, ObservationWindow};

/// Plain-array snapshot: positions and velocities per robot.
pub struct Snap {
    pub p: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn alignment(s: &Snap) -> f64 {
    let n = s.v.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i == j || norm(s.v[i]) == 0.0 || norm(s.v[j]) == 0.0 {
                continue;
            }
            total += dot(s.v[i], s.v[j]) / (norm(s.v[i]) * norm(s.v[j]));
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

pub fn nearest(s: &Snap) -> Vec<f64> {
    let n = s.p.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| norm(sub(s.p[i], s.p[j])))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let t = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / t;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / t)
}

/// Distance from `x` to the closed band `[lo, hi]`.
pub fn band_penalty(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        0.0
    } else {
        (x - lo).abs().min((x - hi).abs())
    }
}

/// Brute-force metrics vector and loss for a trace given as snapshots plus
/// the leader's look-ahead target at each step.
pub fn flocking_loss(
    snaps: &[Snap],
    leader: usize,
    targets: &[[f64; 3]],
    b: &[f64; 9],
    r_lo: f64,
    r_hi: f64,
    v_min: f64,
) -> (f64, [f64; 9]) {
    let align: Vec<f64> = snaps.iter().map(alignment).collect();
    let mut min_sp = Vec::new();
    let mut sp_var = Vec::new();
    for s in snaps {
        let d = nearest(s);
        let (m, v) = mean_var(&d);
        min_sp.push(m);
        sp_var.push(v);
    }
    let track: Vec<f64> = snaps.iter().zip(targets).map(|(s, t)| norm(sub(s.p[leader], *t))).collect();
    let speed: Vec<f64> = snaps
        .iter()
        .map(|s| {
            let mut sum = [0.0; 3];
            for v in &s.v {
                for a in 0..3 {
                    sum[a] += v[a];
                }
            }
            norm(sum) / s.v.len() as f64
        })
        .collect();
    let (am, av) = mean_var(&align);
    let (sm, sv) = mean_var(&min_sp);
    let (vm, _) = mean_var(&sp_var);
    let (tm, tv) = mean_var(&track);
    let (fm, fv) = mean_var(&speed);
    let speed_pen = if fm >= v_min { 0.0 } else { v_min - fm };
    let m = [-am, av, band_penalty(sm, r_lo, r_hi), sv, vm, tm, tv, speed_pen, fv];
    (b.iter().zip(&m).map(|(w, x)| w * x).sum(), m)
}

/// Central finite-difference gradient of the mean cross-entropy (Train-mode
/// batch statistics) with respect to every parameter, in `params()` order.
pub fn numeric_gradient(net: &Discriminator, batch: &[ObservationWindow], h: f64) -> Vec<Vec<f64>> {
    let labels: Vec<usize> = batch.iter().map(|w| w.label).collect();
    let loss = |n: &Discriminator| {
        let pass = n.forward(batch, Mode::Train).expect("forward");
        n.mean_loss(&pass, &labels)
    };
    let mut probe = net.clone();
    let mut out = Vec::new();
    for t in 0..net.params().len() {
        let len = net.params()[t].len();
        let mut g = Vec::with_capacity(len);
        for k in 0..len {
            let orig = probe.params()[t].data()[k];
            probe.params_mut()[t].data_mut()[k] = orig + h;
            let up = loss(&probe);
            probe.params_mut()[t].data_mut()[k] = orig - h;
            let down = loss(&probe);
            probe.params_mut()[t].data_mut()[k] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// Largest violation of `|a - n| <= max(rel * max(|a|, |n|), abs_floor)`,
/// as a ratio (<= 1 means within tolerance).
pub fn worst_ratio(analytic: &[f64], numeric: &[f64], rel: f64, abs_floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (rel * a.abs().max(n.abs())).max(abs_floor))
        .fold(0.0, f64::max)
}

/// The 15-dimensional sphere function.
pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
