//! Held-out evaluation: cross-trajectory generalization and robustness to
//! observation noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::evaluate::simulate_windows;
use super::pretrain::hand_tuned_flight;
use super::CooptError;
use crate::config::WorkbenchConfig;
use crate::flocking::{Chromosome, TrajectoryKind};
use crate::nn::{accuracy, Discriminator, ObservationWindow};
use crate::seed::{self, Stream};

/// Windows of `flights` fresh flights of `chromosome` on `kind`. With
/// `random_offset` each flight draws its leader offset like a pre-training
/// flight; otherwise the chromosome flies unchanged. Flight `k` is seeded
/// from `(seed, k)`, so the same arguments give the same windows.
pub fn generate_windows(
    cfg: &WorkbenchConfig,
    kind: TrajectoryKind,
    chromosome: &Chromosome,
    random_offset: bool,
    flights: usize,
    seed: u64,
) -> Result<Vec<ObservationWindow>, CooptError> {
    let traj = cfg.coopt.shape.build(kind);
    let per_flight: Vec<Vec<ObservationWindow>> = (0..flights)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(seed, Stream::Evaluation, k as u64);
            let (chromosome, sim) = if random_offset {
                hand_tuned_flight(chromosome, &cfg.sim, &mut rng)
            } else {
                (chromosome.clone(), cfg.sim.with_seed(rng.random()))
            };
            simulate_windows(&chromosome, &traj, &sim, &cfg.nn).map(|(_, w)| w)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_flight.into_iter().flatten().collect())
}

/// Accuracy of every net on fresh flights of every trajectory kind:
/// `matrix[net][kind]`. `chromosome_for` picks the chromosome flown on each
/// kind and whether its leader offset is redrawn per flight.
pub fn eval_generalization(
    cfg: &WorkbenchConfig,
    nets: &[&Discriminator],
    kinds: &[TrajectoryKind],
    chromosome_for: impl Fn(TrajectoryKind) -> (Chromosome, bool),
    flights: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CooptError> {
    let mut columns = Vec::with_capacity(kinds.len());
    for (j, &kind) in kinds.iter().enumerate() {
        let (chromosome, random_offset) = chromosome_for(kind);
        let windows =
            generate_windows(cfg, kind, &chromosome, random_offset, flights, seed::derive(seed, Stream::Evaluation, j as u64))?;
        if windows.is_empty() {
            return Err(CooptError::config("sim.duration", "flights are shorter than one observation window"));
        }
        let accs = nets.iter().map(|net| accuracy(net, &windows)).collect::<Result<Vec<_>, _>>()?;
        columns.push(accs);
    }
    Ok((0..nets.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect())
}

/// Add independent zero-mean Gaussian noise of the given variance to every
/// coordinate, then re-center on the first sample's centroid. Because the
/// window is already centered this equals adding the noise to raw positions
/// before centering. Variance 0 returns the window unchanged.
pub fn add_noise<R: Rng + ?Sized>(window: &ObservationWindow, variance: f64, rng: &mut R) -> ObservationWindow {
    let mut out = window.clone();
    if variance == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    for v in &mut out.data {
        *v += normal.sample(rng);
    }
    out.recenter();
    out
}

/// Accuracy on `windows` with noise of each variance injected; one value per
/// variance, in order.
pub fn eval_noise_robustness(
    net: &Discriminator,
    windows: &[ObservationWindow],
    variances: &[f64],
    seed: u64,
) -> Result<Vec<f64>, CooptError> {
    assert!(!windows.is_empty(), "noise harness needs test windows");
    let mut out = Vec::with_capacity(variances.len());
    for (k, &var) in variances.iter().enumerate() {
        let mut rng = seed::rng(seed, Stream::Noise, k as u64);
        let noisy: Vec<ObservationWindow> = windows.iter().map(|w| add_noise(w, var, &mut rng)).collect();
        out.push(accuracy(net, &noisy)?);
    }
    Ok(out)
}
