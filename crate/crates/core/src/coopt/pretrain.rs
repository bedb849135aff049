use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::evaluate::simulate_windows;
use super::CooptError;
use crate::config::WorkbenchConfig;
use crate::flocking::{Chromosome, SimConfig};
use crate::nn::{accuracy, train_epoch, Discriminator, ObservationWindow, Sgd};
use crate::seed::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainReport {
    pub train_flights: usize,
    pub test_flights: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// One flight of a hand-tuned chromosome: the leader offset is drawn
/// uniformly from `[-1, 1]^2`, then the simulation seed.
pub fn hand_tuned_flight<R: Rng + ?Sized>(base: &Chromosome, sim: &SimConfig, rng: &mut R) -> (Chromosome, SimConfig) {
    let chromosome = base.with_leader_offset(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
    (chromosome, sim.with_seed(rng.random()))
}

/// Pre-train on hand-tuned flights. Flights cycle through the configured
/// trajectory kinds, each with its hand-tuned chromosome and a leader offset
/// drawn uniformly from `[-1, 1]^2`. Flights (not windows) are split into
/// train and test sets so that no flight contributes to both.
pub fn pretrain(cfg: &WorkbenchConfig, net: &mut Discriminator, opt: &mut Sgd) -> Result<PretrainReport, CooptError> {
    let p = &cfg.coopt.pretrain;
    let master = cfg.coopt.seed;
    let mut plan = Vec::with_capacity(p.sample_count);
    for k in 0..p.sample_count {
        let kind = p.trajectories[k % p.trajectories.len()];
        let base = p
            .chromosome_for(kind)
            .ok_or_else(|| CooptError::config("coopt.pretrain", format!("no hand-tuned chromosome for `{kind}`")))?;
        let (chromosome, sim) = hand_tuned_flight(base, &cfg.sim, &mut seed::rng(master, Stream::Pretrain, k as u64));
        plan.push((kind, chromosome, sim));
    }
    let flights: Vec<Vec<ObservationWindow>> = plan
        .par_iter()
        .map(|(kind, chromosome, sim)| {
            let traj = cfg.coopt.shape.build(*kind);
            simulate_windows(chromosome, &traj, sim, &cfg.nn).map(|(_, w)| w)
        })
        .collect::<Result<_, _>>()?;

    let mut order: Vec<usize> = (0..flights.len()).collect();
    order.shuffle(&mut seed::rng(master, Stream::Pretrain, u64::MAX));
    let n_test = ((flights.len() as f64) * p.test_fraction).round() as usize;
    let (test_ids, train_ids) = order.split_at(n_test);
    let gather = |ids: &[usize]| -> Vec<&ObservationWindow> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.iter().flat_map(|&i| flights[i].iter()).collect()
    };
    let train = gather(train_ids);
    let test = gather(test_ids);
    if train.is_empty() || test.is_empty() {
        return Err(CooptError::config(
            "coopt.pretrain.sample_count",
            format!(
                "{} flights give {} training and {} test windows; both sets need windows",
                flights.len(),
                train.len(),
                test.len()
            ),
        ));
    }

    let mut rng = seed::rng(master, Stream::Training, u64::MAX);
    let mut epoch_losses = Vec::with_capacity(p.epochs);
    for _ in 0..p.epochs {
        epoch_losses.push(train_epoch(net, opt, &train, cfg.nn.batch_size, &mut rng)?);
    }
    Ok(PretrainReport {
        train_flights: train_ids.len(),
        test_flights: test_ids.len(),
        train_windows: train.len(),
        test_windows: test.len(),
        epoch_losses,
        train_accuracy: accuracy(net, &train)?,
        test_accuracy: accuracy(net, &test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorkbenchConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_epochs_split_and_counts() {
        let mut cfg = WorkbenchConfig::default();
        cfg.sim.duration = 20.0;
        cfg.nn.hidden = 16;
        cfg.coopt.pretrain.sample_count = 10;
        cfg.coopt.pretrain.epochs = 0;
        let mut net = Discriminator::new(cfg.nn.architecture(9), &mut ChaCha8Rng::seed_from_u64(0));
        let mut opt = cfg.nn.optimizer(&net);
        let r = pretrain(&cfg, &mut net, &mut opt).unwrap();
        assert_eq!((r.train_flights, r.test_flights), (8, 2));
        assert_eq!((r.train_windows, r.test_windows), (32, 8));
        assert!(r.epoch_losses.is_empty());
    }

    #[test]
    fn too_few_flights_is_a_config_error() {
        let mut cfg = WorkbenchConfig::default();
        cfg.sim.duration = 10.0;
        cfg.nn.hidden = 16;
        cfg.coopt.pretrain.sample_count = 1;
        let mut net = Discriminator::new(cfg.nn.architecture(9), &mut ChaCha8Rng::seed_from_u64(0));
        let mut opt = cfg.nn.optimizer(&net);
        assert!(matches!(pretrain(&cfg, &mut net, &mut opt), Err(CooptError::Config { .. })));
    }
}
