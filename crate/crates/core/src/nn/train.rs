use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::loss::{argmax, cross_entropy};
use super::net::{Discriminator, Mode};
use super::optim::Sgd;
use super::{NnError, ObservationWindow};

/// Eval-mode forward passes are independent per window, so large sets are
/// split into chunks and scored in parallel.
const EVAL_CHUNK: usize = 128;

/// One shuffled pass over `data` in mini-batches. Returns the mean
/// per-window training loss.
pub fn train_epoch<W, R>(
    net: &mut Discriminator,
    opt: &mut Sgd,
    data: &[W],
    batch_size: usize,
    rng: &mut R,
) -> Result<f64, NnError>
where
    W: AsRef<ObservationWindow> + Sync,
    R: Rng + ?Sized,
{
    assert!(!data.is_empty(), "training set must be nonempty");
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&ObservationWindow> = chunk.iter().map(|&i| data[i].as_ref()).collect();
        let labels: Vec<usize> = batch.iter().map(|w| w.label).collect();
        let pass = net.forward(&batch, Mode::Train)?;
        total += net.mean_loss(&pass, &labels) * batch.len() as f64;
        let grads = net.backward(&pass, &labels);
        net.update_running_stats(&pass);
        opt.step(net, &grads);
    }
    Ok(total / data.len() as f64)
}

fn per_window<W, T, F>(net: &Discriminator, data: &[W], f: F) -> Result<Vec<T>, NnError>
where
    W: AsRef<ObservationWindow> + Sync,
    T: Send,
    F: Fn(&[f64], usize) -> T + Sync,
{
    let n = net.arch.n_robots;
    let chunks: Result<Vec<Vec<T>>, NnError> = data
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let pass = net.forward(chunk, Mode::Eval)?;
            Ok(chunk.iter().enumerate().map(|(b, w)| f(pass.logits_of(b, n), w.as_ref().label)).collect())
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

/// Fraction of windows whose most likely robot is the leader.
pub fn accuracy<W>(net: &Discriminator, data: &[W]) -> Result<f64, NnError>
where
    W: AsRef<ObservationWindow> + Sync,
{
    assert!(!data.is_empty(), "accuracy of an empty set");
    let hits = per_window(net, data, |logits, y| argmax(logits) == y)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

/// Summed eval-mode cross-entropy over a window set.
pub fn total_loss<W>(net: &Discriminator, data: &[W]) -> Result<f64, NnError>
where
    W: AsRef<ObservationWindow> + Sync,
{
    Ok(per_window(net, data, cross_entropy)?.iter().sum())
}

/// `1 / (sum of cross-entropy + gamma)`. Lower means the discriminator is
/// more confused. An empty set gives the worst value, `1 / gamma`.
pub fn privacy_loss<W>(net: &Discriminator, data: &[W], gamma: f64) -> Result<f64, NnError>
where
    W: AsRef<ObservationWindow> + Sync,
{
    Ok(1.0 / (total_loss(net, data)? + gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(arch: &Architecture, count: usize, seed: u64) -> Vec<ObservationWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| {
                let data = (0..arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                ObservationWindow::new(arch.in_channels, arch.n_robots, data, k % arch.n_robots)
            })
            .collect()
    }

    #[test]
    fn overfits_ten_samples() {
        let arch = Architecture::new(3, 4, 4, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Discriminator::new(arch, &mut rng);
        let mut opt = Sgd::new(&net, 0.025, 0.9);
        let data = toy(&arch, 10, 1);
        let mut loss = f64::INFINITY;
        for _ in 0..200 {
            loss = train_epoch(&mut net, &mut opt, &data, 32, &mut rng).unwrap();
        }
        assert!(loss < 0.1, "loss {loss}");
        assert_eq!(accuracy(&net, &data).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let arch = Architecture::new(3, 4, 4, 8);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut net = Discriminator::new(arch, &mut rng);
            let mut opt = Sgd::new(&net, 0.025, 0.9);
            let data = toy(&arch, 20, 2);
            (0..5).map(|_| train_epoch(&mut net, &mut opt, &data, 3, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_batch_when_batch_covers_set() {
        let arch = Architecture::new(3, 4, 4, 8);
        let data = toy(&arch, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Discriminator::new(arch, &mut rng);
        let start = net.clone();
        let mut opt = Sgd::new(&net, 0.025, 0.0);
        let loss = train_epoch(&mut net, &mut opt, &data, 100, &mut rng).unwrap();
        // exactly one step: compare with a manual full-batch update
        let mut manual = start.clone();
        let labels: Vec<usize> = data.iter().map(|w| w.label).collect();
        let pass = manual.forward(&data, Mode::Train).unwrap();
        let g = manual.backward(&pass, &labels);
        assert!((manual.mean_loss(&pass, &labels) - loss).abs() < 1e-12);
        let mut opt2 = Sgd::new(&manual, 0.025, 0.0);
        manual.update_running_stats(&pass);
        opt2.step(&mut manual, &g);
        for (a, b) in manual.params().iter().zip(net.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn privacy_loss_of_uniform_net() {
        let arch = Architecture::new(3, 9, 4, 8);
        let mut net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(0));
        net.fc2_w.fill(0.0);
        let data = toy(&arch, 36, 4);
        let p = privacy_loss(&net, &data, 0.01).unwrap();
        let expect = 1.0 / (36.0 * 9f64.ln() + 0.01);
        assert!((p - expect).abs() < 1e-12 * expect);
        let empty: [ObservationWindow; 0] = [];
        assert_eq!(privacy_loss(&net, &empty, 0.01).unwrap(), 100.0);
    }

    #[test]
    fn chunked_eval_matches_single_pass() {
        let arch = Architecture::new(3, 4, 4, 8);
        let net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(0));
        let data = toy(&arch, 300, 5);
        let whole = net.forward(&data, Mode::Eval).unwrap();
        let labels: Vec<usize> = data.iter().map(|w| w.label).collect();
        let direct: f64 = labels.iter().enumerate().map(|(b, &y)| cross_entropy(whole.logits_of(b, 4), y)).sum();
        assert!((total_loss(&net, &data).unwrap() - direct).abs() < 1e-9);
    }
}
