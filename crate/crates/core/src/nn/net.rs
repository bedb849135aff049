//! The leader discriminator:
//! `Conv2d(3x3, pad 1) -> BatchNorm2d -> ReLU -> MaxPool2d(3x3, stride 1, pad 1)
//!  -> Linear -> ReLU -> Linear`.
//!
//! Inputs are windows laid out `[channel][robot][axis]`, i.e. time samples as
//! channels over an `N x 3` spatial grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, softmax};
use super::tensor::{axpy, dot, Tensor};
use super::{NnError, ObservationWindow};

const K: usize = 3;
const AXES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Time samples per window, `f_D * W`.
    pub in_channels: usize,
    pub n_robots: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Architecture {
    pub fn new(in_channels: usize, n_robots: usize, conv_channels: usize, hidden: usize) -> Self {
        Self { in_channels, n_robots, conv_channels, hidden, bn_eps: 1e-5, bn_momentum: 0.1 }
    }

    /// Spatial positions per feature map.
    pub fn plane(&self) -> usize {
        self.n_robots * AXES
    }

    pub fn features(&self) -> usize {
        self.conv_channels * self.plane()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.plane()
    }

    /// Trainable parameters (running batch-norm statistics excluded).
    pub fn parameter_count(&self) -> usize {
        let conv = self.conv_channels * self.in_channels * K * K + self.conv_channels;
        let bn = 2 * self.conv_channels;
        let fc1 = self.hidden * self.features() + self.hidden;
        let fc2 = self.n_robots * self.hidden + self.n_robots;
        conv + bn + fc1 + fc2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics.
    Train,
    /// Batch-norm uses running statistics.
    Eval,
}

/// Trainable tensors in their fixed order.
pub const PARAM_NAMES: [&str; 8] = [
    "conv.weight",
    "conv.bias",
    "bn.weight",
    "bn.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub arch: Architecture,
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub bn_running_mean: Tensor,
    pub bn_running_var: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

/// Gradients of the trainable tensors, in `PARAM_NAMES` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub mode: Mode,
    pub batch: usize,
    /// `batch x n_robots`
    pub logits: Vec<f64>,
    input: Vec<f64>,
    xhat: Vec<f64>,
    bn_out: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    pool_arg: Vec<u32>,
    features: Vec<f64>,
    fc1_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl ForwardPass {
    pub fn logits_of(&self, b: usize, n: usize) -> &[f64] {
        &self.logits[b * n..(b + 1) * n]
    }
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

impl Discriminator {
    /// Fan-in uniform weights, zero biases, identity batch-norm.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let c = arch.conv_channels;
        let conv_bound = 1.0 / ((arch.in_channels * K * K) as f64).sqrt();
        let fc1_bound = 1.0 / (arch.features() as f64).sqrt();
        let fc2_bound = 1.0 / (arch.hidden as f64).sqrt();
        Self {
            arch,
            conv_w: uniform_tensor(&[c, arch.in_channels, K, K], conv_bound, rng),
            conv_b: Tensor::zeros(&[c]),
            bn_gamma: Tensor::filled(&[c], 1.0),
            bn_beta: Tensor::zeros(&[c]),
            bn_running_mean: Tensor::zeros(&[c]),
            bn_running_var: Tensor::filled(&[c], 1.0),
            fc1_w: uniform_tensor(&[arch.hidden, arch.features()], fc1_bound, rng),
            fc1_b: Tensor::zeros(&[arch.hidden]),
            fc2_w: uniform_tensor(&[arch.n_robots, arch.hidden], fc2_bound, rng),
            fc2_b: Tensor::zeros(&[arch.n_robots]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn params(&self) -> [&Tensor; 8] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.bn_gamma,
            &self.bn_beta,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    fn check_window(&self, w: &ObservationWindow) -> Result<(), NnError> {
        if w.channels != self.arch.in_channels || w.n_robots != self.arch.n_robots {
            return Err(NnError::Shape {
                layer: "conv.weight".into(),
                expected: vec![self.arch.in_channels, self.arch.n_robots, AXES],
                found: vec![w.channels, w.n_robots, AXES],
            });
        }
        if w.label >= self.arch.n_robots {
            return Err(NnError::Shape {
                layer: "fc2.weight".into(),
                expected: vec![self.arch.n_robots],
                found: vec![w.label + 1],
            });
        }
        Ok(())
    }

    pub fn forward<W: AsRef<ObservationWindow>>(&self, batch: &[W], mode: Mode) -> Result<ForwardPass, NnError> {
        let a = &self.arch;
        let bsz = batch.len();
        let (cin, c, plane, rows) = (a.in_channels, a.conv_channels, a.plane(), a.n_robots);

        let mut input = Vec::with_capacity(bsz * a.input_len());
        for w in batch {
            let w = w.as_ref();
            self.check_window(w)?;
            input.extend_from_slice(&w.data);
        }

        // convolution, zero padding 1
        let mut conv = vec![0.0; bsz * c * plane];
        let cw = self.conv_w.data();
        for b in 0..bsz {
            let x = &input[b * cin * plane..(b + 1) * cin * plane];
            for o in 0..c {
                let out = &mut conv[(b * c + o) * plane..(b * c + o + 1) * plane];
                out.fill(self.conv_b.data()[o]);
                for i in 0..cin {
                    let xi = &x[i * plane..(i + 1) * plane];
                    for ky in 0..K {
                        for kx in 0..K {
                            let wv = cw[((o * cin + i) * K + ky) * K + kx];
                            for y in 0..rows {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= rows as isize {
                                    continue;
                                }
                                for xx in 0..AXES {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= AXES as isize {
                                        continue;
                                    }
                                    out[y * AXES + xx] += wv * xi[sy as usize * AXES + sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }

        // batch norm
        let m = (bsz * plane) as f64;
        let mut batch_mean = vec![0.0; c];
        let mut batch_var = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        let mut xhat = vec![0.0; conv.len()];
        let mut bn_out = vec![0.0; conv.len()];
        for o in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut s = 0.0;
                    for b in 0..bsz {
                        s += conv[(b * c + o) * plane..(b * c + o + 1) * plane].iter().sum::<f64>();
                    }
                    let mean = s / m;
                    let mut v = 0.0;
                    for b in 0..bsz {
                        v += conv[(b * c + o) * plane..(b * c + o + 1) * plane]
                            .iter()
                            .map(|x| (x - mean).powi(2))
                            .sum::<f64>();
                    }
                    (mean, v / m)
                }
                Mode::Eval => (self.bn_running_mean.data()[o], self.bn_running_var.data()[o]),
            };
            batch_mean[o] = mean;
            batch_var[o] = var;
            let is = 1.0 / (var + a.bn_eps).sqrt();
            inv_std[o] = is;
            let (g, be) = (self.bn_gamma.data()[o], self.bn_beta.data()[o]);
            for b in 0..bsz {
                let r = (b * c + o) * plane..(b * c + o + 1) * plane;
                for k in r {
                    let xh = (conv[k] - mean) * is;
                    xhat[k] = xh;
                    bn_out[k] = g * xh + be;
                }
            }
        }

        // relu + max pool 3x3, stride 1, padding 1
        let mut features = vec![0.0; bsz * c * plane];
        let mut pool_arg = vec![0u32; bsz * c * plane];
        for map in 0..bsz * c {
            let src = &bn_out[map * plane..(map + 1) * plane];
            for y in 0..rows {
                for xx in 0..AXES {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for sy in y.saturating_sub(1)..(y + 2).min(rows) {
                        for sx in xx.saturating_sub(1)..(xx + 2).min(AXES) {
                            let v = src[sy * AXES + sx].max(0.0);
                            if v > best {
                                best = v;
                                arg = sy * AXES + sx;
                            }
                        }
                    }
                    features[map * plane + y * AXES + xx] = best;
                    pool_arg[map * plane + y * AXES + xx] = arg as u32;
                }
            }
        }

        // classifier
        let f = a.features();
        let h = a.hidden;
        let n = a.n_robots;
        let mut fc1_pre = vec![0.0; bsz * h];
        let mut hidden = vec![0.0; bsz * h];
        let w1 = self.fc1_w.data();
        for b in 0..bsz {
            let x = &features[b * f..(b + 1) * f];
            for j in 0..h {
                let z = self.fc1_b.data()[j] + dot(&w1[j * f..(j + 1) * f], x);
                fc1_pre[b * h + j] = z;
                hidden[b * h + j] = z.max(0.0);
            }
        }
        let mut logits = vec![0.0; bsz * n];
        let w2 = self.fc2_w.data();
        for b in 0..bsz {
            let x = &hidden[b * h..(b + 1) * h];
            for k in 0..n {
                logits[b * n + k] = self.fc2_b.data()[k] + dot(&w2[k * h..(k + 1) * h], x);
            }
        }

        Ok(ForwardPass {
            mode,
            batch: bsz,
            logits,
            input,
            xhat,
            bn_out,
            inv_std,
            batch_mean,
            batch_var,
            pool_arg,
            features,
            fc1_pre,
            hidden,
        })
    }

    /// Per-window leader likelihoods.
    pub fn likelihoods<W: AsRef<ObservationWindow>>(&self, batch: &[W], mode: Mode) -> Result<Vec<Vec<f64>>, NnError> {
        let pass = self.forward(batch, mode)?;
        let n = self.arch.n_robots;
        Ok((0..pass.batch).map(|b| softmax(pass.logits_of(b, n))).collect())
    }

    /// Mean cross-entropy of a forward pass against `labels`.
    pub fn mean_loss(&self, pass: &ForwardPass, labels: &[usize]) -> f64 {
        let n = self.arch.n_robots;
        let total: f64 = labels.iter().enumerate().map(|(b, &y)| cross_entropy(pass.logits_of(b, n), y)).sum();
        total / pass.batch as f64
    }

    /// Fold the batch statistics of a training pass into the running
    /// statistics (unbiased variance, as the conventional layer does).
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        if pass.mode != Mode::Train {
            return;
        }
        let mom = self.arch.bn_momentum;
        let count = pass.batch * self.arch.plane();
        let correction = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        let rm = self.bn_running_mean.data_mut();
        for (r, &m) in rm.iter_mut().zip(&pass.batch_mean) {
            *r = (1.0 - mom) * *r + mom * m;
        }
        let rv = self.bn_running_var.data_mut();
        for (r, &v) in rv.iter_mut().zip(&pass.batch_var) {
            *r = (1.0 - mom) * *r + mom * v * correction;
        }
    }

    /// Exact gradients of the mean cross-entropy over the batch.
    pub fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> Gradients {
        let a = &self.arch;
        let bsz = pass.batch;
        assert_eq!(labels.len(), bsz, "one label per window");
        let (cin, c, plane, rows) = (a.in_channels, a.conv_channels, a.plane(), a.n_robots);
        let (f, h, n) = (a.features(), a.hidden, a.n_robots);

        // d loss / d logits
        let mut g_logits = vec![0.0; bsz * n];
        for (b, &y) in labels.iter().enumerate() {
            let p = softmax(pass.logits_of(b, n));
            for k in 0..n {
                g_logits[b * n + k] = (p[k] - if k == y { 1.0 } else { 0.0 }) / bsz as f64;
            }
        }

        let mut g_fc2_w = Tensor::zeros(&[n, h]);
        let mut g_fc2_b = Tensor::zeros(&[n]);
        let mut g_hidden = vec![0.0; bsz * h];
        let w2 = self.fc2_w.data();
        for b in 0..bsz {
            let hb = &pass.hidden[b * h..(b + 1) * h];
            for k in 0..n {
                let g = g_logits[b * n + k];
                g_fc2_b.data_mut()[k] += g;
                axpy(g, hb, &mut g_fc2_w.data_mut()[k * h..(k + 1) * h]);
                axpy(g, &w2[k * h..(k + 1) * h], &mut g_hidden[b * h..(b + 1) * h]);
            }
        }

        let mut g_fc1_w = Tensor::zeros(&[h, f]);
        let mut g_fc1_b = Tensor::zeros(&[h]);
        let mut g_features = vec![0.0; bsz * f];
        let w1 = self.fc1_w.data();
        for b in 0..bsz {
            let xb = &pass.features[b * f..(b + 1) * f];
            for j in 0..h {
                if pass.fc1_pre[b * h + j] <= 0.0 {
                    continue;
                }
                let g = g_hidden[b * h + j];
                if g == 0.0 {
                    continue;
                }
                g_fc1_b.data_mut()[j] += g;
                axpy(g, xb, &mut g_fc1_w.data_mut()[j * f..(j + 1) * f]);
                axpy(g, &w1[j * f..(j + 1) * f], &mut g_features[b * f..(b + 1) * f]);
            }
        }

        // max pool and relu
        let mut g_bn_out = vec![0.0; bsz * c * plane];
        for map in 0..bsz * c {
            for pos in 0..plane {
                let src = map * plane + pass.pool_arg[map * plane + pos] as usize;
                if pass.bn_out[src] > 0.0 {
                    g_bn_out[src] += g_features[map * plane + pos];
                }
            }
        }

        // batch norm
        let mut g_gamma = Tensor::zeros(&[c]);
        let mut g_beta = Tensor::zeros(&[c]);
        let mut g_conv = vec![0.0; bsz * c * plane];
        let m = (bsz * plane) as f64;
        for o in 0..c {
            let gamma = self.bn_gamma.data()[o];
            let is = pass.inv_std[o];
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for b in 0..bsz {
                for k in (b * c + o) * plane..(b * c + o + 1) * plane {
                    sum_dy += g_bn_out[k];
                    sum_dy_xhat += g_bn_out[k] * pass.xhat[k];
                }
            }
            g_gamma.data_mut()[o] = sum_dy_xhat;
            g_beta.data_mut()[o] = sum_dy;
            for b in 0..bsz {
                for k in (b * c + o) * plane..(b * c + o + 1) * plane {
                    g_conv[k] = match pass.mode {
                        Mode::Train => {
                            gamma * is / m * (m * g_bn_out[k] - sum_dy - pass.xhat[k] * sum_dy_xhat)
                        }
                        Mode::Eval => gamma * is * g_bn_out[k],
                    };
                }
            }
        }

        // convolution
        let mut g_conv_w = Tensor::zeros(&[c, cin, K, K]);
        let mut g_conv_b = Tensor::zeros(&[c]);
        for b in 0..bsz {
            let x = &pass.input[b * cin * plane..(b + 1) * cin * plane];
            for o in 0..c {
                let go = &g_conv[(b * c + o) * plane..(b * c + o + 1) * plane];
                g_conv_b.data_mut()[o] += go.iter().sum::<f64>();
                for i in 0..cin {
                    let xi = &x[i * plane..(i + 1) * plane];
                    for ky in 0..K {
                        for kx in 0..K {
                            let mut acc = 0.0;
                            for y in 0..rows {
                                let sy = y as isize + ky as isize - 1;
                                if sy < 0 || sy >= rows as isize {
                                    continue;
                                }
                                for xx in 0..AXES {
                                    let sx = xx as isize + kx as isize - 1;
                                    if sx < 0 || sx >= AXES as isize {
                                        continue;
                                    }
                                    acc += go[y * AXES + xx] * xi[sy as usize * AXES + sx as usize];
                                }
                            }
                            g_conv_w.data_mut()[((o * cin + i) * K + ky) * K + kx] += acc;
                        }
                    }
                }
            }
        }

        Gradients(vec![g_conv_w, g_conv_b, g_gamma, g_beta, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn window(arch: &Architecture, seed: u64, label: usize) -> ObservationWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..arch.input_len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        ObservationWindow::new(arch.in_channels, arch.n_robots, data, label)
    }

    #[test]
    fn paper_scale_parameter_count() {
        let arch = Architecture::new(10, 9, 16, 512);
        assert_eq!(arch.features(), 432);
        assert_eq!(arch.parameter_count(), 227_801);
        let net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(net.parameter_count(), 227_801);
    }

    #[test]
    fn symmetric_net_gives_uniform_likelihoods() {
        let arch = Architecture::new(10, 9, 16, 32);
        let mut net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(1));
        net.fc2_w.fill(0.0);
        let w = ObservationWindow::new(10, 9, vec![0.0; 270], 0);
        let p = net.likelihoods(&[&w], Mode::Eval).unwrap();
        for x in &p[0] {
            assert!((x - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn likelihoods_sum_to_one() {
        let arch = Architecture::new(4, 5, 6, 16);
        let net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(2));
        let ws: Vec<_> = (0..5).map(|s| window(&arch, s, 0)).collect();
        for mode in [Mode::Train, Mode::Eval] {
            for p in net.likelihoods(&ws, mode).unwrap() {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let arch = Architecture::new(4, 5, 6, 16);
        let net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(2));
        let bad = ObservationWindow::new(3, 5, vec![0.0; 45], 0);
        match net.forward(&[&bad], Mode::Eval) {
            Err(NnError::Shape { layer, .. }) => assert_eq!(layer, "conv.weight"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicated_sample_same_gradient() {
        let arch = Architecture::new(3, 4, 4, 8);
        let net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(3));
        let w = window(&arch, 9, 2);
        let one = net.backward(&net.forward(&[&w], Mode::Eval).unwrap(), &[2]);
        let two = net.backward(&net.forward(&[&w, &w], Mode::Eval).unwrap(), &[2, 2]);
        for (a, b) in one.0.iter().zip(&two.0) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn blocked_signal_gives_zero_classifier_input_gradient() {
        let arch = Architecture::new(3, 4, 4, 8);
        let mut net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(4));
        net.conv_w.fill(0.0);
        net.conv_b.fill(0.0);
        let ws = [window(&arch, 1, 0), window(&arch, 2, 3)];
        let pass = net.forward(&ws, Mode::Train).unwrap();
        let g = net.backward(&pass, &[0, 3]);
        assert!(g.0[4].data().iter().all(|&x| x == 0.0));
        assert!(g.0[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn running_stats_update() {
        let arch = Architecture::new(3, 4, 2, 8);
        let mut net = Discriminator::new(arch, &mut ChaCha8Rng::seed_from_u64(5));
        let ws = [window(&arch, 1, 0), window(&arch, 2, 1)];
        let pass = net.forward(&ws, Mode::Train).unwrap();
        net.update_running_stats(&pass);
        let m = 2.0 * 12.0;
        for o in 0..2 {
            assert!((net.bn_running_mean.data()[o] - 0.1 * pass.batch_mean[o]).abs() < 1e-15);
            let expect = 0.9 + 0.1 * pass.batch_var[o] * m / (m - 1.0);
            assert!((net.bn_running_var.data()[o] - expect).abs() < 1e-15);
            assert!(net.bn_running_var.data()[o] > 0.0);
        }
    }
}
