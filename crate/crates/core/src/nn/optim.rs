use super::net::{Discriminator, Gradients};
use super::tensor::Tensor;
use super::NnError;

/// SGD with classical momentum: `v <- mu v + g`, `theta <- theta - lr v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(net: &Discriminator, learning_rate: f64, momentum: f64) -> Self {
        let velocity = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { learning_rate, momentum, velocity }
    }

    pub fn check(&self, net: &Discriminator) -> Result<(), NnError> {
        if self.velocity.len() != net.params().len() {
            return Err(NnError::Format(format!(
                "optimizer holds {} buffers, net has {} parameters",
                self.velocity.len(),
                net.params().len()
            )));
        }
        for ((v, p), name) in self.velocity.iter().zip(net.params()).zip(super::PARAM_NAMES) {
            if v.shape() != p.shape() {
                return Err(NnError::Shape {
                    layer: format!("velocity.{name}"),
                    expected: p.shape().to_vec(),
                    found: v.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn step(&mut self, net: &mut Discriminator, grads: &Gradients) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((p, v), g) in net.params_mut().into_iter().zip(&mut self.velocity).zip(&grads.0) {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }
}
