use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeedForwardNet, NetGradients};
use crate::error::{OpeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl SgdConfig {
    /// Checks the config. `epochs == 0` is accepted and means "return the
    /// initialization unchanged".
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OpeError::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(OpeError::invalid("minibatch size must be at least 1"));
        }
        Ok(())
    }

    pub fn with_epochs(&self, epochs: usize) -> Self {
        Self {
            epochs,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// `p <- p - lr * grad(p)` for every parameter.
pub fn sgd_step(net: &mut FeedForwardNet, grads: &NetGradients, config: &SgdConfig) -> Result<()> {
    if !grads.is_finite() {
        return Err(OpeError::TrainingFault {
            epoch: 0,
            reason: "non-finite gradient".into(),
        });
    }
    if grads.weights.len() != net.layers().len() {
        return Err(OpeError::invalid("gradient shapes do not match the net"));
    }
    let lr = config.learning_rate;
    for (layer, (gw, gb)) in net
        .layers_mut()
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
    {
        if gw.data().len() != layer.weights.data().len() || gb.len() != layer.bias.len() {
            return Err(OpeError::invalid("gradient shapes do not match the net"));
        }
        for (w, g) in layer.weights.data_mut().iter_mut().zip(gw.data()) {
            *w -= lr * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
    Ok(())
}

/// One epoch's worth of shuffled minibatch index lists.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Activation, DenseMatrix, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64) -> FeedForwardNet {
        FeedForwardNet::new(vec![Layer {
            weights: DenseMatrix::new(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn cfg(lr: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn scalar_step_arithmetic() {
        let mut net = scalar_net(1.0);
        let mut g = NetGradients::zeros_like(&net);
        g.weights[0].set(0, 0, 2.0);
        sgd_step(&mut net, &g, &cfg(0.1)).unwrap();
        assert!((net.layers()[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_net_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = FeedForwardNet::random(3, &[4], 2, &mut rng).unwrap();
        let before = net.clone();
        let g = NetGradients::zeros_like(&net);
        sgd_step(&mut net, &g, &cfg(0.5)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_gradient_is_a_training_fault() {
        let mut net = scalar_net(1.0);
        let mut g = NetGradients::zeros_like(&net);
        g.biases[0][0] = f64::INFINITY;
        assert!(matches!(
            sgd_step(&mut net, &g, &cfg(0.1)),
            Err(OpeError::TrainingFault { .. })
        ));
    }

    #[test]
    fn steps_on_quadratic_reduce_loss() {
        // L(w) = 0.5 * (w x - y)^2 with x = 2, y = 1.
        let loss = |net: &FeedForwardNet| {
            let out = net.forward(&[2.0]).unwrap()[0];
            0.5 * (out - 1.0) * (out - 1.0)
        };
        let mut net = scalar_net(3.0);
        let mut prev = loss(&net);
        for _ in 0..2 {
            let out = net.forward(&[2.0]).unwrap()[0];
            let (g, _) = net.backward(&[2.0], &[out - 1.0]).unwrap();
            sgd_step(&mut net, &g, &cfg(0.05)).unwrap();
            let now = loss(&net);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0).validate().is_err());
        assert!(SgdConfig {
            batch_size: 0,
            ..SgdConfig::default()
        }
        .validate()
        .is_err());
        assert!(SgdConfig::default().validate().is_ok());
    }

    #[test]
    fn minibatches_cover_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = minibatches(10, 3, &mut rng);
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
