use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{OpeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dense affine map followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Fully connected network: relu hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Parameter gradients with the same shapes as the net's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGradients {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &NetGradients, factor: f64) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.data_mut().iter_mut().zip(o.data()) {
                *a += factor * b;
            }
        }
        for (w, o) in self.biases.iter_mut().zip(&other.biases) {
            for (a, b) in w.iter_mut().zip(o) {
                *a += factor * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| w.scale(factor));
        self.biases
            .iter_mut()
            .flat_map(|b| b.iter_mut())
            .for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.data().iter().all(|v| v.is_finite()))
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.data().iter())
            .chain(self.biases.iter().flatten())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl FeedForwardNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| OpeError::invalid("a net needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(OpeError::invalid("final layer activation must be identity"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(OpeError::invalid(format!(
                    "layer dimensions do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.out_dim()) {
            return Err(OpeError::invalid(
                "bias length must equal layer output size",
            ));
        }
        Ok(Self { layers })
    }

    /// Relu hidden layers of the given widths and an identity output layer.
    /// Parameters are drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(OpeError::invalid("layer widths must be positive"));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect();
                let bias = (0..fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect();
                Layer {
                    weights: DenseMatrix::new(fan_out, fan_in, weights)
                        .expect("shape is consistent"),
                    bias,
                    activation: if i + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(OpeError::invalid(format!(
                "input has length {}, net expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.weights.matvec(&x);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi = layer.activation.apply(*zi + b);
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.weights.matvec(&x);
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut x, a));
            pre_activations.push(z);
        }
        Ok(ForwardTrace {
            inputs,
            pre_activations,
            output: x,
        })
    }

    /// Gradients of a scalar loss given `output_gradient = dL/d(output)`.
    /// Returns parameter gradients and `dL/d(input)`.
    pub fn backward(
        &self,
        input: &[f64],
        output_gradient: &[f64],
    ) -> Result<(NetGradients, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        let mut grads = NetGradients::zeros_like(self);
        let input_grad = self.backward_into(&trace, output_gradient, &mut grads, 1.0)?;
        Ok((grads, input_grad))
    }

    /// Accumulates `factor * dL/dθ` into `grads` and returns `dL/d(input)`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        output_gradient: &[f64],
        grads: &mut NetGradients,
        factor: f64,
    ) -> Result<Vec<f64>> {
        if output_gradient.len() != self.output_dim() {
            return Err(OpeError::invalid(format!(
                "output gradient has length {}, net outputs {}",
                output_gradient.len(),
                self.output_dim()
            )));
        }
        let mut delta = output_gradient.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre_activations[i]) {
                *d *= layer.activation.derivative(z);
            }
            let x = &trace.inputs[i];
            let gw = grads.weights[i].data_mut();
            let cols = layer.in_dim();
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let scaled = factor * d;
                for (g, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                    *g += scaled * xv;
                }
            }
            for (g, d) in grads.biases[i].iter_mut().zip(&delta) {
                *g += factor * d;
            }
            delta = layer.weights.matvec_transposed(&delta);
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weights: DenseMatrix, activation: Activation) -> FeedForwardNet {
        let out = weights.rows();
        FeedForwardNet {
            layers: vec![Layer {
                weights,
                bias: vec![0.0; out],
                activation,
            }],
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(DenseMatrix::identity(2), Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_layer_zeroes_negatives() {
        let net = single(DenseMatrix::identity(2), Activation::Relu);
        assert_eq!(net.forward(&[-1.0, 3.0]).unwrap(), vec![0.0, 3.0]);
    }

    #[test]
    fn final_relu_is_rejected() {
        let layer = Layer {
            weights: DenseMatrix::identity(2),
            bias: vec![0.0; 2],
            activation: Activation::Relu,
        };
        assert!(FeedForwardNet::new(vec![layer]).is_err());
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        let l1 = Layer {
            weights: DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 1.0]]).unwrap(),
            bias: vec![0.5, 1.0],
            activation: Activation::Relu,
        };
        // x = [1, 1]: z1 = [1 - 2 + 0.5, 0.5 + 1 + 1] = [-0.5, 2.5] -> h = [0, 2.5]
        let l2 = Layer {
            weights: DenseMatrix::from_rows(&[vec![3.0, 2.0]]).unwrap(),
            bias: vec![-1.0],
            activation: Activation::Identity,
        };
        let net = FeedForwardNet::new(vec![l1, l2]).unwrap();
        // y = 3*0 + 2*2.5 - 1 = 4
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = single(DenseMatrix::identity(2), Activation::Identity);
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.backward(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let w = DenseMatrix::from_rows(&[vec![0.3, -0.7, 1.1], vec![2.0, 0.1, -0.4]]).unwrap();
        let net = single(w, Activation::Identity);
        let x = [1.0, -2.0, 0.5];
        let g = [0.25, -1.5];
        let (grads, input_grad) = net.backward(&x, &g).unwrap();
        for (r, gr) in g.iter().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                assert_eq!(grads.weights[0].get(r, c), gr * xc);
            }
        }
        assert_eq!(grads.biases[0], g.to_vec());
        assert_eq!(input_grad, net.layers[0].weights.matvec_transposed(&g));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FeedForwardNet::random(4, &[5, 3], 2, &mut rng).unwrap();
        let (grads, input_grad) = net.backward(&[0.1, 0.2, -0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(input_grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = FeedForwardNet::random(6, &[8, 8], 3, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0, 0.0, 0.3, -0.2];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(net.forward_trace(&x).unwrap().output(), a.as_slice());
    }

    #[test]
    fn random_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FeedForwardNet::random(16, &[4], 2, &mut rng).unwrap();
        assert!(net.layers[0].weights.data().iter().all(|w| w.abs() <= 0.25));
        assert!(net.layers[1].weights.data().iter().all(|w| w.abs() <= 0.5));
        assert_eq!(net.layers[0].activation, Activation::Relu);
        assert_eq!(net.layers[1].activation, Activation::Identity);
    }
}

/// Hidden-layer widths plus whether weights are spectrally normalized during
/// training. The default is three relu layers of 64 units, so each net has
/// four weight layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub spectral_norm: bool,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            spectral_norm: true,
        }
    }
}
