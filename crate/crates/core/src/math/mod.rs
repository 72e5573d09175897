//! Dense numerical kernel: matrices, a small fully connected network with
//! backpropagation, plain SGD and spectral normalization.

mod matrix;
mod net;
mod sgd;
mod spectral;

pub use matrix::DenseMatrix;
pub use net::{Activation, FeedForwardNet, ForwardTrace, Layer, NetGradients, NetShape};
pub use sgd::{minibatches, sgd_step, SgdConfig};
pub use spectral::{spectral_norm_estimate, spectral_normalize, SpectralNormalizer};
