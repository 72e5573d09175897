use serde::{Deserialize, Serialize};

use super::{DenseMatrix, FeedForwardNet};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
        Some(v)
    } else {
        None
    }
}

/// Deterministic, non-degenerate starting vector for power iteration.
fn start_vector(len: usize) -> Vec<f64> {
    let v = (0..len)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_75).fract())
        .collect();
    normalized(v).unwrap_or_default()
}

/// Runs `iterations` rounds of power iteration starting from `u` (length =
/// rows). Returns the singular value estimate; `u` is updated in place.
fn power_iterate(m: &DenseMatrix, u: &mut Vec<f64>, iterations: usize) -> f64 {
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let Some(v) = normalized(m.matvec_transposed(u)) else {
            return 0.0;
        };
        let wv = m.matvec(&v);
        sigma = norm(&wv);
        match normalized(wv) {
            Some(next) => *u = next,
            None => return 0.0,
        }
    }
    sigma
}

/// Power-iteration estimate of the largest singular value.
pub fn spectral_norm_estimate(m: &DenseMatrix, iterations: usize) -> f64 {
    let mut u = start_vector(m.rows());
    power_iterate(m, &mut u, iterations.max(1))
}

/// Divides `weights` by its estimated largest singular value. A zero matrix is
/// returned unchanged.
pub fn spectral_normalize(weights: &DenseMatrix, power_iterations: usize) -> DenseMatrix {
    let sigma = spectral_norm_estimate(weights, power_iterations);
    let mut out = weights.clone();
    if sigma > 0.0 {
        out.scale(1.0 / sigma);
    }
    out
}

/// Persistent left singular vectors, one per layer, so that a single power
/// iteration per training step tracks the spectral norm as weights drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralNormalizer {
    vectors: Vec<Vec<f64>>,
    iterations: usize,
}

impl SpectralNormalizer {
    pub fn new(net: &FeedForwardNet, iterations: usize) -> Self {
        Self {
            vectors: net
                .layers()
                .iter()
                .map(|l| start_vector(l.out_dim()))
                .collect(),
            iterations: iterations.max(1),
        }
    }

    /// Rescales every weight matrix of `net` to unit estimated spectral norm.
    pub fn apply(&mut self, net: &mut FeedForwardNet) {
        for (layer, u) in net.layers_mut().iter_mut().zip(&mut self.vectors) {
            let sigma = power_iterate(&layer.weights, u, self.iterations);
            if sigma > 0.0 {
                layer.weights.scale(1.0 / sigma);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_matrix_normalizes_to_unit_top_singular_value() {
        let m = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let n = spectral_normalize(&m, 30);
        let expected = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!(n.max_abs_diff(&expected) < 1e-2);
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let m = DenseMatrix::identity(3);
        assert!(spectral_normalize(&m, 5).max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = DenseMatrix::new(3, 4, data).unwrap();
        let mut big = m.clone();
        big.scale(10.0);
        let a = spectral_normalize(&m, 50);
        let b = spectral_normalize(&big, 50);
        assert!(a.max_abs_diff(&b) < 1e-2);
    }

    #[test]
    fn zero_matrix_is_unchanged() {
        let m = DenseMatrix::zeros(2, 3);
        assert_eq!(spectral_normalize(&m, 3), m);
    }

    #[test]
    fn normalized_random_matrices_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (r, c) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let data = (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m = DenseMatrix::new(r, c, data).unwrap();
            let n = spectral_normalize(&m, 100);
            let est = spectral_norm_estimate(&n, 100);
            assert!((est - 1.0).abs() < 1e-2, "estimate {est}");
        }
    }

    #[test]
    fn persistent_normalizer_converges_over_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut net = FeedForwardNet::random(6, &[5], 4, &mut rng).unwrap();
        let mut sn = SpectralNormalizer::new(&net, 1);
        for _ in 0..30 {
            sn.apply(&mut net);
        }
        for layer in net.layers() {
            let est = spectral_norm_estimate(&layer.weights, 200);
            assert!((est - 1.0).abs() < 1e-2, "estimate {est}");
        }
    }
}
