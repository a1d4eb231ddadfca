//! Fully connected feature extractor with rectifier activations after every
//! layer except the last.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub layers: Vec<Dense>,
}

/// Activations kept from a batched forward pass.
pub struct ForwardCache {
    /// Layer inputs, `inputs[l]` is `B x in_l`.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl FeatureNet {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation of weights
    /// and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let bias = DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound));
                Dense { weight, bias }
            })
            .collect();
        FeatureNet { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        FeatureNet { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        let mut h = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = &layer.weight * h + &layer.bias;
            if i < last {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    /// Forward pass over the rows of `x` (`B x in`), returning `B x out`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &h * layer.weight.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            inputs.push(h);
            h = z.clone();
            if i < last {
                h.apply(|v| *v = v.max(0.0));
            }
            pre.push(z);
        }
        (h, ForwardCache { inputs, pre })
    }

    /// Backpropagates `d_out` (`B x out`) to parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> Vec<DenseGrad> {
        let last = self.layers.len() - 1;
        let mut grads = vec![None; self.layers.len()];
        let mut d = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                d.zip_apply(&cache.pre[i], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let weight = d.transpose() * &cache.inputs[i];
            let bias = DVector::from_iterator(d.ncols(), d.column_iter().map(|c| c.sum()));
            if i > 0 {
                d = &d * &self.layers[i].weight;
            }
            grads[i] = Some(DenseGrad { weight, bias });
        }
        grads
            .into_iter()
            .map(|g| g.expect("every layer visited"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line reference forward pass over plain vectors.
    fn reference_forward(net: &FeatureNet, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.weight.nrows()];
            for (r, o) in out.iter_mut().enumerate() {
                let mut acc = layer.bias[r];
                for (c, hv) in h.iter().enumerate() {
                    acc += layer.weight[(r, c)] * hv;
                }
                *o = if l < last { acc.max(0.0) } else { acc };
            }
            h = out;
        }
        h
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let net = FeatureNet::zeros(&[4, 32, 64, 32]);
        let f = net.forward(&[0.3, -1.0, 0.5, 0.2]);
        assert_eq!(f.len(), 32);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_reference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = FeatureNet::new(&[4, 32, 64, 32], &mut rng);
        let xs = DMatrix::from_fn(100, 4, |_, _| rng.random_range(-1.0..1.0));
        let (batch, _) = net.forward_batch(&xs);
        for i in 0..100 {
            let x: Vec<f64> = xs.row(i).iter().copied().collect();
            let want = reference_forward(&net, &x);
            let single = net.forward(&x);
            for k in 0..32 {
                assert!((single[k] - want[k]).abs() < 1e-12);
                assert!((batch[(i, k)] - want[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_homogeneity_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = FeatureNet::new(&[4, 8, 8, 3], &mut rng);
        for l in &mut net.layers {
            l.bias.fill(0.0);
        }
        let x = [0.2, -0.4, 0.9, 0.1];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (a, b) = (net.forward(&x), net.forward(&x2));
        for k in 0..3 {
            assert!((b[k] - 2.0 * a[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count() {
        let net = FeatureNet::zeros(&[4, 32, 64, 32]);
        assert_eq!(net.num_params(), 4 * 32 + 32 + 32 * 64 + 64 + 64 * 32 + 32);
    }
}
