//! Central finite-difference check of the ELBO gradient on small randomized
//! models.

use musel_core::backbone::{Model, ModelConfig, Sample};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradReport {
    pub worst_rel: f64,
    pub worst_index: usize,
    pub coords: usize,
}

/// A 4 -> 6 -> 4 feature net with 3 inducing points per head, with the
/// variational and kernel parameters moved off their initial values.
pub fn small_model(seed: u64) -> (Model, Vec<Sample>) {
    let config = ModelConfig {
        layer_sizes: vec![4, 6, 4],
        num_inducing: 3,
        ..ModelConfig::default()
    };
    let mut model = Model::init(seed, config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for head in &mut model.heads {
        for v in head.inducing.iter_mut() {
            *v *= 0.3;
        }
        for v in head.var_mean.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let l = DMatrix::from_fn(3, 3, |i, j| {
            if i > j {
                rng.random_range(-0.3..0.3)
            } else if i == j {
                rng.random_range(0.3..1.0)
            } else {
                0.0
            }
        });
        head.set_var_chol(&l);
        head.set_lengthscale(rng.random_range(0.7..1.5));
        head.set_outputscale(rng.random_range(0.7..1.5));
        head.set_noise_variance(rng.random_range(0.05..0.3));
    }
    let data = (0..10)
        .map(|_| {
            let a: f64 = rng.random_range(-1.0..1.0);
            Sample {
                x: [
                    a.sin(),
                    a.cos(),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
                y: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            }
        })
        .collect();
    (model, data)
}

pub fn check_gradient(model: &Model, data: &[Sample], n_total: usize, h: f64) -> GradReport {
    let grad = model.gradients(data, n_total).unwrap();
    let base = model.params();
    let mut probe = model.clone();
    let mut worst_rel: f64 = 0.0;
    let mut worst_index = 0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p).unwrap();
        let up = probe.elbo(data, n_total).unwrap();
        p[i] = base[i] - h;
        probe.set_params(&p).unwrap();
        let down = probe.elbo(data, n_total).unwrap();
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-8);
        if rel > worst_rel {
            worst_rel = rel;
            worst_index = i;
        }
    }
    GradReport {
        worst_rel,
        worst_index,
        coords: base.len(),
    }
}
