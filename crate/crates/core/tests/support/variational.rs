//! SVGP-versus-exact-GP comparison with inducing inputs at the data.

use musel_core::backbone::adam::Adam;
use musel_core::backbone::{ExactGp, SvgpHead};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_features(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

/// Optimises only the variational mean and factor of `head` by full-batch
/// Adam ascent with a decaying step.
pub fn fit_variational(head: &mut SvgpHead, x: &DMatrix<f64>, y: &DVector<f64>, steps: usize) {
    let m = head.num_inducing();
    let n_var = m + m * (m + 1) / 2;
    let mut adam = Adam::new(n_var, 0.02);
    for step in 0..steps {
        adam.learning_rate = 0.02 * (1.0 - step as f64 / steps as f64) + 1e-4;
        let g = head.elbo(x, y, 1.0, 1e-6, true).unwrap().grad.unwrap();
        let mut p: Vec<f64> = head.var_mean.iter().copied().collect();
        let mut gp: Vec<f64> = g.var_mean.iter().copied().collect();
        for i in 0..m {
            for j in 0..=i {
                p.push(head.var_chol_raw[(i, j)]);
                gp.push(g.var_chol_raw[(i, j)]);
            }
        }
        adam.ascend(&mut p, &gp);
        head.var_mean.copy_from_slice(&p[..m]);
        let mut k = m;
        for i in 0..m {
            for j in 0..=i {
                head.var_chol_raw[(i, j)] = p[k];
                k += 1;
            }
        }
    }
}

pub struct Gap {
    /// Largest absolute predictive-mean difference on held-out points.
    pub mean: f64,
    /// Largest absolute predictive-std difference (noise included).
    pub std: f64,
    /// `|ELBO - log evidence|` at the fitted variational state.
    pub evidence: f64,
}

/// Frozen 3-d features, n = 50, inducing inputs at the data, unit kernel
/// hyperparameters and noise 0.1, standardized targets; 20 held-out points.
pub fn svgp_exact_gap(seed: u64, steps: usize) -> Gap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (50, 3);
    let x = random_features(n, d, &mut rng);
    let raw = DVector::from_fn(n, |i, _| (1.5 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 2)]);
    let mean = raw.mean();
    let sd = (raw.map(|v| (v - mean).powi(2)).sum() / (n as f64 - 1.0)).sqrt();
    let y = raw.map(|v| (v - mean) / sd);

    let mut head = SvgpHead::new(n, d, 1.0, 1.0, 0.1, &mut rng);
    head.inducing = x.clone();
    head.set_lengthscale(1.0);
    head.set_outputscale(1.0);
    head.set_noise_variance(0.1);
    fit_variational(&mut head, &x, &y, steps);
    let elbo = head.elbo(&x, &y, 1.0, 1e-6, false).unwrap().value;

    let test = random_features(20, d, &mut rng);
    let (lm, lv) = head.predict_latent(&test, 1e-6).unwrap();
    let gp = ExactGp::fit(&x, &y, 1.0, 1.0, 0.1).unwrap();
    let (em, es) = gp.predict(&test);
    let mut gap = Gap {
        mean: 0.0,
        std: 0.0,
        evidence: (elbo - gp.log_marginal_likelihood()).abs(),
    };
    for i in 0..20 {
        gap.mean = gap.mean.max((lm[i] - em[i]).abs());
        gap.std = gap
            .std
            .max(((lv[i] + head.noise_variance()).sqrt() - es[i]).abs());
    }
    gap
}
