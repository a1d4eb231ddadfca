//! Sparse variational GP head with an RBF kernel.
//!
//! The variational posterior over the inducing outputs is `q(u) = N(m, S)`
//! with `S = L L^T`. Positive quantities (diagonal of `L`, lengthscale,
//! output scale, noise variance) are stored unconstrained and mapped through
//! softplus.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky_jittered, inv_softplus, sigmoid, softplus, sq_dists};
use crate::error::ModelError;

/// Floor added to the softplus-mapped noise variance.
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpHead {
    /// Inducing locations in feature space, `M x d`.
    pub inducing: DMatrix<f64>,
    pub var_mean: DVector<f64>,
    /// Lower-triangular factor of the variational covariance with the
    /// diagonal stored pre-softplus. Entries above the diagonal are unused
    /// and kept at zero.
    pub var_chol_raw: DMatrix<f64>,
    pub raw_lengthscale: f64,
    pub raw_outputscale: f64,
    pub raw_noise: f64,
}

/// Gradient of a head's objective with respect to its own parameters and to
/// the features it was evaluated on.
#[derive(Debug, Clone)]
pub struct HeadGrad {
    pub features: DMatrix<f64>,
    pub inducing: DMatrix<f64>,
    pub var_mean: DVector<f64>,
    pub var_chol_raw: DMatrix<f64>,
    pub raw_lengthscale: f64,
    pub raw_outputscale: f64,
    pub raw_noise: f64,
}

#[derive(Debug, Clone)]
pub struct HeadEval {
    pub value: f64,
    pub kl: f64,
    pub grad: Option<HeadGrad>,
}

impl SvgpHead {
    pub fn new<R: Rng + ?Sized>(
        num_inducing: usize,
        feature_dim: usize,
        lengthscale: f64,
        outputscale: f64,
        noise: f64,
        rng: &mut R,
    ) -> Self {
        let inducing =
            DMatrix::from_fn(num_inducing, feature_dim, |_, _| rng.sample(StandardNormal));
        let mut head = SvgpHead {
            inducing,
            var_mean: DVector::zeros(num_inducing),
            var_chol_raw: DMatrix::zeros(num_inducing, num_inducing),
            raw_lengthscale: inv_softplus(lengthscale),
            raw_outputscale: inv_softplus(outputscale),
            raw_noise: inv_softplus(noise - NOISE_FLOOR),
        };
        head.set_var_chol(&DMatrix::identity(num_inducing, num_inducing));
        head
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.inducing.ncols()
    }

    pub fn num_params(&self) -> usize {
        let m = self.num_inducing();
        m * self.feature_dim() + m + m * (m + 1) / 2 + 3
    }

    pub fn lengthscale(&self) -> f64 {
        softplus(self.raw_lengthscale)
    }

    pub fn outputscale(&self) -> f64 {
        softplus(self.raw_outputscale)
    }

    pub fn noise_variance(&self) -> f64 {
        softplus(self.raw_noise) + NOISE_FLOOR
    }

    pub fn set_lengthscale(&mut self, v: f64) {
        self.raw_lengthscale = inv_softplus(v);
    }

    pub fn set_outputscale(&mut self, v: f64) {
        self.raw_outputscale = inv_softplus(v);
    }

    pub fn set_noise_variance(&mut self, v: f64) {
        self.raw_noise = inv_softplus(v - NOISE_FLOOR);
    }

    pub fn var_chol(&self) -> DMatrix<f64> {
        let m = self.num_inducing();
        DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.var_chol_raw[(i, j)],
            std::cmp::Ordering::Equal => softplus(self.var_chol_raw[(i, i)]),
            std::cmp::Ordering::Less => 0.0,
        })
    }

    /// Sets the variational factor from a lower-triangular matrix with a
    /// positive diagonal.
    pub fn set_var_chol(&mut self, l: &DMatrix<f64>) {
        let m = self.num_inducing();
        self.var_chol_raw = DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => l[(i, j)],
            std::cmp::Ordering::Equal => inv_softplus(l[(i, i)]),
            std::cmp::Ordering::Less => 0.0,
        });
    }

    pub fn var_cov(&self) -> DMatrix<f64> {
        let l = self.var_chol();
        &l * l.transpose()
    }

    /// RBF kernel matrix between the rows of `a` and `b`.
    pub fn kernel(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ls = self.lengthscale();
        let s2 = self.outputscale().powi(2);
        sq_dists(a, b).map(|d2| s2 * (-0.5 * d2 / (ls * ls)).exp())
    }

    /// Latent predictive mean and variance at the rows of `features`.
    pub fn predict_latent(
        &self,
        features: &DMatrix<f64>,
        jitter: f64,
    ) -> Result<(DVector<f64>, DVector<f64>), ModelError> {
        let kzz = self.kernel(&self.inducing, &self.inducing);
        let (chol, _) = cholesky_jittered(&kzz, jitter)?;
        let kzb = self.kernel(&self.inducing, features);
        let a = chol.solve(&kzb);
        let mean = a.transpose() * &self.var_mean;
        let l = self.var_chol();
        let lta = l.transpose() * &a;
        let s2 = self.outputscale().powi(2);
        let var = DVector::from_fn(features.nrows(), |i, _| {
            let quad = kzb.column(i).dot(&a.column(i));
            let spread = lta.column(i).norm_squared();
            (s2 - quad + spread).max(0.0)
        });
        Ok((mean, var))
    }

    /// `KL[q(u) || p(u)]` with `p(u) = N(0, K_ZZ)`.
    pub fn kl(&self, jitter: f64) -> Result<f64, ModelError> {
        let kzz = self.kernel(&self.inducing, &self.inducing);
        let (chol, _) = cholesky_jittered(&kzz, jitter)?;
        let q = chol.inverse();
        let l = self.var_chol();
        let s = &l * l.transpose();
        Ok(kl_terms(
            &q,
            &chol_logdet(&chol.l()),
            &s,
            &l,
            &self.var_mean,
        ))
    }

    /// Mini-batch evidence lower bound contribution of this head:
    /// `scale * sum_i E_q[log N(y_i | f_i, noise)] - KL`, where `scale` is
    /// the dataset size over the batch size. The expected log-likelihood is
    /// evaluated in closed form. With `want_grad`, the gradient with respect
    /// to every head parameter and to the input features is returned.
    pub fn elbo(
        &self,
        features: &DMatrix<f64>,
        targets: &DVector<f64>,
        scale: f64,
        jitter: f64,
        want_grad: bool,
    ) -> Result<HeadEval, ModelError> {
        let b = features.nrows();
        if b == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if targets.len() != b || features.ncols() != self.feature_dim() {
            return Err(ModelError::Shape(format!(
                "features {}x{}, targets {}, inducing dim {}",
                b,
                features.ncols(),
                targets.len(),
                self.feature_dim()
            )));
        }
        let m_ind = self.num_inducing();
        let ls = self.lengthscale();
        let s = self.outputscale();
        let s2 = s * s;
        let noise = self.noise_variance();

        let kzz_raw = self.kernel(&self.inducing, &self.inducing);
        let (chol, _) = cholesky_jittered(&kzz_raw, jitter)?;
        let q = chol.inverse();
        let kzb = self.kernel(&self.inducing, features);
        let a = &q * &kzb;
        let m = &self.var_mean;
        let mu = a.transpose() * m;
        let l = self.var_chol();
        let sm = &l * l.transpose();
        let sa = &sm * &a;

        let var = DVector::from_fn(b, |i, _| {
            s2 - kzb.column(i).dot(&a.column(i)) + a.column(i).dot(&sa.column(i))
        });
        let resid = targets - &mu;
        let ell: f64 = (0..b)
            .map(|i| {
                -0.5 * (2.0 * PI * noise).ln() - (resid[i] * resid[i] + var[i]) / (2.0 * noise)
            })
            .sum();
        let kl = kl_terms(&q, &chol_logdet(&chol.l()), &sm, &l, m);
        let value = scale * ell - kl;
        if !value.is_finite() {
            return Err(ModelError::NonFinite {
                context: "head ELBO".into(),
            });
        }
        if !want_grad {
            return Ok(HeadEval {
                value,
                kl,
                grad: None,
            });
        }

        // d value / d mu_i and d value / d var_i
        let g = resid.map(|r| scale * r / noise);
        let w = -scale / (2.0 * noise);

        let qm = &q * m;
        let d_mean = &a * &g - &qm;

        let aat = &a * a.transpose();
        let gs_data = aat * w;
        let mut d_l = (&gs_data * &l) * 2.0 - &q * &l;
        for i in 0..m_ind {
            d_l[(i, i)] += 1.0 / l[(i, i)];
        }
        let mut d_chol_raw = DMatrix::zeros(m_ind, m_ind);
        for i in 0..m_ind {
            for j in 0..i {
                d_chol_raw[(i, j)] = d_l[(i, j)];
            }
            d_chol_raw[(i, i)] = d_l[(i, i)] * sigmoid(self.var_chol_raw[(i, i)]);
        }

        let qsa = &q * &sa;
        let d_kzb = &qm * g.transpose() + (qsa - &a) * (2.0 * w);

        let h = (&kzb * kzb.transpose()) * w;
        let hqs = &h * &q * &sm;
        let d_q = &kzb * &g * m.transpose() + &hqs + hqs.transpose()
            - &h
            - (&sm + m * m.transpose()) * 0.5;
        let d_kzz_full = -(&q * &d_q * &q) - &q * 0.5;
        let d_kzz = (&d_kzz_full + d_kzz_full.transpose()) * 0.5;

        let d_noise: f64 = (0..b)
            .map(|i| {
                scale * (-0.5 / noise + (resid[i] * resid[i] + var[i]) / (2.0 * noise * noise))
            })
            .sum();

        // kernel backprop
        let ls2 = ls * ls;
        let mut d_ls = 0.0;
        let mut d_s = w * b as f64 * 2.0 * s;
        let mut d_inducing = DMatrix::zeros(m_ind, self.feature_dim());
        let mut d_features = DMatrix::zeros(b, self.feature_dim());
        let dist_zz = sq_dists(&self.inducing, &self.inducing);
        for ia in 0..m_ind {
            for ib in 0..m_ind {
                let k = kzz_raw[(ia, ib)];
                let gk = d_kzz[(ia, ib)];
                d_ls += gk * k * dist_zz[(ia, ib)] / (ls2 * ls);
                d_s += gk * 2.0 * k / s;
                if ia != ib {
                    let coef = -2.0 * gk * k / ls2;
                    for c in 0..self.feature_dim() {
                        d_inducing[(ia, c)] +=
                            coef * (self.inducing[(ia, c)] - self.inducing[(ib, c)]);
                    }
                }
            }
        }
        let dist_zb = sq_dists(&self.inducing, features);
        for ia in 0..m_ind {
            for i in 0..b {
                let k = kzb[(ia, i)];
                let gk = d_kzb[(ia, i)];
                d_ls += gk * k * dist_zb[(ia, i)] / (ls2 * ls);
                d_s += gk * 2.0 * k / s;
                let coef = -gk * k / ls2;
                for c in 0..self.feature_dim() {
                    let diff = self.inducing[(ia, c)] - features[(i, c)];
                    d_inducing[(ia, c)] += coef * diff;
                    d_features[(i, c)] -= coef * diff;
                }
            }
        }

        Ok(HeadEval {
            value,
            kl,
            grad: Some(HeadGrad {
                features: d_features,
                inducing: d_inducing,
                var_mean: d_mean,
                var_chol_raw: d_chol_raw,
                raw_lengthscale: d_ls * sigmoid(self.raw_lengthscale),
                raw_outputscale: d_s * sigmoid(self.raw_outputscale),
                raw_noise: d_noise * sigmoid(self.raw_noise),
            }),
        })
    }

    /// Appends parameters in canonical order: inducing (row-major), variational
    /// mean, lower triangle of the raw factor (row-major), then the raw
    /// lengthscale, output scale and noise.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for i in 0..self.inducing.nrows() {
            out.extend(self.inducing.row(i).iter());
        }
        out.extend(self.var_mean.iter());
        for i in 0..self.num_inducing() {
            for j in 0..=i {
                out.push(self.var_chol_raw[(i, j)]);
            }
        }
        out.extend([self.raw_lengthscale, self.raw_outputscale, self.raw_noise]);
    }

    /// Inverse of [`SvgpHead::write_params`]; returns the number of values read.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut it = src.iter().copied();
        let mut next = || it.next().expect("parameter slice too short");
        let (m, d) = (self.num_inducing(), self.feature_dim());
        for i in 0..m {
            for c in 0..d {
                self.inducing[(i, c)] = next();
            }
        }
        for i in 0..m {
            self.var_mean[i] = next();
        }
        for i in 0..m {
            for j in 0..=i {
                self.var_chol_raw[(i, j)] = next();
            }
        }
        self.raw_lengthscale = next();
        self.raw_outputscale = next();
        self.raw_noise = next();
        self.num_params()
    }
}

impl HeadGrad {
    /// Same ordering as [`SvgpHead::write_params`].
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for i in 0..self.inducing.nrows() {
            out.extend(self.inducing.row(i).iter());
        }
        out.extend(self.var_mean.iter());
        let m = self.var_mean.len();
        for i in 0..m {
            for j in 0..=i {
                out.push(self.var_chol_raw[(i, j)]);
            }
        }
        out.extend([self.raw_lengthscale, self.raw_outputscale, self.raw_noise]);
    }
}

fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn kl_terms(
    q: &DMatrix<f64>,
    logdet_k: &f64,
    s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    m: &DVector<f64>,
) -> f64 {
    let trace = q.component_mul(s).sum();
    let maha = m.dot(&(q * m));
    let logdet_s = chol_logdet(l);
    0.5 * (trace + maha - m.len() as f64 + logdet_k - logdet_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(seed: u64) -> SvgpHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SvgpHead::new(5, 3, 1.3, 0.9, 0.05, &mut rng)
    }

    fn set_prior(h: &mut SvgpHead) {
        let kzz = h.kernel(&h.inducing, &h.inducing);
        let (chol, _) = cholesky_jittered(&kzz, 1e-6).unwrap();
        h.var_mean.fill(0.0);
        h.set_var_chol(&chol.l());
    }

    #[test]
    fn kl_vanishes_at_prior() {
        let mut h = head(1);
        set_prior(&mut h);
        assert!(h.kl(1e-6).unwrap().abs() < 1e-10);
    }

    #[test]
    fn kl_gradient_in_mean_vanishes_at_prior() {
        let mut h = head(2);
        set_prior(&mut h);
        let f = DMatrix::from_element(1, 3, 0.3);
        let y = DVector::from_element(1, 0.7);
        let eval = h.elbo(&f, &y, 0.0, 1e-6, true).unwrap();
        let g = eval.grad.unwrap();
        assert!(g.var_mean.amax() < 1e-10);
        assert!(eval.value.abs() < 1e-10);
    }

    #[test]
    fn limiting_prediction_at_inducing_point() {
        let mut h = head(3);
        h.var_mean.fill(0.0);
        h.set_var_chol(&(DMatrix::identity(5, 5) * 1e-7));
        let f = DMatrix::from_fn(1, 3, |_, c| h.inducing[(2, c)]);
        let (mean, var) = h.predict_latent(&f, 1e-10).unwrap();
        assert!(mean[0].abs() < 1e-12);
        assert!(var[0] < 1e-6, "{}", var[0]);
    }

    #[test]
    fn closed_form_expected_loglik_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut h = head(4);
        h.var_mean = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let f = DMatrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_element(1, 0.4);
        let eval = h.elbo(&f, &y, 1.0, 1e-6, false).unwrap();
        let ell = eval.value + eval.kl;
        let (mu, var) = h.predict_latent(&f, 1e-6).unwrap();
        let noise = h.noise_variance();
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let fs = mu[0] + var[0].sqrt() * z;
            acc += -0.5 * (2.0 * PI * noise).ln() - (0.4 - fs).powi(2) / (2.0 * noise);
        }
        let mc = acc / n as f64;
        // standard error of the estimator is well under 1% of |ell| here
        assert!((mc - ell).abs() < 0.02 * ell.abs(), "mc {mc} closed {ell}");
    }

    #[test]
    fn batch_replication_doubles_data_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = head(6);
        let f = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let single = h.elbo(&f, &y, 10.0 / 4.0, 1e-6, false).unwrap();
        let f2 = DMatrix::from_fn(8, 3, |i, c| f[(i % 4, c)]);
        let y2 = DVector::from_fn(8, |i, _| y[i % 4]);
        let double = h.elbo(&f2, &y2, 20.0 / 8.0, 1e-6, false).unwrap();
        let data1 = single.value + single.kl;
        let data2 = double.value + double.kl;
        assert!((data2 - 2.0 * data1).abs() < 1e-9 * data1.abs().max(1.0));
    }

    #[test]
    fn param_roundtrip() {
        let h = head(9);
        let mut p = Vec::new();
        h.write_params(&mut p);
        assert_eq!(p.len(), h.num_params());
        let mut h2 = head(10);
        assert_eq!(h2.read_params(&p), p.len());
        assert_eq!(h, h2);
    }
}
