//! Exact GP regression with an RBF kernel, used as a reference for the
//! sparse variational heads.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::linalg::{cholesky_jittered, Chol};
use crate::error::ModelError;

pub struct ExactGp {
    train: DMatrix<f64>,
    chol: Chol,
    alpha: DVector<f64>,
    targets: DVector<f64>,
    lengthscale: f64,
    outputscale: f64,
    noise: f64,
}

fn rbf(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: f64, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2 = (a.row(i) - b.row(j)).norm_squared();
        s * s * (-d2 / (2.0 * ls * ls)).exp()
    })
}

impl ExactGp {
    pub fn fit(
        train: &DMatrix<f64>,
        targets: &DVector<f64>,
        lengthscale: f64,
        outputscale: f64,
        noise: f64,
    ) -> Result<Self, ModelError> {
        let mut k = rbf(train, train, lengthscale, outputscale);
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let (chol, _) = cholesky_jittered(&k, 0.0).or_else(|_| cholesky_jittered(&k, 1e-6))?;
        let alpha = chol.solve(targets);
        Ok(ExactGp {
            train: train.clone(),
            chol,
            alpha,
            targets: targets.clone(),
            lengthscale,
            outputscale,
            noise,
        })
    }

    /// Predictive mean and standard deviation (noise included) at each row.
    pub fn predict(&self, x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let ks = rbf(&self.train, x, self.lengthscale, self.outputscale);
        let mean = ks.transpose() * &self.alpha;
        let v = self.chol.solve(&ks);
        let s2 = self.outputscale * self.outputscale;
        let std = DVector::from_fn(x.nrows(), |i, _| {
            let var = s2 - ks.column(i).dot(&v.column(i));
            (var.max(0.0) + self.noise).sqrt()
        });
        (mean, std)
    }

    /// Latent (noise-free) predictive variance at each row.
    pub fn latent_variance(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let ks = rbf(&self.train, x, self.lengthscale, self.outputscale);
        let v = self.chol.solve(&ks);
        let s2 = self.outputscale * self.outputscale;
        DVector::from_fn(x.nrows(), |i, _| s2 - ks.column(i).dot(&v.column(i)))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.targets.len() as f64;
        let logdet: f64 = 2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * self.targets.dot(&self.alpha) - 0.5 * logdet - 0.5 * n * (2.0 * PI).ln()
    }
}
