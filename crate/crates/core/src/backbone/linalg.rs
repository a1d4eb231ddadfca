use nalgebra::{linalg::Cholesky, DMatrix, Dyn};

use crate::error::ModelError;

pub type Chol = Cholesky<f64, Dyn>;

/// Largest diagonal jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Cholesky factor of `k + jitter * I`, escalating the jitter by factors of
/// ten up to [`MAX_JITTER`]. Returns the factor and the jitter that worked.
pub fn cholesky_jittered(k: &DMatrix<f64>, jitter: f64) -> Result<(Chol, f64), ModelError> {
    let mut j = jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += j;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, j));
        }
        if j >= MAX_JITTER {
            return Err(ModelError::Factorization { jitter: j });
        }
        j = (j * 10.0).min(MAX_JITTER);
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
pub fn sq_dists(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut s = 0.0;
        for k in 0..a.ncols() {
            let d = a[(i, k)] - b[(j, k)];
            s += d * d;
        }
        s
    })
}
