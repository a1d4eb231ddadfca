use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::feature_net::FeatureNet;
use super::svgp::SvgpHead;
use crate::error::ModelError;
use crate::rng::{stream, StreamPurpose};

pub const INPUT_DIM: usize = 4;
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature extractor widths, input first.
    pub layer_sizes: Vec<usize>,
    pub num_inducing: usize,
    pub init_lengthscale: f64,
    pub init_outputscale: f64,
    pub init_noise: f64,
    pub jitter: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Number of least-visited samples trained on per epoch.
    pub m_train: usize,
    /// Targets are divided by this before training; predictions are scaled back.
    pub output_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer_sizes: vec![INPUT_DIM, 32, 64, 32],
            num_inducing: 20,
            init_lengthscale: 1.0,
            init_outputscale: 1.0,
            init_noise: 0.01,
            jitter: 1e-6,
            learning_rate: 5e-3,
            batch_size: 64,
            m_train: 2000,
            output_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Shape(m.to_string()));
        if self.layer_sizes.len() < 2 || self.layer_sizes[0] != INPUT_DIM {
            return bad("layer sizes must start with the input dimension 4");
        }
        if self.layer_sizes.contains(&0) || self.num_inducing == 0 {
            return bad("layer widths and inducing count must be positive");
        }
        if self.batch_size == 0 || self.m_train == 0 {
            return bad("batch size and m_train must be positive");
        }
        if !(self.init_lengthscale > 0.0
            && self.init_outputscale > 0.0
            && self.init_noise > super::svgp::NOISE_FLOOR
            && self.output_scale > 0.0
            && self.learning_rate > 0.0
            && self.jitter >= 0.0)
        {
            return bad("scales, rates and noise must be positive");
        }
        Ok(())
    }
}

/// One training pair: encoded input and effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: [f64; INPUT_DIM],
    pub y: [f64; OUTPUT_DIM],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: [f64; OUTPUT_DIM],
    /// Per-output predictive standard deviation, observation noise included.
    pub std: [f64; OUTPUT_DIM],
}

impl Prediction {
    /// Euclidean norm of the per-output standard deviations.
    pub fn total_std(&self) -> f64 {
        self.std[0].hypot(self.std[1])
    }
}

/// Deep-kernel regression model: a shared feature extractor feeding one
/// sparse variational GP head per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub net: FeatureNet,
    pub heads: Vec<SvgpHead>,
    /// Training visits per dataset sample, indexed by insertion order.
    pub visits: Vec<u64>,
    pub optimizer: Adam,
}

impl Model {
    pub fn init(seed: u64, config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream(seed, StreamPurpose::ModelInit);
        let net = FeatureNet::new(&config.layer_sizes, &mut rng);
        let d = net.output_dim();
        let heads = (0..OUTPUT_DIM)
            .map(|_| {
                SvgpHead::new(
                    config.num_inducing,
                    d,
                    config.init_lengthscale,
                    config.init_outputscale,
                    config.init_noise,
                    &mut rng,
                )
            })
            .collect::<Vec<_>>();
        let n = net.num_params() + heads.iter().map(SvgpHead::num_params).sum::<usize>();
        let optimizer = Adam::new(n, config.learning_rate);
        Ok(Model {
            config,
            seed,
            net,
            heads,
            visits: Vec::new(),
            optimizer,
        })
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.heads.iter().map(SvgpHead::num_params).sum::<usize>()
    }

    /// Flat parameter vector: network layers (weights row-major, then bias),
    /// then each head in order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.net.layers {
            for r in 0..layer.weight.nrows() {
                out.extend(layer.weight.row(r).iter());
            }
            out.extend(layer.bias.iter());
        }
        for h in &self.heads {
            h.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), ModelError> {
        if p.len() != self.num_params() {
            return Err(ModelError::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.net.layers {
            let (rows, cols) = layer.weight.shape();
            for r in 0..rows {
                for c in 0..cols {
                    layer.weight[(r, c)] = p[off];
                    off += 1;
                }
            }
            for b in layer.bias.iter_mut() {
                *b = p[off];
                off += 1;
            }
        }
        for h in &mut self.heads {
            off += h.read_params(&p[off..]);
        }
        Ok(())
    }

    pub fn forward_features(&self, x: &[f64; INPUT_DIM]) -> DVector<f64> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: &[f64; INPUT_DIM]) -> Result<Prediction, ModelError> {
        Ok(self.predict_batch(std::slice::from_ref(x))?[0])
    }

    /// Predictions for many inputs, sharing one kernel factorisation per head.
    pub fn predict_batch(&self, xs: &[[f64; INPUT_DIM]]) -> Result<Vec<Prediction>, ModelError> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let x = DMatrix::from_fn(xs.len(), INPUT_DIM, |i, c| xs[i][c]);
        let (features, _) = self.net.forward_batch(&x);
        let scale = self.config.output_scale;
        let mut out = vec![
            Prediction {
                mean: [0.0; OUTPUT_DIM],
                std: [0.0; OUTPUT_DIM],
            };
            xs.len()
        ];
        for (h, head) in self.heads.iter().enumerate() {
            let (mean, var) = head.predict_latent(&features, self.config.jitter)?;
            let noise = head.noise_variance();
            for (i, p) in out.iter_mut().enumerate() {
                p.mean[h] = mean[i] * scale;
                p.std[h] = (var[i] + noise).sqrt() * scale;
            }
        }
        if out
            .iter()
            .any(|p| !(p.mean.iter().chain(&p.std).all(|v| v.is_finite())))
        {
            return Err(ModelError::NonFinite {
                context: "prediction".into(),
            });
        }
        Ok(out)
    }

    fn batch_matrices(&self, batch: &[Sample]) -> (DMatrix<f64>, Vec<DVector<f64>>) {
        let x = DMatrix::from_fn(batch.len(), INPUT_DIM, |i, c| batch[i].x[c]);
        let scale = self.config.output_scale;
        let ys = (0..OUTPUT_DIM)
            .map(|h| DVector::from_fn(batch.len(), |i, _| batch[i].y[h] / scale))
            .collect();
        (x, ys)
    }

    /// Mini-batch ELBO summed over heads, with the data term scaled by
    /// `n_total / batch.len()`.
    pub fn elbo(&self, batch: &[Sample], n_total: usize) -> Result<f64, ModelError> {
        self.evaluate(batch, n_total, false).map(|(v, _)| v)
    }

    /// Gradient of [`Model::elbo`] in the order of [`Model::params`].
    pub fn gradients(&self, batch: &[Sample], n_total: usize) -> Result<Vec<f64>, ModelError> {
        self.evaluate(batch, n_total, true)
            .map(|(_, g)| g.expect("gradient requested"))
    }

    pub fn elbo_and_gradients(
        &self,
        batch: &[Sample],
        n_total: usize,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        self.evaluate(batch, n_total, true)
            .map(|(v, g)| (v, g.expect("gradient requested")))
    }

    fn evaluate(
        &self,
        batch: &[Sample],
        n_total: usize,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let scale = n_total as f64 / batch.len() as f64;
        let (x, ys) = self.batch_matrices(batch);
        let (features, cache) = self.net.forward_batch(&x);
        let mut value = 0.0;
        let mut d_features = DMatrix::zeros(features.nrows(), features.ncols());
        let mut head_grads = Vec::new();
        for (head, y) in self.heads.iter().zip(&ys) {
            let eval = head.elbo(&features, y, scale, self.config.jitter, want_grad)?;
            value += eval.value;
            if let Some(g) = eval.grad {
                d_features += &g.features;
                head_grads.push(g);
            }
        }
        if !value.is_finite() {
            return Err(ModelError::NonFinite {
                context: "ELBO".into(),
            });
        }
        if !want_grad {
            return Ok((value, None));
        }
        let net_grads = self.net.backward(&cache, &d_features);
        let mut out = Vec::with_capacity(self.num_params());
        for g in &net_grads {
            for r in 0..g.weight.nrows() {
                out.extend(g.weight.row(r).iter());
            }
            out.extend(g.bias.iter());
        }
        for g in &head_grads {
            g.write_params(&mut out);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                context: "ELBO gradient".into(),
            });
        }
        Ok((value, Some(out)))
    }

    /// One prioritised epoch: picks the `m_train` least-visited samples
    /// (older samples first on ties), shuffles them, and takes one ascent step
    /// per mini-batch. Returns the mean of `-ELBO / N` over the batches.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        data: &[Sample],
        rng: &mut R,
    ) -> Result<f64, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n = data.len();
        self.visits.resize(n, 0);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (self.visits[i], i));
        order.truncate(self.config.m_train.min(n));
        order.shuffle(rng);

        let mut params = self.params();
        let mut losses = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i]).collect();
            let (value, grad) = self.elbo_and_gradients(&batch, n)?;
            self.optimizer.ascend(&mut params, &grad);
            self.set_params(&params)?;
            for &i in chunk {
                self.visits[i] += 1;
            }
            losses.push(-value / n as f64);
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}
