//! JSON checkpoints: named parameter arrays with shape headers, plus the seed,
//! configuration, visit counters and optimizer state needed to resume.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::model::{Model, ModelConfig};
use crate::error::ModelError;

pub const FORMAT: &str = "musel-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    pub visits: Vec<u64>,
    pub optimizer: Adam,
}

fn matrix(name: String, m: &DMatrix<f64>) -> Tensor {
    let data = (0..m.nrows())
        .flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>())
        .collect();
    Tensor {
        name,
        shape: vec![m.nrows(), m.ncols()],
        data,
    }
}

fn vector(name: String, v: &DVector<f64>) -> Tensor {
    Tensor {
        name,
        shape: vec![v.len()],
        data: v.iter().copied().collect(),
    }
}

fn scalar(name: String, v: f64) -> Tensor {
    Tensor {
        name,
        shape: vec![],
        data: vec![v],
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let mut tensors = Vec::new();
        for (i, layer) in model.net.layers.iter().enumerate() {
            tensors.push(matrix(format!("net.{i}.weight"), &layer.weight));
            tensors.push(vector(format!("net.{i}.bias"), &layer.bias));
        }
        for (h, head) in model.heads.iter().enumerate() {
            tensors.push(matrix(format!("head.{h}.inducing"), &head.inducing));
            tensors.push(vector(format!("head.{h}.var_mean"), &head.var_mean));
            tensors.push(matrix(format!("head.{h}.var_chol_raw"), &head.var_chol_raw));
            tensors.push(scalar(
                format!("head.{h}.raw_lengthscale"),
                head.raw_lengthscale,
            ));
            tensors.push(scalar(
                format!("head.{h}.raw_outputscale"),
                head.raw_outputscale,
            ));
            tensors.push(scalar(format!("head.{h}.raw_noise"), head.raw_noise));
        }
        Checkpoint {
            format: FORMAT.to_string(),
            seed: model.seed,
            config: model.config.clone(),
            tensors,
            visits: model.visits.clone(),
            optimizer: model.optimizer.clone(),
        }
    }

    pub fn into_model(self) -> Result<Model, ModelError> {
        if self.format != FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        let mut model = Model::init(self.seed, self.config)?;
        let mut tensors = self.tensors.into_iter();
        let mut take = |name: String, shape: &[usize]| -> Result<Vec<f64>, ModelError> {
            let t = tensors
                .next()
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.name != name || t.shape != shape || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(ModelError::Checkpoint(format!(
                    "expected {name} with shape {shape:?}, found {} with shape {:?}",
                    t.name, t.shape
                )));
            }
            Ok(t.data)
        };
        for (i, layer) in model.net.layers.iter_mut().enumerate() {
            let (r, c) = layer.weight.shape();
            layer.weight =
                DMatrix::from_row_slice(r, c, &take(format!("net.{i}.weight"), &[r, c])?);
            layer.bias = DVector::from_vec(take(format!("net.{i}.bias"), &[r])?);
        }
        for (h, head) in model.heads.iter_mut().enumerate() {
            let (m, d) = head.inducing.shape();
            head.inducing =
                DMatrix::from_row_slice(m, d, &take(format!("head.{h}.inducing"), &[m, d])?);
            head.var_mean = DVector::from_vec(take(format!("head.{h}.var_mean"), &[m])?);
            head.var_chol_raw =
                DMatrix::from_row_slice(m, m, &take(format!("head.{h}.var_chol_raw"), &[m, m])?);
            head.raw_lengthscale = take(format!("head.{h}.raw_lengthscale"), &[])?[0];
            head.raw_outputscale = take(format!("head.{h}.raw_outputscale"), &[])?[0];
            head.raw_noise = take(format!("head.{h}.raw_noise"), &[])?[0];
        }
        if self.optimizer.first_moment.len() != model.num_params() {
            return Err(ModelError::Checkpoint(
                "optimizer state size mismatch".into(),
            ));
        }
        model.visits = self.visits;
        model.optimizer = self.optimizer;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text =
            serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}
