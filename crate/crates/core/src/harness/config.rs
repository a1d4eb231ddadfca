use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::al_loop::{LoopConfig, Strategy};
use crate::backbone::ModelConfig;
use crate::env::{TaskVariant, WorldConfig};
use crate::error::HarnessError;
use crate::uncertainty::LpGridConfig;

/// Experiment description. Files are merged over [`ExperimentConfig::default`],
/// so any subset of keys may be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskVariant,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub n_iter: usize,
    pub m_init: usize,
    pub m_cand: usize,
    pub k: usize,
    /// `(alpha, pos_x, pos_y)` test-grid resolution; the task default when absent.
    pub grid_resolution: Option<[usize; 3]>,
    pub eval_interval: usize,
    pub output_dir: PathBuf,
    /// World parameters; `task` above takes precedence over `world.task`.
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub lp_grid: LpGridConfig,
    /// Save a model checkpoint every this many iterations.
    pub checkpoint_every: Option<usize>,
    /// Write the per-candidate uncertainty CSV for every iteration.
    pub uncertainty_log: bool,
    /// Boundary band width as a fraction of the table half-extent.
    pub band_fraction: f64,
    pub boundary_checkpoints: Vec<usize>,
    /// Worker threads for independent runs; all cores when absent.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let model = LoopConfig::new(world.clone()).model;
        ExperimentConfig {
            task: TaskVariant::OneSphere,
            strategies: vec![Strategy::Musel, Strategy::Random],
            seeds: (0..10).collect(),
            n_iter: 3000,
            m_init: 1,
            m_cand: 500,
            k: 1,
            grid_resolution: None,
            eval_interval: 100,
            output_dir: PathBuf::from("results"),
            world,
            model,
            lp_grid: LpGridConfig::default(),
            checkpoint_every: None,
            uncertainty_log: false,
            band_fraction: 0.1,
            boundary_checkpoints: vec![500, 1000, 1500, 2000, 2500, 3000],
            threads: None,
        }
    }
}

impl ExperimentConfig {
    /// Reduced protocol: 500 iterations, 5 seeds, 200 candidates.
    pub fn desk(task: TaskVariant, strategies: Vec<Strategy>, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            task,
            strategies,
            seeds: (0..5).collect(),
            n_iter: 500,
            m_cand: 200,
            output_dir,
            boundary_checkpoints: vec![100, 200, 300, 400, 500],
            ..ExperimentConfig::default()
        }
    }

    /// Parses `text` over the defaults, then applies `key=value` overrides
    /// (dotted keys address nested fields; values are JSON, or bare strings).
    pub fn from_json_str(text: &str, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("config is not valid JSON: {e}")))?;
        let mut merged = serde_json::to_value(ExperimentConfig::default())?;
        merge(&mut merged, user);
        for (k, v) in overrides {
            set_path(&mut merged, k, v)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            task: self.task,
            ..self.world.clone()
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.grid_resolution
            .unwrap_or_else(|| default_resolution(self.task))
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            world: self.world_config(),
            model: self.model.clone(),
            lp_grid: self.lp_grid.clone(),
            m_init: self.m_init,
            m_cand: self.m_cand,
            k: self.k,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return bad("strategies must be distinct".into());
        }
        if self.resolution().contains(&0) {
            return bad("grid resolution must be positive".into());
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.band_fraction) {
            return bad("band_fraction must lie in [0, 1]".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        self.loop_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

pub fn default_resolution(task: TaskVariant) -> [usize; 3] {
    match task {
        TaskVariant::OneSphere => [25, 20, 20],
        TaskVariant::TwoSphere => [20, 25, 25],
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses a command-line `key=value` pair.
pub fn parse_override(s: &str) -> Result<(String, String), HarnessError> {
    let s = s.strip_prefix("--").unwrap_or(s);
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(HarnessError::Config(format!(
            "override {s:?} is not of the form key=value"
        ))),
    }
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<(), HarnessError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            HarnessError::Config(format!(
                "override {key:?}: {:?} is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(HarnessError::Config(format!("unknown config key {key:?}")));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| HarnessError::Config(format!("unknown config key {key:?}")))?;
    }
    unreachable!("split always yields at least one part")
}
