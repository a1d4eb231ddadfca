//! The active-learning loop: train, draw a fresh candidate pool, score,
//! select the top `k`, execute, append.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{Model, ModelConfig, Sample};
use crate::env::{execute_and_observe, sample_input_space, Effect, InputPoint, WorldConfig};
use crate::error::{EnvError, LoopError, ModelError, UncertaintyError};
use crate::rng::{stream, StreamPurpose};
use crate::uncertainty::{estimate_model_uncertainty, LpGrid, LpGridConfig, UncertaintyBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Random,
    SigmaOnly,
    LpOnly,
    MdOnly,
    Musel,
    MuselNoSigma,
    MuselNoLp,
    MuselNoMd,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::SigmaOnly,
        Strategy::LpOnly,
        Strategy::MdOnly,
        Strategy::Musel,
        Strategy::MuselNoSigma,
        Strategy::MuselNoLp,
        Strategy::MuselNoMd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "Random",
            Strategy::SigmaOnly => "SigmaOnly",
            Strategy::LpOnly => "LpOnly",
            Strategy::MdOnly => "MdOnly",
            Strategy::Musel => "Musel",
            Strategy::MuselNoSigma => "MuselNoSigma",
            Strategy::MuselNoLp => "MuselNoLp",
            Strategy::MuselNoMd => "MuselNoMd",
        }
    }

    /// Candidate score; `None` for `Random`, which does not score.
    pub fn score(self, b: &UncertaintyBreakdown) -> Option<f64> {
        let (s, l, p) = (b.sigma, b.min_dist, b.lp);
        Some(match self {
            Strategy::Random => return None,
            Strategy::SigmaOnly => s,
            Strategy::LpOnly => p,
            Strategy::MdOnly => l,
            Strategy::Musel => s * l * p,
            Strategy::MuselNoSigma => l * p,
            Strategy::MuselNoLp => s * l,
            Strategy::MuselNoMd => s * p,
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub lp_grid: LpGridConfig,
    pub m_init: usize,
    pub m_cand: usize,
    pub k: usize,
}

impl LoopConfig {
    pub fn new(world: WorldConfig) -> Self {
        let model = ModelConfig {
            output_scale: world.half_extent[0].max(world.half_extent[1]),
            ..ModelConfig::default()
        };
        LoopConfig {
            world,
            model,
            lp_grid: LpGridConfig::default(),
            m_init: 1,
            m_cand: 500,
            k: 1,
        }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        self.world
            .validate()
            .map_err(|e| LoopError::Config(e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| LoopError::Config(e.to_string()))?;
        if self.m_init == 0 {
            return Err(LoopError::Config("m_init must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.m_cand {
            return Err(LoopError::Config(format!(
                "need 1 <= k <= m_cand, got k={} m_cand={}",
                self.k, self.m_cand
            )));
        }
        if self.lp_grid.window < 2 || self.lp_grid.bins.contains(&0) {
            return Err(LoopError::Config(
                "LP grid needs positive bins and a window of at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// An executed selection as written to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub cand_id: usize,
    pub alpha: f64,
    pub pos: [f64; 2],
    pub effect: [f64; 2],
    /// Prediction made before executing the input.
    pub prediction: [f64; 2],
    pub error: f64,
    pub region: usize,
    pub score: Option<f64>,
    pub breakdown: Option<UncertaintyBreakdown>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpUpdate {
    pub region: usize,
    pub lp: f64,
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub epoch_loss: f64,
    pub dataset_size: usize,
    pub selected: Vec<Selection>,
    pub lp_updates: Vec<LpUpdate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

/// Scored candidate, one row of the per-iteration uncertainty log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub iter: usize,
    pub cand_id: usize,
    pub alpha: f64,
    pub pos: [f64; 2],
    pub breakdown: UncertaintyBreakdown,
    pub selected: bool,
}

pub const CANDIDATE_CSV_HEADER: &str =
    "iter,cand_id,alpha,pos_x,pos_y,sigma,min_dist,lp,u_model,selected";

impl CandidateRow {
    pub fn csv_line(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.cand_id,
            self.alpha,
            self.pos[0],
            self.pos[1],
            b.sigma,
            b.min_dist,
            b.lp,
            b.u_model,
            u8::from(self.selected)
        )
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub record: RunRecord,
    /// Empty for `Random`.
    pub candidates: Vec<CandidateRow>,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub config: LoopConfig,
    pub strategy: Strategy,
    pub seed: u64,
    pub inputs: Vec<InputPoint>,
    pub effects: Vec<Effect>,
    pub model: Model,
    pub grid: LpGrid,
    /// Completed iterations.
    pub iteration: usize,
    candidate_rng: ChaCha8Rng,
    placement_rng: ChaCha8Rng,
    training_rng: ChaCha8Rng,
    samples: Vec<Sample>,
    encoded: Vec<[f64; 4]>,
}

/// `m_init` i.i.d. valid inputs.
pub fn create_set(
    cfg: &WorldConfig,
    rng: &mut ChaCha8Rng,
    m_init: usize,
) -> Result<Vec<InputPoint>, EnvError> {
    sample_input_space(cfg, rng, m_init)
}

/// Indices of the `k` largest scores, best first; ties go to the lower index.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// SHA-256 over the little-endian bytes of every `(alpha, pos, effect)` in
/// insertion order.
pub fn dataset_checksum(inputs: &[InputPoint], effects: &[Effect]) -> String {
    let mut h = Sha256::new();
    for (x, y) in inputs.iter().zip(effects) {
        for v in [x.alpha, x.pos[0], x.pos[1], y.delta[0], y.delta[1]] {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl RunState {
    /// Builds the model and executes the `m_init` seed inputs.
    pub fn new(config: LoopConfig, strategy: Strategy, seed: u64) -> Result<Self, LoopError> {
        config.validate()?;
        let model = Model::init(seed, config.model.clone())
            .map_err(|source| LoopError::Model { iter: 0, source })?;
        let grid = LpGrid::new(config.lp_grid.clone(), config.world.half_extent);
        let mut state = RunState {
            strategy,
            seed,
            inputs: Vec::new(),
            effects: Vec::new(),
            model,
            grid,
            iteration: 0,
            candidate_rng: stream(seed, StreamPurpose::Candidates),
            placement_rng: stream(seed, StreamPurpose::Placement),
            training_rng: stream(seed, StreamPurpose::Training),
            samples: Vec::new(),
            encoded: Vec::new(),
            config,
        };
        let initial = create_set(
            &state.config.world,
            &mut state.placement_rng,
            state.config.m_init,
        )
        .map_err(|source| LoopError::Env { iter: 0, source })?;
        for x in initial {
            let y = execute_and_observe(&state.config.world, &x)
                .map_err(|source| LoopError::Env { iter: 0, source })?;
            state.push(x, y);
        }
        Ok(state)
    }

    fn push(&mut self, x: InputPoint, y: Effect) {
        self.samples.push(Sample {
            x: x.encoded,
            y: y.delta,
        });
        self.encoded.push(x.encoded);
        self.inputs.push(x);
        self.effects.push(y);
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn checksum(&self) -> String {
        dataset_checksum(&self.inputs, &self.effects)
    }

    /// Uncertainty breakdown for `candidates` under the current state.
    pub fn score_candidates(
        &self,
        candidates: &[InputPoint],
    ) -> Result<Vec<UncertaintyBreakdown>, UncertaintyError> {
        estimate_model_uncertainty(&self.model, &self.grid, &self.encoded, candidates)
    }

    /// One loop iteration.
    pub fn run_iteration(&mut self) -> Result<IterationOutput, LoopError> {
        let iter = self.iteration + 1;
        let model_err = |source: ModelError| LoopError::Model { iter, source };
        let unc_err = |source: UncertaintyError| LoopError::Uncertainty { iter, source };
        let env_err = |source: EnvError| LoopError::Env { iter, source };

        let epoch_loss = self
            .model
            .train_epoch(&self.samples, &mut self.training_rng)
            .map_err(model_err)?;

        let cfg = &self.config;
        let pool =
            sample_input_space(&cfg.world, &mut self.candidate_rng, cfg.m_cand).map_err(env_err)?;

        let (chosen, breakdowns, scores) = if self.strategy == Strategy::Random {
            ((0..cfg.k).collect::<Vec<_>>(), Vec::new(), Vec::new())
        } else {
            let b = self.score_candidates(&pool).map_err(unc_err)?;
            let s: Vec<f64> = b
                .iter()
                .map(|b| self.strategy.score(b).unwrap_or(0.0))
                .collect();
            (select_top_k(&s, cfg.k), b, s)
        };

        let mut selected = Vec::with_capacity(chosen.len());
        for &c in &chosen {
            let x = pool[c];
            let pred = self.model.predict(&x.encoded).map_err(model_err)?;
            let y = execute_and_observe(&self.config.world, &x).map_err(env_err)?;
            let region = self.grid.region_of(&x).map_err(unc_err)?;
            let error = self.grid.record_error(&x, &pred, &y).map_err(unc_err)?;
            selected.push(Selection {
                cand_id: c,
                alpha: x.alpha,
                pos: x.pos,
                effect: y.delta,
                prediction: pred.mean,
                error,
                region: region.0,
                score: scores.get(c).copied(),
                breakdown: breakdowns.get(c).copied(),
            });
            self.push(x, y);
        }

        let lp_updates = self
            .grid
            .snapshot_errors()
            .into_iter()
            .map(|(r, lp)| LpUpdate { region: r.0, lp })
            .collect();

        let candidates = breakdowns
            .iter()
            .zip(&pool)
            .enumerate()
            .map(|(i, (b, x))| CandidateRow {
                iter,
                cand_id: i,
                alpha: x.alpha,
                pos: x.pos,
                breakdown: *b,
                selected: chosen.contains(&i),
            })
            .collect();

        self.iteration = iter;
        Ok(IterationOutput {
            record: RunRecord {
                iter,
                strategy: self.strategy,
                seed: self.seed,
                epoch_loss,
                dataset_size: self.inputs.len(),
                selected,
                lp_updates,
                rmse: None,
            },
            candidates,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: RunState,
    pub records: Vec<RunRecord>,
}

/// Initialisation followed by `n_iter` iterations.
pub fn run(
    config: LoopConfig,
    strategy: Strategy,
    seed: u64,
    n_iter: usize,
) -> Result<RunOutput, LoopError> {
    let mut state = RunState::new(config, strategy, seed)?;
    let mut records = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        records.push(state.run_iteration()?.record);
    }
    Ok(RunOutput { state, records })
}
