use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::{aggregate, write_aggregate_csv, AggregateRow};
use super::config::ExperimentConfig;
use super::grid::{eval_rmse, TestGrid};
use crate::al_loop::{RunRecord, RunState, Strategy, CANDIDATE_CSV_HEADER};
use crate::backbone::Checkpoint;
use crate::error::{HarnessError, LoopError};

/// Records of one `(strategy, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub strategy: Strategy,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Error message if the run aborted; `records` then holds the completed prefix.
    pub failure: Option<String>,
}

impl RunLog {
    pub fn final_rmse(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.rmse)
    }

    /// `(iter, rmse)` at every evaluation.
    pub fn rmse_curve(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.rmse.map(|v| (r.iter, v)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub logs: Vec<RunLog>,
    pub aggregate: Vec<AggregateRow>,
    pub output_dir: PathBuf,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunLog> {
        self.logs.iter().filter(|l| l.failure.is_some())
    }

    pub fn logs_for(&self, strategy: Strategy) -> Vec<&RunLog> {
        self.logs
            .iter()
            .filter(|l| l.strategy == strategy)
            .collect()
    }
}

pub fn run_name(strategy: Strategy, seed: u64) -> String {
    format!("{strategy}_seed{seed}")
}

pub const RUNS_DIR: &str = "runs";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

fn create_dir(p: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e))
}

fn create_file(p: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(p)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(p, e))
}

/// Runs every `(strategy, seed)` pair, writing per-run JSON-lines logs under
/// `runs/`, wall-clock timings under `timing/`, optional candidate logs and
/// checkpoints, and the mean/SEM aggregate CSV.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    for sub in [RUNS_DIR, "timing"] {
        create_dir(&out.join(sub))?;
    }
    if cfg.uncertainty_log {
        create_dir(&out.join("uncertainty"))?;
    }
    if cfg.checkpoint_every.is_some() {
        create_dir(&out.join("checkpoints"))?;
    }
    let resolved = serde_json::to_string_pretty(cfg)?;
    fs::write(out.join("config.json"), resolved).map_err(|e| HarnessError::io(&out, e))?;

    let world = cfg.world_config();
    let grid = TestGrid::load_or_build(&out.join("cache"), &world, cfg.resolution())?;
    log::info!("test grid: {} points", grid.len());

    let jobs: Vec<(Strategy, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let exec = || {
        jobs.par_iter()
            .map(|&(s, seed)| run_single(cfg, &grid, s, seed))
            .collect::<Result<Vec<_>, _>>()
    };
    let logs = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(exec)?,
        None => exec()?,
    };

    let aggregate = aggregate(&logs);
    write_aggregate_csv(&out.join(AGGREGATE_FILE), &aggregate)?;
    Ok(ExperimentReport {
        logs,
        aggregate,
        output_dir: out,
    })
}

/// One run. Loop failures are captured in the returned log; I/O failures
/// abort the experiment.
fn run_single(
    cfg: &ExperimentConfig,
    grid: &TestGrid,
    strategy: Strategy,
    seed: u64,
) -> Result<RunLog, HarnessError> {
    let out = &cfg.output_dir;
    let name = run_name(strategy, seed);
    let log_path = out.join(RUNS_DIR).join(format!("{name}.jsonl"));
    let err_path = out.join(RUNS_DIR).join(format!("{name}.error"));
    let timing_path = out.join("timing").join(format!("{name}.csv"));
    let mut log_w = create_file(&log_path)?;
    let mut timing_w = create_file(&timing_path)?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| HarnessError::io(&p, e)
    };
    writeln!(timing_w, "iter,wall_seconds").map_err(io(&timing_path))?;
    let mut unc_w = match cfg.uncertainty_log {
        true => {
            let p = out.join("uncertainty").join(format!("{name}.csv"));
            let mut w = create_file(&p)?;
            writeln!(w, "{CANDIDATE_CSV_HEADER}").map_err(io(&p))?;
            Some((w, p))
        }
        false => None,
    };

    let mut records = Vec::with_capacity(cfg.n_iter);
    let started = Instant::now();
    let outcome = (|| -> Result<(), Abort> {
        let mut state = RunState::new(cfg.loop_config(), strategy, seed)?;
        for i in 1..=cfg.n_iter {
            let mut step = state.run_iteration()?;
            if i % cfg.eval_interval == 0 || i == cfg.n_iter {
                let rmse = eval_rmse(&state.model, grid)
                    .map_err(|source| LoopError::Model { iter: i, source })?;
                step.record.rmse = Some(rmse);
            }
            let line = serde_json::to_string(&step.record).expect("record serialises");
            writeln!(log_w, "{line}").map_err(io(&log_path))?;
            writeln!(timing_w, "{i},{:.6}", started.elapsed().as_secs_f64())
                .map_err(io(&timing_path))?;
            if let Some((w, p)) = unc_w.as_mut() {
                for row in &step.candidates {
                    writeln!(w, "{}", row.csv_line()).map_err(io(p))?;
                }
            }
            if cfg.checkpoint_every.is_some_and(|c| i % c == 0) {
                let p = out.join("checkpoints").join(format!("{name}_iter{i}.json"));
                Checkpoint::from_model(&state.model)
                    .save(&p)
                    .map_err(HarnessError::from)?;
            }
            records.push(step.record);
        }
        Ok(())
    })();

    log_w.flush().map_err(io(&log_path))?;
    timing_w.flush().map_err(io(&timing_path))?;
    if let Some((mut w, p)) = unc_w {
        w.flush().map_err(io(&p))?;
    }
    let failure = match outcome {
        Ok(()) => None,
        Err(Abort::Io(e)) => return Err(e),
        Err(Abort::Loop(e)) => {
            log::warn!("run {name} failed: {e}");
            Some(e.to_string())
        }
    };
    match &failure {
        Some(msg) => fs::write(&err_path, msg).map_err(io(&err_path))?,
        None if err_path.exists() => fs::remove_file(&err_path).map_err(io(&err_path))?,
        None => {}
    }
    Ok(RunLog {
        strategy,
        seed,
        records,
        failure,
    })
}

enum Abort {
    Loop(LoopError),
    Io(HarnessError),
}

impl From<LoopError> for Abort {
    fn from(e: LoopError) -> Self {
        Abort::Loop(e)
    }
}

impl From<HarnessError> for Abort {
    fn from(e: HarnessError) -> Self {
        Abort::Io(e)
    }
}

/// Reads every run log under `dir/runs`, ordered by strategy then seed.
pub fn load_run_logs(dir: &Path) -> Result<Vec<RunLog>, HarnessError> {
    let runs = dir.join(RUNS_DIR);
    let entries = fs::read_dir(&runs).map_err(|e| HarnessError::io(&runs, e))?;
    let mut logs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(&runs, e))?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            logs.push(read_run_log(&path)?);
        }
    }
    if logs.is_empty() {
        return Err(HarnessError::Analysis(format!(
            "no run logs found in {}",
            runs.display()
        )));
    }
    logs.sort_by_key(|l| (l.strategy, l.seed));
    Ok(logs)
}

pub fn read_run_log(path: &Path) -> Result<RunLog, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut records: Vec<RunRecord> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let (strategy, seed) = match records.first() {
        Some(r) => (r.strategy, r.seed),
        None => parse_run_name(stem).ok_or_else(|| {
            HarnessError::Analysis(format!("cannot identify empty run log {}", path.display()))
        })?,
    };
    let err_path = path.with_extension("error");
    let failure = err_path
        .exists()
        .then(|| fs::read_to_string(&err_path))
        .transpose()
        .map_err(|e| HarnessError::io(&err_path, e))?;
    Ok(RunLog {
        strategy,
        seed,
        records,
        failure,
    })
}

fn parse_run_name(stem: &str) -> Option<(Strategy, u64)> {
    let (s, seed) = stem.rsplit_once("_seed")?;
    Some((s.parse().ok()?, seed.parse().ok()?))
}
