//! Model-uncertainty score: predictive spread x nearest-neighbour distance x
//! regional learning progress.
//!
//! Learning progress is tracked on a uniform grid over the raw
//! `(alpha, pos_x, pos_y)` ranges. Each region keeps a window of its most
//! recent average prediction errors; the slope of a least-squares line fitted
//! to that window is mapped to `[1e-4, 1]`, with falling errors scoring high.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::backbone::{Model, Prediction};
use crate::env::{Effect, InputPoint, ALPHA_MAX};
use crate::error::UncertaintyError;

pub const LP_FLOOR: f64 = 1e-4;
pub const LP_CEIL: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpGridConfig {
    /// Bins along alpha, pos_x, pos_y.
    pub bins: [usize; 3],
    /// Number of average-error snapshots kept per region.
    pub window: usize,
}

impl Default for LpGridConfig {
    fn default() -> Self {
        LpGridConfig {
            bins: [7, 7, 7],
            window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId(pub usize);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct Region {
    history: VecDeque<f64>,
    pending_sum: f64,
    pending_count: usize,
    lp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpGrid {
    pub config: LpGridConfig,
    /// `[lo, hi]` per axis.
    pub ranges: [[f64; 2]; 3],
    regions: Vec<Region>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBreakdown {
    pub sigma: f64,
    pub min_dist: f64,
    pub lp: f64,
    pub u_model: f64,
}

impl UncertaintyBreakdown {
    pub fn new(sigma: f64, min_dist: f64, lp: f64) -> Self {
        UncertaintyBreakdown {
            sigma,
            min_dist,
            lp,
            u_model: sigma * min_dist * lp,
        }
    }
}

impl LpGrid {
    /// Grid over `alpha in [-pi/3, pi/3]` and the table extent.
    pub fn new(config: LpGridConfig, half_extent: [f64; 2]) -> Self {
        let n = config.bins.iter().product();
        let regions = (0..n)
            .map(|_| Region {
                lp: LP_CEIL,
                ..Region::default()
            })
            .collect();
        LpGrid {
            config,
            ranges: [
                [-ALPHA_MAX, ALPHA_MAX],
                [-half_extent[0], half_extent[0]],
                [-half_extent[1], half_extent[1]],
            ],
            regions,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Bin edges along `axis`.
    pub fn edges(&self, axis: usize) -> Vec<f64> {
        let [lo, hi] = self.ranges[axis];
        let n = self.config.bins[axis];
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect()
    }

    fn bin(&self, axis: usize, v: f64) -> Option<usize> {
        let [lo, hi] = self.ranges[axis];
        if !(lo..=hi).contains(&v) {
            return None;
        }
        let n = self.config.bins[axis];
        Some((((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
    }

    /// Per-axis bin indices of a region.
    pub fn coords(&self, id: RegionId) -> [usize; 3] {
        let [_, ny, nz] = self.config.bins;
        [id.0 / (ny * nz), (id.0 / nz) % ny, id.0 % nz]
    }

    pub fn id_of(&self, coords: [usize; 3]) -> RegionId {
        let [_, ny, nz] = self.config.bins;
        RegionId((coords[0] * ny + coords[1]) * nz + coords[2])
    }

    /// Region containing `x` (right-open bins, top edge included in the last bin).
    pub fn region_of(&self, x: &InputPoint) -> Result<RegionId, UncertaintyError> {
        let out = || UncertaintyError::OutOfRange {
            alpha: x.alpha,
            x: x.pos[0],
            y: x.pos[1],
        };
        let i = self.bin(0, x.alpha).ok_or_else(out)?;
        let j = self.bin(1, x.pos[0]).ok_or_else(out)?;
        let k = self.bin(2, x.pos[1]).ok_or_else(out)?;
        Ok(self.id_of([i, j, k]))
    }

    /// Adds the prediction error `||pred.mean - observed||` of an executed
    /// input to its region's pending accumulator. Returns the error.
    pub fn record_error(
        &mut self,
        x: &InputPoint,
        pred: &Prediction,
        observed: &Effect,
    ) -> Result<f64, UncertaintyError> {
        let id = self.region_of(x)?;
        let e = (pred.mean[0] - observed.delta[0]).hypot(pred.mean[1] - observed.delta[1]);
        let r = &mut self.regions[id.0];
        r.pending_sum += e;
        r.pending_count += 1;
        Ok(e)
    }

    /// Pushes the pending mean error of every region that received executions
    /// onto its window, refreshes its learning progress, and returns the
    /// updated `(region, lp)` pairs in region order.
    pub fn snapshot_errors(&mut self) -> Vec<(RegionId, f64)> {
        let window = self.config.window;
        let mut updated = Vec::new();
        for (i, r) in self.regions.iter_mut().enumerate() {
            if r.pending_count == 0 {
                continue;
            }
            r.history.push_back(r.pending_sum / r.pending_count as f64);
            while r.history.len() > window {
                r.history.pop_front();
            }
            r.pending_sum = 0.0;
            r.pending_count = 0;
            r.lp = lp_from_history(r.history.make_contiguous());
            updated.push((RegionId(i), r.lp));
        }
        updated
    }

    pub fn learning_progress(&self, id: RegionId) -> f64 {
        self.regions[id.0].lp
    }

    pub fn history(&self, id: RegionId) -> Vec<f64> {
        self.regions[id.0].history.iter().copied().collect()
    }

    /// Replaces a region's error window (the oldest entry first) and
    /// recomputes its learning progress.
    pub fn set_history(&mut self, id: RegionId, errors: &[f64]) {
        let window = self.config.window;
        let r = &mut self.regions[id.0];
        r.history = errors.iter().rev().take(window).rev().copied().collect();
        r.lp = lp_from_history(r.history.make_contiguous());
    }
}

/// Least-squares slope of `errors` against `t = 1..=n`.
pub fn least_squares_slope(errors: &[f64]) -> f64 {
    let n = errors.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let e_mean = errors.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, e) in errors.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        num += dt * (e - e_mean);
        den += dt * dt;
    }
    num / den
}

/// Learning progress of an error window. Fewer than two entries gives the
/// optimistic ceiling; otherwise a non-positive slope `m` maps to
/// `-(2/pi) atan(m)` clamped to `[1e-4, 1]` and a rising error gives the floor.
pub fn lp_from_history(errors: &[f64]) -> f64 {
    if errors.len() < 2 {
        return LP_CEIL;
    }
    let slope = least_squares_slope(errors);
    if slope <= 0.0 {
        (-(2.0 / PI) * slope.atan()).clamp(LP_FLOOR, LP_CEIL)
    } else {
        LP_FLOOR
    }
}

fn sq_dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Exact Euclidean distance, in the encoded input space, from `x` to the
/// nearest of `observed`.
pub fn min_distance(x: &[f64; 4], observed: &[[f64; 4]]) -> Result<f64, UncertaintyError> {
    observed
        .iter()
        .map(|o| sq_dist(x, o))
        .min_by(f64::total_cmp)
        .map(f64::sqrt)
        .ok_or(UncertaintyError::EmptyTrainingSet)
}

/// Uncertainty breakdown for every candidate. Reads the model, grid and
/// training inputs without modifying them.
pub fn estimate_model_uncertainty(
    model: &Model,
    grid: &LpGrid,
    observed: &[[f64; 4]],
    candidates: &[InputPoint],
) -> Result<Vec<UncertaintyBreakdown>, UncertaintyError> {
    if observed.is_empty() {
        return Err(UncertaintyError::EmptyTrainingSet);
    }
    let xs: Vec<[f64; 4]> = candidates.iter().map(|c| c.encoded).collect();
    let preds = model.predict_batch(&xs)?;
    candidates
        .iter()
        .zip(&preds)
        .map(|(c, p)| {
            let lp = grid.learning_progress(grid.region_of(c)?);
            Ok(UncertaintyBreakdown::new(
                p.total_std(),
                min_distance(&c.encoded, observed)?,
                lp,
            ))
        })
        .collect()
}
