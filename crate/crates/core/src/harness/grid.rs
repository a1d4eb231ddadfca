use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::Model;
use crate::env::{
    execute_and_observe, is_valid_position, Effect, InputPoint, WorldConfig, ALPHA_MAX,
};
use crate::error::{EnvError, HarnessError, ModelError};

/// Evaluation inputs on a regular `(alpha, pos_x, pos_y)` lattice with their
/// true effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestGrid {
    pub resolution: [usize; 3],
    /// Digest of the world configuration the truths were computed with.
    pub world_digest: String,
    pub points: Vec<InputPoint>,
    pub truth: Vec<Effect>,
    /// Digest of `points` and `truth`.
    pub checksum: String,
}

pub fn world_digest(world: &WorldConfig) -> String {
    let bytes = serde_json::to_vec(world).expect("world config serialises");
    hex::encode(Sha256::digest(bytes))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn content_checksum(points: &[InputPoint], truth: &[Effect]) -> String {
    let mut h = Sha256::new();
    for (x, y) in points.iter().zip(truth) {
        for v in [x.alpha, x.pos[0], x.pos[1], y.delta[0], y.delta[1]] {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl TestGrid {
    /// Lattice over the full angle range and the placement bounding box,
    /// with invalid placements dropped.
    pub fn build(world: &WorldConfig, resolution: [usize; 3]) -> Result<Self, EnvError> {
        world.validate()?;
        let inset = world.sphere_radius + world.margin;
        let [hx, hy] = world.half_extent;
        let alphas = linspace(-ALPHA_MAX, ALPHA_MAX, resolution[0]);
        let xs = linspace(-hx + inset, hx - inset, resolution[1]);
        let ys = linspace(-hy + inset, hy - inset, resolution[2]);
        let mut points = Vec::new();
        for &a in &alphas {
            for &x in &xs {
                for &y in &ys {
                    if is_valid_position(world, [x, y]) {
                        points.push(InputPoint::new(world, a, [x, y]));
                    }
                }
            }
        }
        let truth = points
            .par_iter()
            .map(|p| execute_and_observe(world, p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TestGrid {
            resolution,
            world_digest: world_digest(world),
            checksum: content_checksum(&points, &truth),
            points,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn verify(&self) -> bool {
        self.points.len() == self.truth.len()
            && content_checksum(&self.points, &self.truth) == self.checksum
    }

    pub fn cache_path(dir: &Path, world: &WorldConfig, resolution: [usize; 3]) -> PathBuf {
        let [a, b, c] = resolution;
        dir.join(format!(
            "testgrid_{a}x{b}x{c}_{}.json",
            &world_digest(world)[..16]
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads the cached grid for `(world, resolution)` from `dir`, rebuilding
    /// and rewriting it if it is missing, corrupt or stale.
    pub fn load_or_build(
        dir: &Path,
        world: &WorldConfig,
        resolution: [usize; 3],
    ) -> Result<Self, HarnessError> {
        let path = Self::cache_path(dir, world, resolution);
        if let Ok(grid) = Self::load(&path) {
            if grid.verify()
                && grid.resolution == resolution
                && grid.world_digest == world_digest(world)
            {
                return Ok(grid);
            }
            log::warn!("discarding stale test grid cache {}", path.display());
        }
        let grid = Self::build(world, resolution)?;
        grid.save(&path)?;
        Ok(grid)
    }
}

const EVAL_CHUNK: usize = 512;

/// Root mean squared error of the predicted means over both effect
/// dimensions jointly.
pub fn eval_rmse(model: &Model, grid: &TestGrid) -> Result<f64, ModelError> {
    let xs: Vec<[f64; 4]> = grid.points.iter().map(|p| p.encoded).collect();
    let chunks = xs
        .par_chunks(EVAL_CHUNK)
        .map(|c| model.predict_batch(c))
        .collect::<Result<Vec<_>, _>>()?;
    let sse: f64 = chunks
        .iter()
        .flatten()
        .zip(&grid.truth)
        .map(|(p, t)| (p.mean[0] - t.delta[0]).powi(2) + (p.mean[1] - t.delta[1]).powi(2))
        .sum();
    Ok((sse / grid.len() as f64).sqrt())
}
