use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{load_run_logs, RunLog, AGGREGATE_FILE};
use crate::al_loop::Strategy;
use crate::env::WorldConfig;
use crate::error::HarnessError;
use crate::uncertainty::LpGridConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub iter: usize,
    pub n_runs: usize,
    pub mean_rmse: f64,
    /// Sample standard deviation over runs divided by `sqrt(n_runs)`; NaN for one run.
    pub sem: f64,
    /// Non-empty when some runs of the strategy lack this evaluation.
    pub warning: String,
}

pub fn mean_and_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and SEM of RMSE per strategy per evaluated iteration. Values are
/// reduced in seed order, so the result does not depend on log order.
pub fn aggregate(logs: &[RunLog]) -> Vec<AggregateRow> {
    let mut by_strategy: BTreeMap<Strategy, Vec<&RunLog>> = BTreeMap::new();
    for l in logs {
        by_strategy.entry(l.strategy).or_default().push(l);
    }
    let mut rows = Vec::new();
    for (strategy, mut runs) in by_strategy {
        runs.sort_by_key(|l| l.seed);
        let mut per_iter: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for l in &runs {
            for (iter, v) in l.rmse_curve() {
                per_iter.entry(iter).or_default().push(v);
            }
        }
        for (iter, values) in per_iter {
            let (mean, sem) = mean_and_sem(&values);
            let missing = runs.len() - values.len();
            rows.push(AggregateRow {
                strategy,
                iter,
                n_runs: values.len(),
                mean_rmse: mean,
                sem,
                warning: if missing > 0 {
                    format!("{missing} of {} runs missing", runs.len())
                } else {
                    String::new()
                },
            });
        }
    }
    rows
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    let mut s = String::from("strategy,iter,n_runs,mean_rmse,sem,warning\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.strategy, r.iter, r.n_runs, r.mean_rmse, r.sem, r.warning
        )
        .unwrap();
    }
    write_text(path, &s)
}

/// Counts of selected positions on a `bins x bins` grid over the table.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: usize,
    pub half_extent: [f64; 2],
    /// Indexed `[ix * bins + iy]`.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[ix * self.bins + iy]
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// `log10(1 + normalized count)` per bin.
    pub fn log_scaled(&self) -> Vec<f64> {
        self.normalized()
            .iter()
            .map(|p| p.ln_1p() / std::f64::consts::LN_10)
            .collect()
    }

    fn bin_of(&self, v: f64, axis: usize) -> Option<usize> {
        let h = self.half_extent[axis];
        if !(-h..=h).contains(&v) {
            return None;
        }
        Some((((v + h) / (2.0 * h) * self.bins as f64) as usize).min(self.bins - 1))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("ix,iy,x_lo,x_hi,y_lo,y_hi,count,log_norm\n");
        let log = self.log_scaled();
        let [hx, hy] = self.half_extent;
        let w = |h: f64, i: usize| -h + 2.0 * h * i as f64 / self.bins as f64;
        for ix in 0..self.bins {
            for iy in 0..self.bins {
                let k = ix * self.bins + iy;
                writeln!(
                    s,
                    "{ix},{iy},{},{},{},{},{},{}",
                    w(hx, ix),
                    w(hx, ix + 1),
                    w(hy, iy),
                    w(hy, iy + 1),
                    self.counts[k],
                    log[k]
                )
                .unwrap();
            }
        }
        s
    }
}

/// Pools the selected positions of `logs` into a `bins x bins` histogram.
pub fn sampling_histogram(logs: &[&RunLog], bins: usize, half_extent: [f64; 2]) -> Histogram {
    let mut h = Histogram {
        bins,
        half_extent,
        counts: vec![0; bins * bins],
    };
    for l in logs {
        for s in l.records.iter().flat_map(|r| &r.selected) {
            if let (Some(ix), Some(iy)) = (h.bin_of(s.pos[0], 0), h.bin_of(s.pos[1], 1)) {
                h.counts[ix * bins + iy] += 1;
            }
        }
    }
    h
}

/// Heatmap of the log-scaled histogram with LP region boundaries and walls drawn in white.
pub fn histogram_svg(h: &Histogram, world: &WorldConfig, lp: &LpGridConfig) -> String {
    const SIZE: f64 = 500.0;
    let [hx, hy] = h.half_extent;
    let px = |x: f64| (x + hx) / (2.0 * hx) * SIZE;
    let py = |y: f64| SIZE - (y + hy) / (2.0 * hy) * SIZE;
    let log = h.log_scaled();
    let peak = log
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let cell = SIZE / h.bins as f64;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    s.push('\n');
    for ix in 0..h.bins {
        for iy in 0..h.bins {
            let t = log[ix * h.bins + iy] / peak;
            let (r, g, b) = heat(t);
            writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="rgb({r},{g},{b})"/>"#,
                ix as f64 * cell,
                SIZE - (iy + 1) as f64 * cell,
            )
            .unwrap();
        }
    }
    for (axis, n) in [(0, lp.bins[1]), (1, lp.bins[2])] {
        for i in 1..n {
            let v = -h.half_extent[axis] + 2.0 * h.half_extent[axis] * i as f64 / n as f64;
            let (x1, y1, x2, y2) = match axis {
                0 => (px(v), 0.0, px(v), SIZE),
                _ => (0.0, py(v), SIZE, py(v)),
            };
            writeln!(
                s,
                r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="white" stroke-width="1"/>"#
            )
            .unwrap();
        }
    }
    let d = &world.diagonal_wall;
    writeln!(
        s,
        r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="white" stroke-width="3"/>"#,
        px(d.start[0]),
        py(d.start[1]),
        px(d.end[0]),
        py(d.end[1])
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn heat(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * t).min(1.0)) as u8;
    let g = (255.0 * (2.0 * t - 0.6).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (0.4 - 0.4 * t + (3.0 * t - 2.0).max(0.0))).clamp(0.0, 255.0) as u8;
    (r, g, b)
}

/// Whether `pos` lies within `band_fraction * half_extent` of a table edge
/// or the diagonal wall.
pub fn in_boundary_band(world: &WorldConfig, pos: [f64; 2], band_fraction: f64) -> bool {
    let band = band_fraction * world.half_extent[0].min(world.half_extent[1]);
    let p = pos.into();
    world.walls().iter().any(|w| w.clearance(&p) < band)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTable {
    pub checkpoints: Vec<usize>,
    /// Seed-averaged cumulative counts per checkpoint, per strategy.
    pub rows: Vec<(Strategy, Vec<f64>)>,
}

impl BoundaryTable {
    pub fn row(&self, s: Strategy) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.0 == s).map(|r| r.1.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy");
        for c in &self.checkpoints {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (strategy, values) in &self.rows {
            s.push_str(strategy.name());
            for v in values {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Mean over seeds of the cumulative number of selections inside the
/// boundary band, at each checkpoint iteration.
pub fn boundary_counts(
    logs: &[RunLog],
    world: &WorldConfig,
    band_fraction: f64,
    checkpoints: &[usize],
) -> Result<BoundaryTable, HarnessError> {
    let mut by_strategy: BTreeMap<Strategy, Vec<&RunLog>> = BTreeMap::new();
    for l in logs {
        by_strategy.entry(l.strategy).or_default().push(l);
    }
    let mut rows = Vec::new();
    for (strategy, mut runs) in by_strategy {
        runs.sort_by_key(|l| l.seed);
        let mut sums = vec![0.0; checkpoints.len()];
        for l in &runs {
            for &c in checkpoints {
                if !l.records.iter().any(|r| r.iter == c) {
                    return Err(HarnessError::Analysis(format!(
                        "checkpoint {c} not recorded in run {strategy} seed {}",
                        l.seed
                    )));
                }
            }
            let mut cum = 0usize;
            let mut next = 0;
            for r in &l.records {
                cum += r
                    .selected
                    .iter()
                    .filter(|s| in_boundary_band(world, s.pos, band_fraction))
                    .count();
                while next < checkpoints.len() && checkpoints[next] == r.iter {
                    sums[next] += cum as f64;
                    next += 1;
                }
            }
        }
        let n = runs.len() as f64;
        rows.push((strategy, sums.iter().map(|s| s / n).collect()));
    }
    Ok(BoundaryTable {
        checkpoints: checkpoints.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpTraceRow {
    pub iter: usize,
    pub region: usize,
    pub lp: f64,
}

/// Learning progress of each requested region after every iteration of
/// `log`; regions start at 1 and hold their value between updates.
pub fn lp_trace(
    log: &RunLog,
    regions: &[usize],
    num_regions: usize,
) -> Result<Vec<LpTraceRow>, HarnessError> {
    if let Some(r) = regions.iter().find(|&&r| r >= num_regions) {
        return Err(HarnessError::Analysis(format!(
            "unknown region id {r} (grid has {num_regions})"
        )));
    }
    let mut current: BTreeMap<usize, f64> = regions.iter().map(|&r| (r, 1.0)).collect();
    let mut rows = Vec::with_capacity(log.records.len() * regions.len());
    for rec in &log.records {
        for u in &rec.lp_updates {
            if let Some(v) = current.get_mut(&u.region) {
                *v = u.lp;
            }
        }
        for &r in regions {
            rows.push(LpTraceRow {
                iter: rec.iter,
                region: r,
                lp: current[&r],
            });
        }
    }
    Ok(rows)
}

pub fn lp_trace_csv(rows: &[LpTraceRow]) -> String {
    let mut s = String::from("iter,region,lp\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.iter, r.region, r.lp).unwrap();
    }
    s
}

/// Line chart of mean RMSE per strategy.
pub fn curves_svg(rows: &[AggregateRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    ];
    let max_iter = rows.iter().map(|r| r.iter).max().unwrap_or(1).max(1) as f64;
    let max_rmse = rows
        .iter()
        .map(|r| r.mean_rmse)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / max_iter;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / max_rmse;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    s.push('\n');
    writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">iteration (max {max_iter})</text>"#,
        W / 2.0,
        H - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="15" y="{PAD}" font-size="12">RMSE (max {max_rmse:.4})</text>"#
    )
    .unwrap();
    let mut strategies: Vec<Strategy> = rows.iter().map(|r| r.strategy).collect();
    strategies.dedup();
    for (k, st) in strategies.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.strategy == *st)
            .map(|r| format!("{:.2},{:.2}", x(r.iter), y(r.mean_rmse)))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{st}</text>"#,
            W - PAD - 90.0,
            PAD + 15.0 * k as f64
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub bins: usize,
    pub band_fraction: Option<f64>,
    pub checkpoints: Option<Vec<usize>>,
    pub lp_regions: Vec<usize>,
    pub svg: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            bins: 50,
            band_fraction: None,
            checkpoints: None,
            lp_regions: Vec::new(),
            svg: true,
        }
    }
}

/// Regenerates every derived artifact of the experiment in `dir` from its
/// run logs and `config.json`. Returns the files written.
pub fn analyze(dir: &Path, opts: &AnalyzeOptions) -> Result<Vec<PathBuf>, HarnessError> {
    let cfg_path = dir.join("config.json");
    let cfg = match cfg_path.exists() {
        true => ExperimentConfig::from_file(&cfg_path, &[])?,
        false => ExperimentConfig::default(),
    };
    let world = cfg.world_config();
    let logs = load_run_logs(dir)?;
    let out = dir.join("analysis");
    fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let agg = aggregate(&logs);
    write_aggregate_csv(&dir.join(AGGREGATE_FILE), &agg)?;
    let mut written = vec![dir.join(AGGREGATE_FILE)];
    let mut emit = |name: String, text: String| -> Result<(), HarnessError> {
        let p = out.join(name);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };

    if opts.svg {
        emit("rmse_curves.svg".into(), curves_svg(&agg))?;
    }

    let mut strategies: Vec<Strategy> = logs.iter().map(|l| l.strategy).collect();
    strategies.dedup();
    for &s in &strategies {
        let runs: Vec<&RunLog> = logs.iter().filter(|l| l.strategy == s).collect();
        let h = sampling_histogram(&runs, opts.bins, world.half_extent);
        emit(format!("histogram_{s}.csv"), h.to_csv())?;
        if opts.svg {
            emit(
                format!("histogram_{s}.svg"),
                histogram_svg(&h, &world, &cfg.lp_grid),
            )?;
        }
    }

    let band = opts.band_fraction.unwrap_or(cfg.band_fraction);
    let checkpoints = opts
        .checkpoints
        .clone()
        .unwrap_or_else(|| cfg.boundary_checkpoints.clone());
    let table = boundary_counts(&logs, &world, band, &checkpoints)?;
    emit("boundary_counts.csv".into(), table.to_csv())?;

    if !opts.lp_regions.is_empty() {
        let n: usize = cfg.lp_grid.bins.iter().product();
        for l in &logs {
            let rows = lp_trace(l, &opts.lp_regions, n)?;
            emit(
                format!("lp_trace_{}_seed{}.csv", l.strategy, l.seed),
                lp_trace_csv(&rows),
            )?;
        }
    }
    Ok(written)
}
