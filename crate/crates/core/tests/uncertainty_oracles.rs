use std::f64::consts::PI;

use musel_core::al_loop::{LoopConfig, RunState, Strategy};
use musel_core::backbone::Model;
use musel_core::env::{sample_input_space, InputPoint, WorldConfig};
use musel_core::uncertainty::{min_distance, LpGrid, LpGridConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_nn(x: &[f64; 4], set: &[[f64; 4]]) -> f64 {
    let mut best = f64::INFINITY;
    for o in set {
        let mut s = 0.0;
        for k in 0..4 {
            s += (x[k] - o[k]) * (x[k] - o[k]);
        }
        if s.sqrt() < best {
            best = s.sqrt();
        }
    }
    best
}

#[test]
fn nearest_neighbour_matches_brute_force() {
    let world = WorldConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let set: Vec<[f64; 4]> = sample_input_space(&world, &mut rng, 500)
        .unwrap()
        .iter()
        .map(|p| p.encoded)
        .collect();
    let queries = sample_input_space(&world, &mut rng, 10_000).unwrap();
    for q in &queries {
        assert_eq!(
            min_distance(&q.encoded, &set).unwrap(),
            brute_nn(&q.encoded, &set)
        );
    }
    for o in &set {
        assert_eq!(min_distance(o, &set).unwrap(), 0.0);
    }
}

#[test]
fn region_grid_partitions_valid_inputs() {
    let world = WorldConfig::two_sphere();
    let grid = LpGrid::new(LpGridConfig::default(), world.half_extent);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = vec![0usize; grid.num_regions()];
    for p in sample_input_space(&world, &mut rng, 1_000_000).unwrap() {
        counts[grid.region_of(&p).unwrap().0] += 1;
    }
    assert_eq!(counts.len(), 343);
    assert_eq!(counts.iter().sum::<usize>(), 1_000_000);

    // independent bin arithmetic on raw coordinates
    let bin = |v: f64, lo: f64, hi: f64| (((v - lo) / (hi - lo) * 7.0).floor() as usize).min(6);
    for _ in 0..10_000 {
        let a = rng.random_range(-PI / 3.0..=PI / 3.0);
        let x = rng.random_range(-4.0..=4.0);
        let y = rng.random_range(-4.0..=4.0);
        let p = InputPoint::new(&world, a, [x, y]);
        let c = grid.coords(grid.region_of(&p).unwrap());
        assert_eq!(
            c,
            [
                bin(a, -PI / 3.0, PI / 3.0),
                bin(x, -4.0, 4.0),
                bin(y, -4.0, 4.0)
            ]
        );
    }
}

fn rbf(a: &[f64], b: &[f64], ls: f64, s: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
    s * s * (-d2 / (2.0 * ls * ls)).exp()
}

/// Predictive std norm from the textbook SVGP formulas, solved by LU.
fn sigma_reference(model: &Model, x: &[f64; 4]) -> f64 {
    let f: Vec<f64> = model.forward_features(x).iter().copied().collect();
    let mut total = 0.0;
    for h in &model.heads {
        let (ls, s) = (h.lengthscale(), h.outputscale());
        let m = h.inducing.nrows();
        let row = |i: usize| h.inducing.row(i).iter().copied().collect::<Vec<_>>();
        let mut kzz = DMatrix::from_fn(m, m, |i, j| rbf(&row(i), &row(j), ls, s));
        for i in 0..m {
            kzz[(i, i)] += model.config.jitter;
        }
        let kzx = DVector::from_fn(m, |i, _| rbf(&row(i), &f, ls, s));
        let a = kzz.clone().lu().solve(&kzx).unwrap();
        let var = s * s - kzx.dot(&a) + a.dot(&(h.var_cov() * &a));
        total += (var.max(0.0) + h.noise_variance()) * model.config.output_scale.powi(2);
    }
    total.sqrt()
}

fn lp_reference(errors: &[f64]) -> f64 {
    if errors.len() < 2 {
        return 1.0;
    }
    let n = errors.len() as f64;
    let (mut st, mut se, mut stt, mut ste) = (0.0, 0.0, 0.0, 0.0);
    for (i, e) in errors.iter().enumerate() {
        let t = (i + 1) as f64;
        st += t;
        se += e;
        stt += t * t;
        ste += t * e;
    }
    let slope = (n * ste - st * se) / (n * stt - st * st);
    if slope > 0.0 {
        1e-4
    } else {
        (-(2.0 / PI) * slope.atan()).clamp(1e-4, 1.0)
    }
}

#[test]
fn logged_breakdown_recomputes_independently() {
    let cfg = LoopConfig {
        m_cand: 100,
        ..LoopConfig::new(WorldConfig::default())
    };
    let mut st = RunState::new(cfg, Strategy::Musel, 21).unwrap();
    let mut checked = 0;
    for _ in 0..60 {
        let out = st.run_iteration().unwrap();
        if !out.record.iter.is_multiple_of(6) {
            continue;
        }
        // the model is untouched between scoring and the end of the
        // iteration; the selected input was appended last
        let row = &out.candidates[out.record.selected[0].cand_id];
        let x = InputPoint::new(&st.config.world, row.alpha, row.pos);
        let before: Vec<[f64; 4]> = st.inputs[..st.inputs.len() - 1]
            .iter()
            .map(|p| p.encoded)
            .collect();
        let b = row.breakdown;
        assert!((b.min_dist - brute_nn(&x.encoded, &before)).abs() < 1e-9);
        assert!((b.sigma - sigma_reference(&st.model, &x.encoded)).abs() < 1e-9 * b.sigma.max(1.0));
        assert_eq!(b.u_model, b.sigma * b.min_dist * b.lp);
        checked += 1;
    }
    assert_eq!(checked, 10);

    // LP of every region equals the straight-line slope fit of its history
    for r in 0..st.grid.num_regions() {
        let id = musel_core::uncertainty::RegionId(r);
        let lp = st.grid.learning_progress(id);
        assert!((lp - lp_reference(&st.grid.history(id))).abs() < 1e-12);
    }
}

#[test]
fn duplicates_of_training_inputs_score_zero() {
    let cfg = LoopConfig {
        m_cand: 50,
        ..LoopConfig::new(WorldConfig::two_sphere())
    };
    let mut st = RunState::new(cfg, Strategy::Musel, 2).unwrap();
    for _ in 0..20 {
        st.run_iteration().unwrap();
    }
    let dupes = st.inputs.clone();
    for b in st.score_candidates(&dupes).unwrap() {
        assert_eq!(b.min_dist, 0.0);
        assert_eq!(b.u_model, 0.0);
    }
}

#[test]
fn equal_sigma_and_lp_rank_by_distance() {
    use musel_core::al_loop::select_top_k;
    use musel_core::uncertainty::UncertaintyBreakdown;
    let world = WorldConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let observed: Vec<[f64; 4]> = sample_input_space(&world, &mut rng, 30)
        .unwrap()
        .iter()
        .map(|p| p.encoded)
        .collect();
    let dists: Vec<f64> = sample_input_space(&world, &mut rng, 200)
        .unwrap()
        .iter()
        .map(|c| min_distance(&c.encoded, &observed).unwrap())
        .collect();
    for (sigma, lp) in [(0.7, 1.0), (3.0, 1e-4), (1e-3, 0.4)] {
        let u: Vec<f64> = dists
            .iter()
            .map(|&d| UncertaintyBreakdown::new(sigma, d, lp).u_model)
            .collect();
        assert_eq!(select_top_k(&u, 10), select_top_k(&dists, 10));
    }
}
