mod support;

use musel_core::env::{is_valid_input, sample_input_space, simulate_push, WorldConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use support::stepper::worst_deviation;

#[test]
fn one_sphere_matches_fixed_step_integrator() {
    let worst = worst_deviation(&WorldConfig::default(), 200, 1);
    assert!(worst < 1e-4, "worst deviation {worst}");
}

#[test]
fn two_sphere_matches_fixed_step_integrator() {
    let worst = worst_deviation(&WorldConfig::two_sphere(), 200, 2);
    assert!(worst < 1e-4, "worst deviation {worst}");
}

#[test]
fn no_penetration_and_energy_monotone() {
    for cfg in [WorldConfig::default(), WorldConfig::two_sphere()] {
        let walls = cfg.walls();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for x in sample_input_space(&cfg, &mut rng, 300).unwrap() {
            let d = x.direction();
            let out = simulate_push(&cfg, x.pos, [d.x, d.y], cfg.push_speed, true).unwrap();
            for row in &out.trajectory {
                let p = row.pos.into();
                for w in &walls {
                    assert!(w.clearance(&p) >= cfg.sphere_radius - 1e-9);
                }
            }
            for pair in out.energy_trace.windows(2) {
                assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{:?}", out.energy_trace);
            }
            for pair in out.trajectory.windows(2) {
                let s0 = pair[0].vel[0].hypot(pair[0].vel[1]);
                let s1 = pair[1].vel[0].hypot(pair[1].vel[1]);
                if cfg.task == musel_core::env::TaskVariant::OneSphere {
                    assert!(s1 <= s0 + 1e-12);
                }
            }
        }
    }
}

#[test]
fn sampler_validity_closure() {
    let cfg = WorldConfig::two_sphere();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts = sample_input_space(&cfg, &mut rng, 5000).unwrap();
    assert!(pts.iter().all(|x| is_valid_input(&cfg, x)));
}

#[test]
fn angle_histogram_is_uniform() {
    let cfg = WorldConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let bins = 12;
    let mut counts = vec![0usize; bins];
    let lo = -std::f64::consts::PI / 3.0;
    let width = 2.0 * std::f64::consts::PI / 3.0 / bins as f64;
    for x in sample_input_space(&cfg, &mut rng, n).unwrap() {
        let b = (((x.alpha - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expected = n as f64 / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2={stat} p={p}");
}
