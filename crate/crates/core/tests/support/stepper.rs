//! Fixed-step reference integrator for the push environment.
//!
//! Independent of the event-driven simulator: positions are advanced in
//! steps of `dt`, contacts are detected by checking for penetration at the end
//! of a step and located inside the step by interpolation.

use musel_core::env::{sample_input_space, simulate_push, TaskVariant, WorldConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
struct Body {
    p: [f64; 2],
    v: [f64; 2],
}

fn speed(b: &Body) -> f64 {
    b.v[0].hypot(b.v[1])
}

fn advance(b: &Body, h: f64, mu: f64) -> Body {
    let s = speed(b);
    if s == 0.0 || h <= 0.0 {
        return *b;
    }
    let u = [b.v[0] / s, b.v[1] / s];
    let (ds, s1) = if s <= mu * h {
        (s * s / (2.0 * mu), 0.0)
    } else {
        (s * h - 0.5 * mu * h * h, s - mu * h)
    };
    Body {
        p: [b.p[0] + u[0] * ds, b.p[1] + u[1] * ds],
        v: [u[0] * s1, u[1] * s1],
    }
}

fn lerp(a: [f64; 2], b: [f64; 2], f: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Half-planes `n . p <= c` for sphere centres.
fn limits(cfg: &WorldConfig) -> Vec<([f64; 2], f64)> {
    let [hx, hy] = cfg.half_extent;
    let r = cfg.sphere_radius;
    let a = cfg.diagonal_wall.start;
    let b = cfg.diagonal_wall.end;
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    let mut n = [dy / len, -dx / len];
    if n[0] * a[0] + n[1] * a[1] < 0.0 {
        n = [-n[0], -n[1]];
    }
    vec![
        ([1.0, 0.0], hx - r),
        ([0.0, 1.0], hy - r),
        ([-1.0, 0.0], hx - r),
        ([0.0, -1.0], hy - r),
        (n, n[0] * a[0] + n[1] * a[1] - r),
    ]
}

pub struct StepResult {
    pub rest: [f64; 2],
    pub second_rest: Option<[f64; 2]>,
}

pub fn step_simulate(
    cfg: &WorldConfig,
    pos0: [f64; 2],
    dir: [f64; 2],
    v0: f64,
    dt: f64,
) -> StepResult {
    let mu = cfg.friction;
    let e = cfg.restitution;
    let planes = limits(cfg);
    let contact = 2.0 * cfg.sphere_radius;
    let mut bodies = vec![Body {
        p: pos0,
        v: [dir[0] * v0, dir[1] * v0],
    }];
    if cfg.task == TaskVariant::TwoSphere {
        bodies.push(Body {
            p: cfg.fixed_sphere,
            v: [0.0, 0.0],
        });
    }

    let mut steps = 0usize;
    while bodies.iter().any(|b| speed(b) > 0.0) {
        steps += 1;
        assert!(steps < 10_000_000, "stepper did not settle");
        let mut remaining = dt;
        let mut guard = 0;
        while remaining > 0.0 {
            guard += 1;
            assert!(guard < 1000);
            let trial: Vec<Body> = bodies.iter().map(|b| advance(b, remaining, mu)).collect();

            // earliest violation inside this sub-step, as a fraction of it
            let mut first: Option<(f64, usize, Option<usize>)> = None;
            for (i, (b0, b1)) in bodies.iter().zip(&trial).enumerate() {
                for (w, (n, c)) in planes.iter().enumerate() {
                    let d0 = n[0] * b0.p[0] + n[1] * b0.p[1];
                    let d1 = n[0] * b1.p[0] + n[1] * b1.p[1];
                    if d1 > *c && d1 > d0 {
                        let f = ((c - d0) / (d1 - d0)).clamp(0.0, 1.0);
                        if first.is_none_or(|(g, _, _)| f < g) {
                            first = Some((f, i, Some(w)));
                        }
                    }
                }
            }
            if bodies.len() == 2 {
                let gap = |f: f64| {
                    dist(
                        lerp(bodies[0].p, trial[0].p, f),
                        lerp(bodies[1].p, trial[1].p, f),
                    ) - contact
                };
                if gap(1.0) < 0.0 {
                    let (mut lo, mut hi) = (0.0, 1.0);
                    if gap(0.0) >= 0.0 {
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            if gap(mid) >= 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                    } else {
                        hi = 0.0;
                    }
                    let f = hi;
                    let moved = advance_all(&bodies, f * remaining, mu);
                    let approaching = {
                        let d = [moved[1].p[0] - moved[0].p[0], moved[1].p[1] - moved[0].p[1]];
                        let rv = [moved[0].v[0] - moved[1].v[0], moved[0].v[1] - moved[1].v[1]];
                        d[0] * rv[0] + d[1] * rv[1] > 0.0
                    };
                    if approaching && first.is_none_or(|(g, _, _)| f < g) {
                        first = Some((f, 0, None));
                    }
                }
            }

            match first {
                None => {
                    bodies = trial;
                    remaining = 0.0;
                }
                Some((f, i, wall)) => {
                    let h = f * remaining;
                    bodies = advance_all(&bodies, h, mu);
                    remaining -= h;
                    match wall {
                        Some(w) => {
                            let (n, c) = planes[w];
                            let b = &mut bodies[i];
                            let over = n[0] * b.p[0] + n[1] * b.p[1] - c;
                            if over > 0.0 {
                                b.p = [b.p[0] - n[0] * over, b.p[1] - n[1] * over];
                            }
                            let vn = n[0] * b.v[0] + n[1] * b.v[1];
                            if vn > 0.0 {
                                b.v = [
                                    e * (b.v[0] - 2.0 * vn * n[0]),
                                    e * (b.v[1] - 2.0 * vn * n[1]),
                                ];
                            }
                        }
                        None => {
                            let d = [
                                bodies[1].p[0] - bodies[0].p[0],
                                bodies[1].p[1] - bodies[0].p[1],
                            ];
                            let len = d[0].hypot(d[1]);
                            let n = [d[0] / len, d[1] / len];
                            let vn = (bodies[0].v[0] - bodies[1].v[0]) * n[0]
                                + (bodies[0].v[1] - bodies[1].v[1]) * n[1];
                            if vn > 0.0 {
                                let j = 0.5 * (1.0 + e) * vn;
                                bodies[0].v =
                                    [bodies[0].v[0] - j * n[0], bodies[0].v[1] - j * n[1]];
                                bodies[1].v =
                                    [bodies[1].v[0] + j * n[0], bodies[1].v[1] + j * n[1]];
                            }
                        }
                    }
                }
            }
        }
    }
    StepResult {
        rest: bodies[0].p,
        second_rest: bodies.get(1).map(|b| b.p),
    }
}

fn advance_all(bodies: &[Body], h: f64, mu: f64) -> Vec<Body> {
    bodies.iter().map(|b| advance(b, h, mu)).collect()
}

/// Largest distance between event-driven and fixed-step rest positions
/// (both spheres) over `n` sampled pushes.
pub fn worst_deviation(cfg: &WorldConfig, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for x in sample_input_space(cfg, &mut rng, n).unwrap() {
        let d = x.direction();
        let out = simulate_push(cfg, x.pos, [d.x, d.y], cfg.push_speed, false).unwrap();
        let reference = step_simulate(cfg, x.pos, [d.x, d.y], cfg.push_speed, 1e-4);
        worst = worst.max((out.rest[0] - reference.rest[0]).hypot(out.rest[1] - reference.rest[1]));
        if let (Some(a), Some(b)) = (out.second_rest, reference.second_rest) {
            worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    worst
}
