//! Deterministic tabletop push environment.
//!
//! A sphere is placed on a walled table (with a diagonal wall cutting one
//! corner), pushed at an angle, and rolls under constant friction until it
//! comes to rest. Walls reflect specularly and scale the speed by the
//! restitution coefficient. The two-sphere variant adds a second sphere at a
//! fixed initial position that can be struck and rolls under the same rules.
//!
//! The simulator is event driven: between events every sphere follows a
//! closed-form constant-deceleration path, and the next wall hit, stop or
//! sphere contact is found analytically.

use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;

pub type Vec2 = Vector2<f64>;

/// Lower/upper bound of the push angle.
pub const ALPHA_MAX: f64 = PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskVariant {
    OneSphere,
    TwoSphere,
}

/// Line segment, in table coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub time: String,
    pub angle: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            length: "table length unit".into(),
            time: "second".into(),
            angle: "radian".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Half-extent of the table along x and y; the table is `[-hx, hx] x [-hy, hy]`.
    pub half_extent: [f64; 2],
    pub diagonal_wall: Segment,
    pub sphere_radius: f64,
    /// Distance from the sphere centre to the end-effector start/end points.
    pub push_offset: f64,
    pub push_speed: f64,
    /// Constant rolling deceleration.
    pub friction: f64,
    pub restitution: f64,
    pub task: TaskVariant,
    /// Initial position of the passive sphere (two-sphere task only).
    pub fixed_sphere: [f64; 2],
    pub margin: f64,
    pub max_placement_attempts: usize,
    pub max_events: usize,
    #[serde(default)]
    pub units: Units,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            half_extent: [4.0, 4.0],
            diagonal_wall: Segment {
                start: [1.5, 4.0],
                end: [4.0, 1.5],
            },
            sphere_radius: 0.25,
            push_offset: 0.5,
            push_speed: 6.0,
            friction: 2.0,
            restitution: 0.9,
            task: TaskVariant::OneSphere,
            fixed_sphere: [1.5, 1.5],
            margin: 0.05,
            max_placement_attempts: 10_000,
            max_events: 10_000,
            units: Units::default(),
        }
    }
}

/// A wall as an outward half-plane boundary: points `p` with `normal . p <= offset`
/// are on the table side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub normal: Vec2,
    pub offset: f64,
    pub kind: WallKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WallKind {
    Edge,
    Diagonal,
}

impl Wall {
    /// Signed distance from `p` to the wall line; positive on the table side.
    pub fn clearance(&self, p: &Vec2) -> f64 {
        self.offset - self.normal.dot(p)
    }
}

impl WorldConfig {
    pub fn two_sphere() -> Self {
        WorldConfig {
            task: TaskVariant::TwoSphere,
            ..WorldConfig::default()
        }
    }

    // negated comparisons so that NaN fields are rejected
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: &str| Err(EnvError::InvalidConfig(msg.to_string()));
        let [hx, hy] = self.half_extent;
        if !(hx > 0.0 && hy > 0.0) {
            return bad("half extents must be positive");
        }
        if !(self.sphere_radius > 0.0) {
            return bad("sphere radius must be positive");
        }
        if !(self.push_offset > self.sphere_radius) {
            return bad("push offset must exceed the sphere radius");
        }
        if !(self.push_speed > 0.0) {
            return bad("push speed must be positive");
        }
        if !(self.friction > 0.0) {
            return bad("friction deceleration must be positive");
        }
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return bad("restitution must lie in (0, 1]");
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be non-negative");
        }
        if self.max_placement_attempts == 0 || self.max_events == 0 {
            return bad("attempt and event caps must be positive");
        }
        let edge_of = |p: [f64; 2]| -> Option<usize> {
            const TOL: f64 = 1e-9;
            if (p[0] - hx).abs() < TOL && p[1].abs() <= hy + TOL {
                Some(0)
            } else if (p[1] - hy).abs() < TOL && p[0].abs() <= hx + TOL {
                Some(1)
            } else if (p[0] + hx).abs() < TOL && p[1].abs() <= hy + TOL {
                Some(2)
            } else if (p[1] + hy).abs() < TOL && p[0].abs() <= hx + TOL {
                Some(3)
            } else {
                None
            }
        };
        match (
            edge_of(self.diagonal_wall.start),
            edge_of(self.diagonal_wall.end),
        ) {
            (Some(a), Some(b)) if (a + 1) % 4 == b || (b + 1) % 4 == a => {}
            _ => return bad("diagonal wall endpoints must lie on two adjacent table edges"),
        }
        if self.diagonal_wall().clearance(&Vec2::zeros()) <= 0.0 {
            return bad("diagonal wall must leave the table centre on the interior side");
        }
        if self.task == TaskVariant::TwoSphere {
            let fixed = Vec2::from(self.fixed_sphere);
            if !self
                .walls()
                .iter()
                .all(|w| w.clearance(&fixed) >= self.sphere_radius + self.margin)
            {
                return bad("fixed sphere position is not a valid placement");
            }
        }
        Ok(())
    }

    fn diagonal_wall(&self) -> Wall {
        let a = Vec2::from(self.diagonal_wall.start);
        let b = Vec2::from(self.diagonal_wall.end);
        let d = b - a;
        let mut normal = Vec2::new(d.y, -d.x).normalize();
        // orient away from the table centre
        if normal.dot(&a) < 0.0 {
            normal = -normal;
        }
        Wall {
            normal,
            offset: normal.dot(&a),
            kind: WallKind::Diagonal,
        }
    }

    /// All walls: the four table edges followed by the diagonal wall.
    pub fn walls(&self) -> [Wall; 5] {
        let [hx, hy] = self.half_extent;
        let edge = |nx: f64, ny: f64, offset: f64| Wall {
            normal: Vec2::new(nx, ny),
            offset,
            kind: WallKind::Edge,
        };
        [
            edge(1.0, 0.0, hx),
            edge(0.0, 1.0, hy),
            edge(-1.0, 0.0, hx),
            edge(0.0, -1.0, hy),
            self.diagonal_wall(),
        ]
    }

    /// Distance a sphere launched at `speed` travels before friction stops it.
    pub fn stopping_distance(&self, speed: f64) -> f64 {
        speed * speed / (2.0 * self.friction)
    }

    pub fn table_diagonal(&self) -> f64 {
        2.0 * self.half_extent[0].hypot(self.half_extent[1])
    }
}

/// A state-action pair: push angle and initial sphere position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub alpha: f64,
    pub pos: [f64; 2],
    /// `(sin a, cos a, pos_x / hx, pos_y / hy)`.
    pub encoded: [f64; 4],
}

impl InputPoint {
    /// Builds the point and its encoding without checking placement validity.
    pub fn new(cfg: &WorldConfig, alpha: f64, pos: [f64; 2]) -> Self {
        let (s, c) = alpha.sin_cos();
        InputPoint {
            alpha,
            pos,
            encoded: [
                s,
                c,
                pos[0] / cfg.half_extent[0],
                pos[1] / cfg.half_extent[1],
            ],
        }
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.encoded[1], self.encoded[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub delta: [f64; 2],
}

impl Effect {
    pub fn norm(&self) -> f64 {
        self.delta[0].hypot(self.delta[1])
    }
}

pub fn is_valid_position(cfg: &WorldConfig, pos: [f64; 2]) -> bool {
    let p = Vec2::from(pos);
    if !p.iter().all(|c| c.is_finite()) {
        return false;
    }
    let clearance = cfg.sphere_radius + cfg.margin;
    if !cfg.walls().iter().all(|w| w.clearance(&p) >= clearance) {
        return false;
    }
    match cfg.task {
        TaskVariant::OneSphere => true,
        TaskVariant::TwoSphere => {
            (p - Vec2::from(cfg.fixed_sphere)).norm() >= 2.0 * cfg.sphere_radius + cfg.margin
        }
    }
}

pub fn is_valid_input(cfg: &WorldConfig, x: &InputPoint) -> bool {
    (-ALPHA_MAX..=ALPHA_MAX).contains(&x.alpha) && is_valid_position(cfg, x.pos)
}

/// Draws `m` i.i.d. inputs: angle uniform on `[-pi/3, pi/3]`, position uniform
/// on the valid placement region (rejection sampling over the table square).
pub fn sample_input_space<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    rng: &mut R,
    m: usize,
) -> Result<Vec<InputPoint>, EnvError> {
    let [hx, hy] = cfg.half_extent;
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let alpha = rng.random_range(-ALPHA_MAX..=ALPHA_MAX);
        let mut attempts = 0;
        let pos = loop {
            if attempts >= cfg.max_placement_attempts {
                return Err(EnvError::SamplingExhausted { attempts });
            }
            attempts += 1;
            let p = [rng.random_range(-hx..=hx), rng.random_range(-hy..=hy)];
            if is_valid_position(cfg, p) {
                break p;
            }
        };
        out.push(InputPoint::new(cfg, alpha, pos));
    }
    Ok(out)
}

/// End-effector start and end points of the push stroke.
pub fn push_endpoints(cfg: &WorldConfig, x: &InputPoint) -> ([f64; 2], [f64; 2]) {
    let r = cfg.push_offset;
    let (s, c) = x.alpha.sin_cos();
    let [px, py] = x.pos;
    ([px - r * c, py - r * s], [px + r * c, py + r * s])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Start,
    Wall,
    Diagonal,
    SphereContact,
    Stop,
    Rest,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Wall => "wall",
            EventKind::Diagonal => "diagonal",
            EventKind::SphereContact => "sphere_contact",
            EventKind::Stop => "stop",
            EventKind::Rest => "rest",
        }
    }
}

/// Controlled-sphere state at an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollOutcome {
    pub rest: [f64; 2],
    /// Rest position of the passive sphere (two-sphere task).
    pub second_rest: Option<[f64; 2]>,
    /// Arc length travelled by the controlled sphere.
    pub path_length: f64,
    pub events: usize,
    pub elapsed: f64,
    /// Sum of squared speeds of all spheres, sampled after every event.
    pub energy_trace: Vec<f64>,
    pub trajectory: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, Copy)]
struct Ball {
    p: Vec2,
    v: Vec2,
}

impl Ball {
    fn speed(&self) -> f64 {
        self.v.norm()
    }

    fn moving(&self) -> bool {
        self.v.x != 0.0 || self.v.y != 0.0
    }

    fn stop_time(&self, mu: f64) -> f64 {
        if self.moving() {
            self.speed() / mu
        } else {
            0.0
        }
    }

    /// Unit heading scaled by the deceleration, or zero when at rest.
    fn decel(&self, mu: f64) -> Vec2 {
        if self.moving() {
            self.v / self.speed() * mu
        } else {
            Vec2::zeros()
        }
    }

    /// Advances by `tau`, clamping at the stopping time. Returns arc length.
    fn advance(&mut self, tau: f64, mu: f64) -> f64 {
        if !self.moving() || tau <= 0.0 {
            return 0.0;
        }
        let speed = self.speed();
        let heading = self.v / speed;
        let ts = speed / mu;
        if tau >= ts {
            let s = speed * speed / (2.0 * mu);
            self.p += heading * s;
            self.v = Vec2::zeros();
            s
        } else {
            let s = speed * tau - 0.5 * mu * tau * tau;
            self.p += heading * s;
            self.v = heading * (speed - mu * tau);
            s
        }
    }

    /// Time until the centre reaches `normal . p = limit`, if the current
    /// heading takes it there before stopping.
    fn wall_time(&self, wall: &Wall, limit: f64, mu: f64) -> Option<f64> {
        if !self.moving() {
            return None;
        }
        let speed = self.speed();
        let approach = wall.normal.dot(&self.v) / speed;
        if approach <= 0.0 {
            return None;
        }
        let gap = (limit - wall.normal.dot(&self.p)).max(0.0);
        let s = gap / approach;
        let reach = speed * speed - 2.0 * mu * s;
        if reach < 0.0 {
            return None;
        }
        Some(2.0 * s / (speed + reach.sqrt()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Next {
    Wall { ball: usize, wall: usize },
    Stop { ball: usize },
    Contact,
}

/// Runs the event-driven simulation of a launched controlled sphere (and the
/// passive sphere for the two-sphere task). With `trace` set, the returned
/// outcome carries one trajectory row per event of the controlled sphere.
pub fn simulate_push(
    cfg: &WorldConfig,
    pos0: [f64; 2],
    dir: [f64; 2],
    speed: f64,
    trace: bool,
) -> Result<RollOutcome, EnvError> {
    let mu = cfg.friction;
    let e = cfg.restitution;
    let walls = cfg.walls();
    let limits: Vec<f64> = walls.iter().map(|w| w.offset - cfg.sphere_radius).collect();
    let contact = 2.0 * cfg.sphere_radius;

    let mut balls = vec![Ball {
        p: Vec2::from(pos0),
        v: Vec2::from(dir) * speed,
    }];
    if cfg.task == TaskVariant::TwoSphere {
        balls.push(Ball {
            p: Vec2::from(cfg.fixed_sphere),
            v: Vec2::zeros(),
        });
    }

    let mut t = 0.0;
    let mut path_length = 0.0;
    let mut events = 0usize;
    let mut energy_trace = vec![balls.iter().map(|b| b.v.norm_squared()).sum()];
    let mut trajectory = Vec::new();
    let record = |t: f64, b: &Ball, event: EventKind, rows: &mut Vec<TrajectoryRow>| {
        if trace {
            rows.push(TrajectoryRow {
                t,
                pos: [b.p.x, b.p.y],
                vel: [b.v.x, b.v.y],
                event,
            });
        }
    };
    record(t, &balls[0], EventKind::Start, &mut trajectory);

    while balls.iter().any(Ball::moving) {
        if events >= cfg.max_events {
            return Err(EnvError::EventCapExceeded {
                cap: cfg.max_events,
            });
        }
        events += 1;

        let mut best: Option<(f64, Next)> = None;
        fn consider(best: &mut Option<(f64, Next)>, tau: f64, next: Next) {
            if best.is_none_or(|(b, _)| tau < b) {
                *best = Some((tau, next));
            }
        }
        for (i, ball) in balls.iter().enumerate() {
            if !ball.moving() {
                continue;
            }
            consider(&mut best, ball.stop_time(mu), Next::Stop { ball: i });
            for (w, wall) in walls.iter().enumerate() {
                if let Some(tau) = ball.wall_time(wall, limits[w], mu) {
                    consider(&mut best, tau, Next::Wall { ball: i, wall: w });
                }
            }
        }
        if balls.len() == 2 {
            let horizon = best.map(|(tau, _)| tau).unwrap_or(0.0);
            if let Some(tau) = contact_time(&balls[0], &balls[1], contact, mu, horizon) {
                consider(&mut best, tau, Next::Contact);
            }
        }
        let (tau, next) = best.expect("a moving sphere always has a stop event");

        for (i, ball) in balls.iter_mut().enumerate() {
            let travelled = ball.advance(tau, mu);
            if i == 0 {
                path_length += travelled;
            }
        }
        t += tau;

        match next {
            Next::Stop { ball } => {
                balls[ball].v = Vec2::zeros();
                if ball == 0 {
                    record(t, &balls[0], EventKind::Stop, &mut trajectory);
                }
            }
            Next::Wall { ball, wall } => {
                let w = &walls[wall];
                let b = &mut balls[ball];
                let over = w.normal.dot(&b.p) - limits[wall];
                if over > 0.0 {
                    b.p -= w.normal * over;
                }
                let vn = w.normal.dot(&b.v);
                if vn > 0.0 {
                    b.v = (b.v - w.normal * (2.0 * vn)) * e;
                }
                if ball == 0 {
                    let kind = match w.kind {
                        WallKind::Edge => EventKind::Wall,
                        WallKind::Diagonal => EventKind::Diagonal,
                    };
                    record(t, &balls[0], kind, &mut trajectory);
                }
            }
            Next::Contact => {
                let (a, b) = (balls[0], balls[1]);
                let d = b.p - a.p;
                let n = d / d.norm();
                let vn = (a.v - b.v).dot(&n);
                if vn > 0.0 {
                    let j = 0.5 * (1.0 + e) * vn;
                    balls[0].v -= n * j;
                    balls[1].v += n * j;
                }
                record(t, &balls[0], EventKind::SphereContact, &mut trajectory);
            }
        }
        energy_trace.push(balls.iter().map(|b| b.v.norm_squared()).sum());
    }
    record(t, &balls[0], EventKind::Rest, &mut trajectory);

    Ok(RollOutcome {
        rest: [balls[0].p.x, balls[0].p.y],
        second_rest: balls.get(1).map(|b| [b.p.x, b.p.y]),
        path_length,
        events,
        elapsed: t,
        energy_trace,
        trajectory,
    })
}

/// Rest position of the controlled sphere after a launch.
pub fn simulate_roll(
    cfg: &WorldConfig,
    pos0: [f64; 2],
    dir: [f64; 2],
    speed: f64,
) -> Result<[f64; 2], EnvError> {
    simulate_push(cfg, pos0, dir, speed, false).map(|o| o.rest)
}

/// Pushes the sphere from `x.pos` along `(cos a, sin a)` at the configured
/// speed and reports the displacement once everything is at rest. The passive
/// sphere always starts from its fixed position.
pub fn execute_and_observe(cfg: &WorldConfig, x: &InputPoint) -> Result<Effect, EnvError> {
    if !is_valid_position(cfg, x.pos) {
        return Err(EnvError::InvalidPlacement {
            x: x.pos[0],
            y: x.pos[1],
        });
    }
    let d = x.direction();
    let rest = simulate_roll(cfg, x.pos, [d.x, d.y], cfg.push_speed)?;
    Ok(Effect {
        delta: [rest[0] - x.pos[0], rest[1] - x.pos[1]],
    })
}

/// Earliest time in `[0, horizon]` at which the two spheres come into contact
/// while approaching each other. Both follow quadratic paths over the horizon
/// (it never extends past a stop), so the squared gap is a quartic in time.
fn contact_time(a: &Ball, b: &Ball, contact: f64, mu: f64, horizon: f64) -> Option<f64> {
    let dp = b.p - a.p;
    let dv = b.v - a.v;
    let da = -(b.decel(mu) - a.decel(mu)) * 0.5;
    // |dp + dv t + da t^2|^2 - contact^2, lowest degree first
    let coeffs = [
        dp.dot(&dp) - contact * contact,
        2.0 * dp.dot(&dv),
        dv.dot(&dv) + 2.0 * dp.dot(&da),
        2.0 * dv.dot(&da),
        da.dot(&da),
    ];
    let slope = |t: f64| poly_eval(&poly_derivative(&coeffs), t);
    if coeffs[0] <= 0.0 && coeffs[1] < 0.0 {
        return Some(0.0);
    }
    real_roots(&coeffs, 0.0, horizon)
        .into_iter()
        .find(|&t| t > 0.0 && slope(t) < 0.0)
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(i, &k)| k * i as f64)
        .collect()
}

/// Real roots of a polynomial (coefficients lowest degree first) in
/// `[lo, hi]`, sorted. Roots are isolated between critical points found
/// recursively from the derivative, then refined by bisection.
fn real_roots(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut deg = c.len();
    while deg > 0 && c[deg - 1] == 0.0 {
        deg -= 1;
    }
    let c = &c[..deg];
    if deg <= 1 || hi < lo {
        return Vec::new();
    }
    if deg == 2 {
        let r = -c[0] / c[1];
        return if (lo..=hi).contains(&r) {
            vec![r]
        } else {
            Vec::new()
        };
    }
    let mut knots = vec![lo];
    knots.extend(real_roots(&poly_derivative(c), lo, hi));
    knots.push(hi);

    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (mut fa, fb) = (poly_eval(c, a), poly_eval(c, b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fb == 0.0 || fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = poly_eval(c, mid);
            if fm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        roots.push(0.5 * (a + b));
    }
    if poly_eval(c, hi) == 0.0 {
        roots.push(hi);
    }
    roots.dedup();
    roots
}
