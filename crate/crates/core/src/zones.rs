//! Escape and capture zones from Apollonius-circle geometry.
//!
//! Analytic classifiers work in the canonical frame: attacker at `(x_a, 0)`,
//! defender at `(-x_a, 0)`. The variable-velocity classifier integrates a
//! short pre-phase numerically and then re-expresses the engagement in a
//! frame built from the agents' positions when the safe distance is reached.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Classification margin below which a point is reported as `Boundary`.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Ratios this close to one are treated as equal speeds.
pub const UNIT_RATIO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZoneError {
    #[error("speed ratio {gamma} is within 1e-12 of one; the locus is a line")]
    DegenerateRatio { gamma: f64 },
    #[error("safe distance not reached from target ({x}, {y}) within the time budget")]
    NonConvergent { x: f64, y: f64 },
    #[error("invalid zone parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Escape,
    Capture,
    Boundary,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Escape => "escape",
            Label::Capture => "capture",
            Label::Boundary => "boundary",
        }
    }

    fn from_margin(margin: f64) -> Self {
        if margin.abs() < BOUNDARY_TOL {
            Label::Boundary
        } else if margin > 0.0 {
            Label::Escape
        } else {
            Label::Capture
        }
    }

    fn level(self) -> f64 {
        match self {
            Label::Escape => 1.0,
            Label::Capture => 0.0,
            Label::Boundary => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApolloniusCircle {
    pub center: [f64; 2],
    pub radius: f64,
    pub speed_ratio: f64,
}

impl ApolloniusCircle {
    pub fn point_at(&self, angle: f64) -> [f64; 2] {
        [
            self.center[0] + self.radius * angle.cos(),
            self.center[1] + self.radius * angle.sin(),
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        dist(self.center, p) < self.radius
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Locus of points the evader (speed `gamma * v`) and the pursuer (speed `v`)
/// reach at the same time.
pub fn apollonius_circle(
    evader: [f64; 2],
    pursuer: [f64; 2],
    gamma: f64,
) -> Result<ApolloniusCircle, ZoneError> {
    if (gamma - 1.0).abs() < UNIT_RATIO_TOL {
        return Err(ZoneError::DegenerateRatio { gamma });
    }
    let g2 = gamma * gamma;
    let den = 1.0 - g2;
    Ok(ApolloniusCircle {
        center: [
            (evader[0] - g2 * pursuer[0]) / den,
            (evader[1] - g2 * pursuer[1]) / den,
        ],
        radius: gamma * dist(evader, pursuer) / den.abs(),
        speed_ratio: gamma,
    })
}

/// Safe-distance rule for variable-velocity targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeDistance {
    /// Fixed distance in metres.
    Absolute(f64),
    /// Fraction of the initial target-attacker range.
    FractionOfRange(f64),
}

impl SafeDistance {
    pub fn resolve(&self, initial_range: f64) -> f64 {
        match *self {
            SafeDistance::Absolute(e) => e,
            SafeDistance::FractionOfRange(f) => f * initial_range,
        }
    }
}

impl Default for SafeDistance {
    fn default() -> Self {
        SafeDistance::FractionOfRange(0.5)
    }
}

/// Defender motion while the target is still at rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrePhaseLaw {
    /// Head at the attacker's current position.
    PurePursuit,
    /// Head at the point where the straight-flying attacker can be met;
    /// falls back to pure pursuit when no such point exists.
    #[default]
    CollisionCourse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoneParams {
    /// Attacker abscissa in the canonical frame; the defender sits at `-x_a`.
    pub x_a: f64,
    pub gamma_at: f64,
    pub gamma_ad: f64,
    pub safe_distance: SafeDistance,
    /// Attacker position 1-sigma for the stochastic classifier.
    pub sigma_pos: f64,
    /// Defender-attacker capture radius for the pre-phase; `None` means
    /// `0.02 * x_a`.
    pub capture_radius: Option<f64>,
    pub pre_phase: PrePhaseLaw,
    /// Pre-phase integration step as a fraction of `x_a / v_A`.
    pub pre_phase_dt: f64,
}

impl Default for ZoneParams {
    fn default() -> Self {
        Self {
            x_a: 35.0,
            gamma_at: 0.5,
            gamma_ad: 1.0,
            safe_distance: SafeDistance::default(),
            sigma_pos: 0.0,
            capture_radius: None,
            pre_phase: PrePhaseLaw::default(),
            pre_phase_dt: 1e-3,
        }
    }
}

impl ZoneParams {
    pub fn new(x_a: f64, gamma_at: f64, gamma_ad: f64) -> Self {
        Self {
            x_a,
            gamma_at,
            gamma_ad,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ZoneError> {
        let bad = |m: &str| Err(ZoneError::InvalidParams(m.into()));
        if !(self.x_a > 0.0 && self.x_a.is_finite()) {
            return bad("x_a must be positive");
        }
        if !(self.gamma_at > 0.0 && self.gamma_at < 1.0) {
            return bad("gamma_at must lie in (0, 1)");
        }
        if !(self.gamma_ad > 0.0 && self.gamma_ad.is_finite()) {
            return bad("gamma_ad must be positive");
        }
        if !(self.sigma_pos >= 0.0) {
            return bad("sigma_pos must be non-negative");
        }
        if !(self.pre_phase_dt > 0.0) {
            return bad("pre_phase_dt must be positive");
        }
        Ok(())
    }

    pub fn attacker(&self) -> [f64; 2] {
        [self.x_a, 0.0]
    }

    pub fn defender(&self) -> [f64; 2] {
        [-self.x_a, 0.0]
    }

    pub fn equal_speeds(&self) -> bool {
        (self.gamma_ad - 1.0).abs() < UNIT_RATIO_TOL
    }

    fn capture_radius(&self) -> f64 {
        self.capture_radius.unwrap_or(0.02 * self.x_a)
    }
}

/// Signed escape margin for arbitrary attacker and defender positions,
/// normalized by half the attacker-defender distance. Positive means the
/// target's reachable region extends into the defender's dominance region.
pub fn escape_margin(
    target: [f64; 2],
    attacker: [f64; 2],
    defender: [f64; 2],
    gamma_at: f64,
    gamma_ad: f64,
) -> f64 {
    let half = 0.5 * dist(attacker, defender);
    let at = apollonius_circle(target, attacker, gamma_at)
        .expect("gamma_at lies in (0, 1)");
    if (gamma_ad - 1.0).abs() < UNIT_RATIO_TOL {
        // Dominance line is the perpendicular bisector of A-D.
        let mid = [
            0.5 * (attacker[0] + defender[0]),
            0.5 * (attacker[1] + defender[1]),
        ];
        let axis = [
            (attacker[0] - defender[0]) / (2.0 * half),
            (attacker[1] - defender[1]) / (2.0 * half),
        ];
        let offset = (at.center[0] - mid[0]) * axis[0] + (at.center[1] - mid[1]) * axis[1];
        return (at.radius - offset) / half;
    }
    let ad = apollonius_circle(defender, attacker, gamma_ad).expect("ratio checked above");
    let d_c = dist(at.center, ad.center);
    let m = if gamma_ad < 1.0 {
        ad.radius + at.radius - d_c
    } else {
        d_c + at.radius - ad.radius
    };
    m / half
}

/// Left-hand side minus one of the equal-speed escape inequality.
fn equal_speed_inequality(target: [f64; 2], x_a: f64, gamma: f64) -> f64 {
    let [x, y] = target;
    let g2 = gamma * gamma;
    let sx = x / gamma;
    x_a * x_a / (sx * sx) + y * y / ((1.0 - g2) * sx * sx) - 1.0
}

/// Escape zone for a target moving at its top speed.
pub fn classify_constant_speed(target: [f64; 2], params: &ZoneParams) -> Label {
    if params.equal_speeds() {
        if target[0] <= 0.0 {
            return Label::Escape;
        }
        return Label::from_margin(equal_speed_inequality(target, params.x_a, params.gamma_at));
    }
    Label::from_margin(escape_margin(
        target,
        params.attacker(),
        params.defender(),
        params.gamma_at,
        params.gamma_ad,
    ))
}

/// Non-negative branch of the equal-speed boundary hyperbola.
pub fn boundary_equal_speed(params: &ZoneParams, x: f64) -> Option<f64> {
    let g = params.gamma_at;
    let xa = params.x_a;
    let vertex = g * xa;
    if x < vertex {
        return None;
    }
    let s = (x * x / (vertex * vertex) - 1.0).max(0.0);
    Some(xa * (1.0 - g * g).sqrt() * s.sqrt())
}

/// Coefficients `[c0, c1, c2, c3, c4]` of the unequal-speed tangency quartic.
pub fn quartic_coefficients(x_a: f64, gamma_at: f64, gamma_ad: f64) -> [f64; 5] {
    let (t, d) = (gamma_at, gamma_ad);
    let (t2, d2) = (t * t, d * d);
    let (t4, d4) = (t2 * t2, d2 * d2);
    let xa2 = x_a * x_a;
    let c0 = xa2 - 2.0 * d2 * xa2 + d4 * xa2 - 5.0 * t2 * xa2 + 8.0 * t2 * d2 * xa2 - d4 * t2 * xa2
        + 4.0 * t4 * xa2
        - 4.0 * t4 * d2 * xa2
        - 2.0 * d2 * t2 * xa2;
    let c1 = -4.0 * t * d * x_a + 4.0 * t2 * t * d * x_a + 4.0 * t * d2 * d * x_a
        - 4.0 * d2 * d * t2 * t * x_a;
    let c3 = 1.0 - t2 - 2.0 * d2 + 2.0 * d2 * t2 + d4 - d4 * t2;
    // The y^2 and x^2 coefficients coincide.
    let c2 = c3;
    let c4 = 2.0 * x_a - 2.0 * t2 * x_a - 2.0 * d4 * x_a + 2.0 * t2 * d4 * x_a;
    [c0, c1, c2, c3, c4]
}

/// Quadratic-in-`y^2` form `a y^4 + b y^2 + c` of the quartic at abscissa `x`.
pub fn quartic_abc(coeffs: &[f64; 5], x_a: f64, x: f64) -> [f64; 3] {
    let [c0, c1, c2, c3, c4] = *coeffs;
    let a = c3 * c3;
    let b = 2.0 * c2 * c3 * x * x + 2.0 * c3 * c4 * x + 2.0 * c3 * c0 - c1 * c1;
    let c = c2 * c2 * x.powi(4) + c4 * c4 * x * x + c0 * c0 + 2.0 * c4 * c0 * x
        + 2.0 * c2 * c4 * x.powi(3)
        + 2.0 * c2 * c0 * x * x
        - c1 * c1 * x * x
        + 2.0 * c1 * c1 * x_a * x
        - c1 * c1 * x_a * x_a;
    [a, b, c]
}

/// Both closed-form roots `(y1^2, y2^2)` (`+sqrt` and `-sqrt` branches), or
/// `None` when the discriminant is negative. Uses the cancellation-free form
/// of the quadratic formula.
pub fn quartic_roots(coeffs: &[f64; 5], x_a: f64, x: f64) -> Option<(f64, f64)> {
    let [a, b, c] = quartic_abc(coeffs, x_a, x);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    if b >= 0.0 {
        let q = -0.5 * (b + sq);
        // q / a is the -sqrt branch.
        let y1 = if q != 0.0 { c / q } else { 0.0 };
        Some((y1, q / a))
    } else {
        let q = -0.5 * (b - sq);
        Some((q / a, c / q))
    }
}

/// `(|a y^4 + b y^2 + c|, max term magnitude)` at `y^2 = y2`.
pub fn quartic_residual(coeffs: &[f64; 5], x_a: f64, x: f64, y2: f64) -> (f64, f64) {
    let [a, b, c] = quartic_abc(coeffs, x_a, x);
    let terms = [a * y2 * y2, b * y2, c];
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    ((terms[0] + terms[1] + terms[2]).abs(), scale)
}

/// Gap between the A-T and A-D circle center distance and the tangency
/// distance: outer (`r_AD + r_AT`) when `outer`, inner (`|r_AD - r_AT|`)
/// otherwise.
pub fn tangency_gap(params: &ZoneParams, target: [f64; 2], outer: bool) -> f64 {
    let at = apollonius_circle(target, params.attacker(), params.gamma_at)
        .expect("gamma_at lies in (0, 1)");
    let ad = apollonius_circle(params.defender(), params.attacker(), params.gamma_ad)
        .expect("unequal speeds");
    let d_c = dist(at.center, ad.center);
    let want = if outer {
        ad.radius + at.radius
    } else {
        (ad.radius - at.radius).abs()
    };
    d_c - want
}

/// Boundary `y^2` values at abscissa `x` for unequal attacker-defender
/// speeds. Both closed-form roots are candidates; a root is kept when it is
/// non-negative and the circles are outer-tangent there (slower defender) or
/// inner-tangent (faster defender). Squaring during the derivation admits
/// roots of the other tangency kind, and which closed-form branch carries the
/// wanted one depends on `x`.
pub fn quartic_boundary(params: &ZoneParams, x: f64) -> Vec<f64> {
    let coeffs = quartic_coefficients(params.x_a, params.gamma_at, params.gamma_ad);
    let Some((y1, y2)) = quartic_roots(&coeffs, params.x_a, x) else {
        return Vec::new();
    };
    let outer = params.gamma_ad < 1.0;
    let mut out: Vec<f64> = [y1, y2]
        .into_iter()
        .filter(|r| r.is_finite() && *r >= 0.0)
        .filter(|r| {
            let gap = tangency_gap(params, [x, r.sqrt()], outer);
            gap.abs() <= QUARTIC_TANGENCY_TOL * params.x_a.max(1.0)
        })
        .collect();
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    out
}

/// Relative tolerance for accepting a quartic root as a tangency point.
pub const QUARTIC_TANGENCY_TOL: f64 = 1e-7;

/// Escape zone for a target that never moves.
pub fn classify_stationary(target: [f64; 2], params: &ZoneParams) -> Label {
    if params.equal_speeds() {
        return Label::from_margin(-target[0] / params.x_a);
    }
    let ad = apollonius_circle(params.defender(), params.attacker(), params.gamma_ad)
        .expect("ratio checked above");
    let inside = (ad.radius - dist(ad.center, target)) / params.x_a;
    Label::from_margin(if params.gamma_ad < 1.0 { inside } else { -inside })
}

/// Rotation-translation into a frame with origin `(x0, y0)` rotated by `phi`.
pub fn frame_transform(points: &[[f64; 2]], x0: f64, y0: f64, phi: f64) -> Vec<[f64; 2]> {
    let (s, c) = phi.sin_cos();
    points
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - x0, p[1] - y0);
            [dx * c + dy * s, dy * c - dx * s]
        })
        .collect()
}

/// Origin and rotation of the frame that puts the attacker at `(+h, 0)` and
/// the defender at `(-h, 0)`.
pub fn canonical_frame(attacker: [f64; 2], defender: [f64; 2]) -> (f64, f64, f64) {
    let x0 = 0.5 * (attacker[0] + defender[0]);
    let y0 = 0.5 * (attacker[1] + defender[1]);
    let phi = (attacker[1] - defender[1]).atan2(attacker[0] - defender[0]);
    (x0, y0, phi)
}

/// How the variable-velocity pre-phase ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrePhaseOutcome {
    /// Defender reached the attacker before the safe distance was violated.
    Intercepted { time: f64 },
    /// Safe distance reached; positions of attacker and defender at that time.
    SafeDistanceReached {
        time: f64,
        attacker: [f64; 2],
        defender: [f64; 2],
    },
}

/// Integrate the stationary-target phase with a unit attacker speed.
pub fn pre_phase(target: [f64; 2], params: &ZoneParams) -> Result<PrePhaseOutcome, ZoneError> {
    let v_a = 1.0;
    let v_d = params.gamma_ad;
    let mut a = params.attacker();
    let mut d = params.defender();
    let r0 = dist(a, target);
    let e = params.safe_distance.resolve(r0);
    let rc = params.capture_radius();
    if r0 <= e {
        return Ok(PrePhaseOutcome::SafeDistanceReached {
            time: 0.0,
            attacker: a,
            defender: d,
        });
    }
    let dir = [(target[0] - a[0]) / r0, (target[1] - a[1]) / r0];

    let meet_time = match params.pre_phase {
        PrePhaseLaw::PurePursuit => None,
        PrePhaseLaw::CollisionCourse => collision_time(a, dir, v_a, d, v_d),
    };

    let dt = params.pre_phase_dt * params.x_a / v_a;
    let budget = 1e3 * params.x_a / v_a + r0 / v_a;
    let mut t = 0.0;
    while t <= budget {
        if dist(a, d) <= rc {
            return Ok(PrePhaseOutcome::Intercepted { time: t });
        }
        if dist(a, target) <= e {
            return Ok(PrePhaseOutcome::SafeDistanceReached {
                time: t,
                attacker: a,
                defender: d,
            });
        }
        let aim = match meet_time {
            Some(tm) if tm > t => [a[0] + v_a * (tm - t) * dir[0], a[1] + v_a * (tm - t) * dir[1]],
            _ => a,
        };
        let gap = dist(aim, d);
        if gap > 0.0 {
            let step = (v_d * dt).min(gap);
            d = [d[0] + step * (aim[0] - d[0]) / gap, d[1] + step * (aim[1] - d[1]) / gap];
        }
        a = [a[0] + v_a * dt * dir[0], a[1] + v_a * dt * dir[1]];
        t += dt;
    }
    Err(ZoneError::NonConvergent {
        x: target[0],
        y: target[1],
    })
}

/// Earliest `t > 0` with `|a + v_a t dir - d| = v_d t`.
fn collision_time(a: [f64; 2], dir: [f64; 2], v_a: f64, d: [f64; 2], v_d: f64) -> Option<f64> {
    let (rx, ry) = (a[0] - d[0], a[1] - d[1]);
    let qa = v_a * v_a - v_d * v_d;
    let qb = 2.0 * v_a * (rx * dir[0] + ry * dir[1]);
    let qc = rx * rx + ry * ry;
    if qa.abs() < 1e-12 {
        return (qb < 0.0).then(|| -qc / qb);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)]
        .into_iter()
        .filter(|t| *t > 0.0)
        .min_by(f64::total_cmp)
}

/// Escape zone for a target at rest until the safe distance is violated and
/// at top speed afterwards.
pub fn classify_variable_velocity(target: [f64; 2], params: &ZoneParams) -> Result<Label, ZoneError> {
    match pre_phase(target, params)? {
        PrePhaseOutcome::Intercepted { .. } => Ok(Label::Escape),
        PrePhaseOutcome::SafeDistanceReached {
            attacker, defender, ..
        } => {
            let half = 0.5 * dist(attacker, defender);
            if half <= params.capture_radius() {
                return Ok(Label::Escape);
            }
            let (x0, y0, phi) = canonical_frame(attacker, defender);
            let t = frame_transform(&[target], x0, y0, phi)[0];
            let local = ZoneParams { x_a: half, ..*params };
            Ok(classify_constant_speed(t, &local))
        }
    }
}

/// Number of attacker positions sampled on the uncertainty circle.
pub const STOCHASTIC_RING_SAMPLES: usize = 64;

/// Worst-case classification over attacker positions within `3 sigma_pos`
/// of nominal.
pub fn stochastic_classify(target: [f64; 2], params: &ZoneParams) -> Label {
    let nominal = classify_constant_speed(target, params);
    if params.sigma_pos <= 0.0 || nominal != Label::Escape {
        return nominal;
    }
    let rad = 3.0 * params.sigma_pos;
    let a0 = params.attacker();
    let d = params.defender();
    let worst = (0..STOCHASTIC_RING_SAMPLES)
        .map(|k| {
            let ang = TAU * k as f64 / STOCHASTIC_RING_SAMPLES as f64;
            let a = [a0[0] + rad * ang.cos(), a0[1] + rad * ang.sin()];
            escape_margin(target, a, d, params.gamma_at, params.gamma_ad)
        })
        .fold(f64::INFINITY, f64::min);
    Label::from_margin(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneMode {
    ConstantSpeed,
    Stationary,
    VariableVelocity,
    Stochastic,
}

impl std::str::FromStr for ZoneMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cs" | "constant_speed" => Ok(ZoneMode::ConstantSpeed),
            "stationary" => Ok(ZoneMode::Stationary),
            "vv" | "variable_velocity" => Ok(ZoneMode::VariableVelocity),
            "stochastic" => Ok(ZoneMode::Stochastic),
            other => Err(format!("unknown zone mode '{other}'")),
        }
    }
}

pub fn classify(mode: ZoneMode, target: [f64; 2], params: &ZoneParams) -> Result<Label, ZoneError> {
    Ok(match mode {
        ZoneMode::ConstantSpeed => classify_constant_speed(target, params),
        ZoneMode::Stationary => classify_stationary(target, params),
        ZoneMode::VariableVelocity => return classify_variable_velocity(target, params),
        ZoneMode::Stochastic => stochastic_classify(target, params),
    })
}

/// Rectangular grid of `nx * ny` cells; labels are evaluated at cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn square(min: f64, max: f64, n: usize) -> Self {
        Self {
            x_min: min,
            x_max: max,
            y_min: min,
            y_max: max,
            nx: n,
            ny: n,
        }
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.x_max - self.x_min) / self.nx as f64,
            (self.y_max - self.y_min) / self.ny as f64,
        )
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        let (dx, dy) = self.cell_size();
        [
            self.x_min + (i as f64 + 0.5) * dx,
            self.y_min + (j as f64 + 0.5) * dy,
        ]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell centers in row-major order (x fastest).
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| self.center(i, j))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ZoneError> {
        let ok = self.x_max > self.x_min && self.y_max > self.y_min && self.nx > 0 && self.ny > 0;
        if ok && [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ZoneError::InvalidParams("grid needs finite bounds and nx, ny > 0".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneMap {
    pub grid: GridSpec,
    pub mode: ZoneMode,
    /// Row-major labels, x fastest.
    pub labels: Vec<Label>,
    pub boundary: Vec<Vec<[f64; 2]>>,
    /// Cells whose classifier failed; they are labeled `Boundary`.
    #[serde(skip)]
    pub failures: Vec<(usize, ZoneError)>,
}

impl ZoneMap {
    pub fn label(&self, i: usize, j: usize) -> Label {
        self.labels[j * self.grid.nx + i]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn escape_area(&self) -> f64 {
        let (dx, dy) = self.grid.cell_size();
        self.count(Label::Escape) as f64 * dx * dy
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,label\n");
        for (p, l) in self.grid.centers().iter().zip(&self.labels) {
            s.push_str(&format!("{},{},{}\n", p[0], p[1], l.as_str()));
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let g = &self.grid;
        let (w, h) = (g.x_max - g.x_min, g.y_max - g.y_min);
        let px = 600.0;
        let scale = px / w.max(h);
        let sx = |x: f64| (x - g.x_min) * scale;
        let sy = |y: f64| (g.y_max - y) * scale;
        let (cw, ch) = g.cell_size();
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.1}\" height=\"{:.1}\" viewBox=\"0 0 {:.1} {:.1}\">\n",
            w * scale,
            h * scale,
            w * scale,
            h * scale
        );
        for (p, l) in g.centers().iter().zip(&self.labels) {
            let fill = match l {
                Label::Escape => "#cfe8cf",
                Label::Capture => "#f3d0d0",
                Label::Boundary => "#e0e0e0",
            };
            s.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>\n",
                sx(p[0] - 0.5 * cw),
                sy(p[1] + 0.5 * ch),
                cw * scale,
                ch * scale
            ));
        }
        for line in &self.boundary {
            let pts: Vec<String> = line
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
                .collect();
            s.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n",
                pts.join(" ")
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

pub fn build_zone_map(params: &ZoneParams, grid: &GridSpec, mode: ZoneMode) -> Result<ZoneMap, ZoneError> {
    params.validate()?;
    grid.validate()?;
    let results: Vec<Result<Label, ZoneError>> = grid
        .centers()
        .par_iter()
        .map(|p| classify(mode, *p, params))
        .collect();
    let mut failures = Vec::new();
    let labels = results
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.unwrap_or_else(|err| {
                failures.push((k, err));
                Label::Boundary
            })
        })
        .collect::<Vec<_>>();
    let boundary = contour_polylines(grid, &labels);
    Ok(ZoneMap {
        grid: *grid,
        mode,
        labels,
        boundary,
        failures,
    })
}

/// Marching squares over cell centers at the Escape/Capture mid level.
pub fn contour_polylines(grid: &GridSpec, labels: &[Label]) -> Vec<Vec<[f64; 2]>> {
    let level = |i: usize, j: usize| labels[j * grid.nx + i].level();
    let mut segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    if grid.nx < 2 || grid.ny < 2 {
        return Vec::new();
    }
    let edge_point = |p: [f64; 2], q: [f64; 2], fp: f64, fq: f64| -> [f64; 2] {
        let t = ((0.5 - fp) / (fq - fp)).clamp(0.0, 1.0);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            // Corners counter-clockwise from bottom-left.
            let idx = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let pos: Vec<[f64; 2]> = idx.iter().map(|&(a, b)| grid.center(a, b)).collect();
            let val: Vec<f64> = idx.iter().map(|&(a, b)| level(a, b)).collect();
            let inside: Vec<bool> = val.iter().map(|v| *v > 0.5).collect();
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let f = (e + 1) % 4;
                if inside[e] != inside[f] {
                    crossings.push(edge_point(pos[e], pos[f], val[e], val[f]));
                }
            }
            match crossings.len() {
                2 => segments.push((crossings[0], crossings[1])),
                4 => {
                    // Saddle: resolve by the average of the four corners.
                    let mean = val.iter().sum::<f64>() / 4.0;
                    if (mean > 0.5) == inside[0] {
                        segments.push((crossings[0], crossings[3]));
                        segments.push((crossings[1], crossings[2]));
                    } else {
                        segments.push((crossings[0], crossings[1]));
                        segments.push((crossings[2], crossings[3]));
                    }
                }
                _ => {}
            }
        }
    }
    chain_segments(segments)
}

fn chain_segments(segments: Vec<([f64; 2], [f64; 2])>) -> Vec<Vec<[f64; 2]>> {
    let key = |p: [f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let mut by_point: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_point.entry(key(*a)).or_default().push(k);
        by_point.entry(key(*b)).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (a, b) = segments[start];
        let mut line = std::collections::VecDeque::from([a, b]);
        for forward in [true, false] {
            loop {
                let end = if forward { *line.back().unwrap() } else { *line.front().unwrap() };
                let next = by_point
                    .get(&key(end))
                    .and_then(|c| c.iter().copied().find(|k| !used[*k]));
                let Some(k) = next else { break };
                used[k] = true;
                let (p, q) = segments[k];
                let other = if key(p) == key(end) { q } else { p };
                if forward {
                    line.push_back(other);
                } else {
                    line.push_front(other);
                }
            }
        }
        lines.push(line.into_iter().collect());
    }
    lines
}

/// Abscissa on `y = 0` where `label_at` switches from Escape (left) to
/// non-Escape (right), found by bisection on `[lo, hi]`.
pub fn x_intercept(label_at: impl Fn(f64) -> Label, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    if label_at(lo) != Label::Escape || label_at(hi) == Label::Escape {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if label_at(mid) == Label::Escape {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
