//! Closed-loop engagement: measure, estimate, control, guide, integrate,
//! check events.

use web_time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engagement::{step_agent, step_target, AgentState, EngagementState};
use crate::estimator::{ekf_predict, ekf_update, simulate_measurement, EstimatorState};
use crate::guidance::{switched_attacker_accel, turn_rate, LosController, LosVariant};
use crate::nmpc::{solve, AttackerModel, ControlInput, ControlPlan, NmpcConfig};

use super::config::{ControllerKind, ScenarioConfig};
use super::metrics::{compute_metrics, MetricsRecord};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TargetCaptured,
    AttackerIntercepted,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::TargetCaptured => "target_captured",
            Outcome::AttackerIntercepted => "attacker_intercepted",
            Outcome::Timeout => "timeout",
        }
    }
}

/// One logged sample. Controls are those applied over `[t, t + dt)`; on the
/// final row they repeat the last applied values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub target: AgentState,
    pub attacker: AgentState,
    pub defender: AgentState,
    pub control: ControlInput,
    /// Attacker lateral acceleration, m/s^2.
    pub attacker_accel: f64,
    pub range_at: f64,
    pub range_ad: f64,
    /// Filter mean `[x, y, heading, accel]`.
    pub estimate: [f64; 4],
    pub sigma: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub name: String,
    pub controller: ControllerKind,
    pub outcome: Outcome,
    /// Interpolated event time, or the duration cap on timeout.
    pub event_time: f64,
    pub dt: f64,
    pub log: Vec<LogRow>,
    /// Wall-clock seconds spent in the team controller, per call.
    pub controller_times: Vec<f64>,
    pub metrics: Option<MetricsRecord>,
}

/// Earliest fraction `s` in `[0, 1]` at which the linearly interpolated
/// relative position `p0 + s (p1 - p0)` comes within `radius` of the origin.
pub fn first_crossing(p0: [f64; 2], p1: [f64; 2], radius: f64) -> Option<f64> {
    let r2 = radius * radius;
    let c = p0[0] * p0[0] + p0[1] * p0[1] - r2;
    if c <= 0.0 {
        return Some(0.0);
    }
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let a = d[0] * d[0] + d[1] * d[1];
    let b = 2.0 * (p0[0] * d[0] + p0[1] * d[1]);
    if a == 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // c > 0 so both roots share a sign; the smaller one is the entry.
    let s = (-b - disc.sqrt()) / (2.0 * a);
    (0.0..=1.0).contains(&s).then_some(s)
}

fn rel(a: &AgentState, b: &AgentState) -> [f64; 2] {
    [a.x - b.x, a.y - b.y]
}

/// Event in the step from `before` to `after`, with its fractional time.
/// Interception wins ties.
pub fn detect_event(
    before: &EngagementState,
    after: &EngagementState,
    target_radius: f64,
    defender_radius: f64,
) -> Option<(Outcome, f64)> {
    let captured = first_crossing(
        rel(&before.target, &before.attacker),
        rel(&after.target, &after.attacker),
        target_radius,
    );
    let intercepted = first_crossing(
        rel(&before.defender, &before.attacker),
        rel(&after.defender, &after.attacker),
        defender_radius,
    );
    match (captured, intercepted) {
        (Some(sc), Some(si)) if sc < si => Some((Outcome::TargetCaptured, sc)),
        (_, Some(si)) => Some((Outcome::AttackerIntercepted, si)),
        (Some(sc), None) => Some((Outcome::TargetCaptured, sc)),
        (None, None) => None,
    }
}

enum TeamController {
    Nmpc { cfg: NmpcConfig, plan: ControlPlan },
    Los { law: LosController },
}

pub fn run_simulation(cfg: &ScenarioConfig) -> Result<SimResult, HarnessError> {
    cfg.validate()?;
    let nmpc_cfg = cfg.nmpc_config();
    let dt = nmpc_cfg.dt;
    let q = cfg.noise.q.matrix();
    let sigma = cfg.noise.sigma.matrix();
    let v_a = cfg.attacker.speed;
    let v_t_max = cfg.target.max_speed;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut state = EngagementState {
        t: 0.0,
        target: cfg.target.state(),
        attacker: cfg.attacker.state(),
        defender: cfg.defender.state(),
    };
    let cruise = {
        let v = state.target.velocity();
        ControlInput {
            u_x: v[0],
            u_y: v[1],
            alpha_dot_d: 0.0,
        }
    };
    let mut team = match cfg.controller {
        ControllerKind::Nmpc => TeamController::Nmpc {
            cfg: nmpc_cfg,
            plan: ControlPlan::initial(&state.target, &nmpc_cfg),
        },
        ControllerKind::Clos => TeamController::Los {
            law: LosController::new(LosVariant::Clos),
        },
        ControllerKind::Aclos => TeamController::Los {
            law: LosController::new(LosVariant::Aclos),
        },
    };

    let max_steps = (cfg.duration / dt).ceil() as usize;
    let mut est: Option<EstimatorState> = None;
    let mut log = Vec::with_capacity(max_steps.min(100_000) + 1);
    let mut controller_times = Vec::with_capacity(max_steps.min(100_000));
    let mut last = (ControlInput::default(), 0.0);

    let at_step = |k: usize, e: &dyn std::fmt::Display| HarnessError::Runtime {
        step: k,
        message: e.to_string(),
    };

    for k in 0..max_steps {
        let t = k as f64 * dt;
        state.t = t;

        let z = simulate_measurement(&state, &sigma, &mut rng);
        let tpos = state.target.position();
        let dpos = state.defender.position();
        let e = match est {
            None => EstimatorState::from_measurement(&z, tpos),
            Some(prev) => ekf_update(&ekf_predict(&prev, dt, v_a, &q), &z, tpos, dpos, &sigma)
                .map_err(|err| at_step(k, &err))?,
        };
        est = Some(e);

        let clock = Instant::now();
        let control = match &mut team {
            TeamController::Nmpc { cfg: ncfg, plan } => {
                let attacker = AttackerModel { mean: e.mean, v_a };
                *plan = solve(&attacker, &state.target, &state.defender, &plan.shifted(), ncfg);
                plan.first()
            }
            TeamController::Los { law } => {
                let seen = EngagementState {
                    attacker: AgentState::new(e.mean[0], e.mean[1], e.mean[2], v_a),
                    ..state
                };
                let accel = law
                    .accel(&seen, &cfg.guidance, dt)
                    .map_err(|err| at_step(k, &err))?;
                ControlInput {
                    alpha_dot_d: turn_rate(accel, state.defender.v),
                    ..cruise
                }
            }
        };
        controller_times.push(clock.elapsed().as_secs_f64());

        let a_a = switched_attacker_accel(t, &state, &cfg.guidance)
            .map_err(|err| at_step(k, &err))?;
        last = (control, a_a);
        log.push(row(&state, control, a_a, &e));

        let next = EngagementState {
            t: t + dt,
            target: step_target(&state.target, control.u_x, control.u_y, dt, v_t_max)
                .map_err(|err| at_step(k, &err))?,
            attacker: step_agent(&state.attacker, turn_rate(a_a, v_a), dt),
            defender: step_agent(&state.defender, control.alpha_dot_d, dt),
        };
        let event = detect_event(&state, &next, cfg.capture.target, cfg.capture.defender);
        state = next;
        if let Some((outcome, s)) = event {
            let est = est.expect("estimate exists after the first step");
            log.push(row(&state, last.0, last.1, &est));
            return Ok(finish(cfg, outcome, t + s * dt, dt, log, controller_times));
        }
    }

    state.t = max_steps as f64 * dt;
    if let Some(e) = est {
        log.push(row(&state, last.0, last.1, &e));
    }
    Ok(finish(cfg, Outcome::Timeout, cfg.duration, dt, log, controller_times))
}

fn row(state: &EngagementState, control: ControlInput, a_a: f64, est: &EstimatorState) -> LogRow {
    LogRow {
        t: state.t,
        target: state.target,
        attacker: state.attacker,
        defender: state.defender,
        control,
        attacker_accel: a_a,
        range_at: state.attacker.distance_to(&state.target),
        range_ad: state.attacker.distance_to(&state.defender),
        estimate: [est.mean[0], est.mean[1], est.mean[2], est.mean[3]],
        sigma: est.sigmas(),
    }
}

fn finish(
    cfg: &ScenarioConfig,
    outcome: Outcome,
    event_time: f64,
    dt: f64,
    log: Vec<LogRow>,
    controller_times: Vec<f64>,
) -> SimResult {
    let mut result = SimResult {
        name: cfg.name.clone(),
        controller: cfg.controller,
        outcome,
        event_time,
        dt,
        log,
        controller_times,
        metrics: None,
    };
    result.metrics = compute_metrics(&result).ok();
    result
}

/// Fraction of logged steps whose attacker `[x, y, heading]` errors lie
/// within three filter sigmas.
pub fn envelope_fractions(log: &[LogRow]) -> [f64; 3] {
    let mut inside = [0usize; 3];
    for r in log {
        let err = [
            r.attacker.x - r.estimate[0],
            r.attacker.y - r.estimate[1],
            crate::engagement::wrap_angle(r.attacker.alpha - r.estimate[2]),
        ];
        for i in 0..3 {
            if err[i].abs() <= 3.0 * r.sigma[i] {
                inside[i] += 1;
            }
        }
    }
    let n = log.len().max(1) as f64;
    inside.map(|c| c as f64 / n)
}

/// Independent per-run seed for run `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
