//! Receding-horizon controller for the target-defender team.
//!
//! The decision variables are, per horizon step, the target velocity command
//! `(u_x, u_y)` and the defender turn rate. The attacker is propagated
//! open-loop from the filter mean with the filter's own motion model, so the
//! attacker trajectory is fixed for the duration of one solve.
//!
//! An optional terminal term charges the predicted miss distance: the closest
//! defender-attacker approach within `miss_horizon` seconds after the horizon
//! with both flying straight from their predicted end states. It adds no
//! decision variables; it rewards defender headings that lead the attacker
//! instead of chasing it.
//!
//! The solver is projected gradient descent with central finite-difference
//! gradients, a backtracking line search and warm starting.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::engagement::{step_agent, step_target_unchecked, AgentState};
use crate::estimator::propagate_mean;

/// Target motion model used by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Speed fixed at the bound, heading free.
    ConstantSpeed,
    /// Any velocity inside the speed disc, including rest.
    VariableVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Weight on `u_x^2 + u_y^2`.
    pub effort: f64,
    /// Weight on the defender-attacker range.
    pub defender_range: f64,
    /// Weight on `max(0, e - R)`.
    pub safe_distance: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            effort: 1.0,
            defender_range: 1.0,
            safe_distance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub horizon_steps: usize,
    /// Control sampling time, s.
    pub dt: f64,
    /// Target speed bound (and the fixed speed in constant-speed mode), m/s.
    pub v_t_max: f64,
    /// Defender turn-rate bounds `[lower, upper]`, rad/s.
    pub alpha_dot_bounds: [f64; 2],
    /// Safe distance `e`, m. Filled in by the scenario loader.
    pub safe_distance: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    /// Central-difference step for the gradient.
    pub fd_step: f64,
    pub weights: CostWeights,
    pub target_mode: TargetMode,
    /// Look-ahead of the terminal miss-distance term, s; 0 turns it off.
    pub miss_horizon: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 6,
            dt: 0.05,
            v_t_max: 2.0,
            alpha_dot_bounds: [-0.5, 0.5],
            safe_distance: 0.0,
            max_iters: 200,
            conv_tol: 1e-6,
            fd_step: 1e-4,
            weights: CostWeights::default(),
            target_mode: TargetMode::VariableVelocity,
            miss_horizon: 0.0,
        }
    }
}

impl NmpcConfig {
    /// Look-ahead window in seconds.
    pub fn horizon_time(&self) -> f64 {
        self.horizon_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.horizon_steps == 0 {
            return Err("nmpc.horizon_steps must be >= 1".into());
        }
        if !(self.dt > 0.0) {
            return Err("nmpc.dt must be > 0".into());
        }
        if !(self.v_t_max > 0.0) {
            return Err("nmpc.v_t_max must be > 0".into());
        }
        let [lo, hi] = self.alpha_dot_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi && (lo + hi).abs() < 1e-12) {
            return Err("nmpc.alpha_dot_bounds must be finite and symmetric".into());
        }
        if !(self.safe_distance >= 0.0) {
            return Err("nmpc.safe_distance must be >= 0".into());
        }
        if !(self.fd_step > 0.0 && self.conv_tol >= 0.0) {
            return Err("nmpc.fd_step must be > 0 and nmpc.conv_tol >= 0".into());
        }
        if !(self.miss_horizon >= 0.0 && self.miss_horizon.is_finite()) {
            return Err("nmpc.miss_horizon must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub u_x: f64,
    pub u_y: f64,
    pub alpha_dot_d: f64,
}

impl ControlInput {
    pub fn target_speed(&self) -> f64 {
        self.u_x.hypot(self.u_y)
    }

    pub fn is_feasible(&self, cfg: &NmpcConfig) -> bool {
        let [lo, hi] = cfg.alpha_dot_bounds;
        let speed_ok = match cfg.target_mode {
            TargetMode::VariableVelocity => self.target_speed() <= cfg.v_t_max,
            TargetMode::ConstantSpeed => (self.target_speed() - cfg.v_t_max).abs() <= 1e-9,
        };
        speed_ok && self.alpha_dot_d >= lo && self.alpha_dot_d <= hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub controls: Vec<ControlInput>,
    /// Cost of `controls` under the model at solve time.
    pub cost: f64,
}

impl ControlPlan {
    pub fn new(controls: Vec<ControlInput>) -> Self {
        Self {
            controls,
            cost: f64::NAN,
        }
    }

    /// Plan holding one input for the whole horizon.
    pub fn constant(input: ControlInput, steps: usize) -> Self {
        Self::new(vec![input; steps])
    }

    /// Initial guess: the target keeps its current velocity (clipped to the
    /// mode) and the defender flies straight.
    pub fn initial(target: &AgentState, cfg: &NmpcConfig) -> Self {
        let speed = match cfg.target_mode {
            TargetMode::ConstantSpeed => cfg.v_t_max,
            TargetMode::VariableVelocity => target.v.min(cfg.v_t_max),
        };
        Self::constant(
            ControlInput {
                u_x: speed * target.alpha.cos(),
                u_y: speed * target.alpha.sin(),
                alpha_dot_d: 0.0,
            },
            cfg.horizon_steps,
        )
    }

    pub fn first(&self) -> ControlInput {
        self.controls[0]
    }

    /// Warm start for the next sample: drop the applied input, repeat the
    /// last one.
    pub fn shifted(&self) -> Self {
        let mut controls: Vec<_> = self.controls.iter().skip(1).copied().collect();
        if let Some(last) = self.controls.last() {
            controls.push(*last);
        }
        Self::new(controls)
    }

    pub fn is_feasible(&self, cfg: &NmpcConfig) -> bool {
        self.controls.iter().all(|c| c.is_feasible(cfg))
    }
}

/// Attacker as the controller sees it: filter mean and known speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackerModel {
    pub mean: Vector4<f64>,
    pub v_a: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonPrediction {
    /// States after each horizon step (index `k` is time `t + (k+1) dt`).
    pub target: Vec<AgentState>,
    pub defender: Vec<AgentState>,
    pub attacker: Vec<[f64; 2]>,
    pub range_at: Vec<f64>,
    pub range_ad: Vec<f64>,
    /// Closest straight-flight approach after the horizon, m.
    pub miss_distance: f64,
}

/// Attacker positions over the horizon and the final filter mean.
fn attacker_track(attacker: &AttackerModel, cfg: &NmpcConfig) -> (Vec<[f64; 2]>, Vector4<f64>) {
    let mut mean = attacker.mean;
    let track = (0..cfg.horizon_steps)
        .map(|_| {
            mean = propagate_mean(&mean, cfg.dt, attacker.v_a);
            [mean[0], mean[1]]
        })
        .collect();
    (track, mean)
}

/// Closest approach within `window` seconds of a straight-flying defender
/// and a straight-flying attacker at `mean` with speed `v_a`.
pub fn miss_distance(defender: &AgentState, mean: &Vector4<f64>, v_a: f64, window: f64) -> f64 {
    let dp = [mean[0] - defender.x, mean[1] - defender.y];
    let va = [v_a * mean[2].cos(), v_a * mean[2].sin()];
    let vd = defender.velocity();
    let dv = [va[0] - vd[0], va[1] - vd[1]];
    let dv2 = dv[0] * dv[0] + dv[1] * dv[1];
    let tau = if dv2 > 0.0 {
        (-(dp[0] * dv[0] + dp[1] * dv[1]) / dv2).clamp(0.0, window)
    } else {
        0.0
    };
    (dp[0] + dv[0] * tau).hypot(dp[1] + dv[1] * tau)
}

fn terminal_cost(defender: &AgentState, end: &Vector4<f64>, v_a: f64, cfg: &NmpcConfig) -> f64 {
    if cfg.miss_horizon > 0.0 {
        cfg.weights.defender_range * cfg.miss_horizon * miss_distance(defender, end, v_a, cfg.miss_horizon)
    } else {
        0.0
    }
}

pub fn predict_horizon(
    attacker: &AttackerModel,
    target: &AgentState,
    defender: &AgentState,
    plan: &ControlPlan,
    cfg: &NmpcConfig,
) -> HorizonPrediction {
    debug_assert_eq!(plan.controls.len(), cfg.horizon_steps);
    let (track, end) = attacker_track(attacker, cfg);
    let mut out = HorizonPrediction::default();
    let (mut t, mut d) = (*target, *defender);
    for (c, a) in plan.controls.iter().zip(&track) {
        t = step_target_unchecked(&t, c.u_x, c.u_y, cfg.dt);
        d = step_agent(&d, c.alpha_dot_d, cfg.dt);
        out.range_at.push((t.x - a[0]).hypot(t.y - a[1]));
        out.range_ad.push((d.x - a[0]).hypot(d.y - a[1]));
        out.target.push(t);
        out.defender.push(d);
        out.attacker.push(*a);
    }
    out.miss_distance = miss_distance(&d, &end, attacker.v_a, cfg.miss_horizon);
    out
}

/// Rectangle-rule quadrature of the running cost over the horizon, sampled
/// at the end of each step, plus the terminal miss-distance term.
pub fn evaluate_cost(prediction: &HorizonPrediction, plan: &ControlPlan, cfg: &NmpcConfig) -> f64 {
    let w = &cfg.weights;
    let terminal = w.defender_range * cfg.miss_horizon * prediction.miss_distance;
    let running: f64 = plan
        .controls
        .iter()
        .zip(prediction.range_at.iter().zip(&prediction.range_ad))
        .map(|(c, (&big_r, &small_r))| {
            let effort = c.u_x * c.u_x + c.u_y * c.u_y;
            let hinge = (cfg.safe_distance - big_r).max(0.0);
            (w.effort * effort + w.defender_range * small_r + w.safe_distance * hinge) * cfg.dt
        })
        .sum();
    running + terminal
}

/// Project each target command onto the admissible set of `mode`. In
/// constant-speed mode a zero command takes the previous command's heading
/// (the target's own heading for the first element).
pub fn target_mode_constraint(
    mode: TargetMode,
    plan: &ControlPlan,
    v_t: f64,
    current_heading: f64,
) -> ControlPlan {
    let mut heading = current_heading;
    let controls = plan
        .controls
        .iter()
        .map(|c| {
            let speed = c.target_speed();
            let (u_x, u_y) = match mode {
                TargetMode::VariableVelocity if speed <= v_t => (c.u_x, c.u_y),
                TargetMode::VariableVelocity => (c.u_x * v_t / speed, c.u_y * v_t / speed),
                TargetMode::ConstantSpeed if (speed - v_t).abs() <= 1e-12 => (c.u_x, c.u_y),
                TargetMode::ConstantSpeed if speed == 0.0 => {
                    (v_t * heading.cos(), v_t * heading.sin())
                }
                TargetMode::ConstantSpeed => (c.u_x * v_t / speed, c.u_y * v_t / speed),
            };
            if u_x != 0.0 || u_y != 0.0 {
                heading = u_y.atan2(u_x);
            }
            ControlInput {
                u_x,
                u_y,
                alpha_dot_d: c.alpha_dot_d,
            }
        })
        .collect();
    ControlPlan {
        controls,
        cost: plan.cost,
    }
}

/// Full projection onto the feasible set (target mode and turn-rate box).
pub fn project(plan: &ControlPlan, cfg: &NmpcConfig, target_heading: f64) -> ControlPlan {
    let [lo, hi] = cfg.alpha_dot_bounds;
    let mut p = target_mode_constraint(cfg.target_mode, plan, cfg.v_t_max, target_heading);
    for c in &mut p.controls {
        c.alpha_dot_d = c.alpha_dot_d.clamp(lo, hi);
    }
    p
}

/// Cost evaluator for one solve: the attacker track is computed once.
pub struct HorizonProblem<'a> {
    track: Vec<[f64; 2]>,
    end: Vector4<f64>,
    v_a: f64,
    target: AgentState,
    defender: AgentState,
    cfg: &'a NmpcConfig,
}

impl<'a> HorizonProblem<'a> {
    pub fn new(
        attacker: &AttackerModel,
        target: &AgentState,
        defender: &AgentState,
        cfg: &'a NmpcConfig,
    ) -> Self {
        let (track, end) = attacker_track(attacker, cfg);
        Self {
            track,
            end,
            v_a: attacker.v_a,
            target: *target,
            defender: *defender,
            cfg,
        }
    }

    /// Cost of a flattened decision vector `[u_x, u_y, alpha_dot_d] * H`.
    pub fn cost(&self, z: &[f64]) -> f64 {
        let cfg = self.cfg;
        let w = &cfg.weights;
        let (mut t, mut d) = (self.target, self.defender);
        let mut j = 0.0;
        for (k, a) in self.track.iter().enumerate() {
            let (ux, uy, wd) = (z[3 * k], z[3 * k + 1], z[3 * k + 2]);
            t = step_target_unchecked(&t, ux, uy, cfg.dt);
            d = step_agent(&d, wd, cfg.dt);
            let big_r = (t.x - a[0]).hypot(t.y - a[1]);
            let small_r = (d.x - a[0]).hypot(d.y - a[1]);
            let hinge = (cfg.safe_distance - big_r).max(0.0);
            j += (w.effort * (ux * ux + uy * uy) + w.defender_range * small_r + w.safe_distance * hinge)
                * cfg.dt;
        }
        j + terminal_cost(&d, &self.end, self.v_a, cfg)
    }

    /// Central finite-difference gradient with step `h`.
    pub fn gradient(&self, z: &[f64], h: f64) -> Vec<f64> {
        let mut probe = z.to_vec();
        (0..z.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + h;
                let up = self.cost(&probe);
                probe[i] = orig - h;
                let down = self.cost(&probe);
                probe[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

fn flatten(plan: &ControlPlan) -> Vec<f64> {
    plan.controls
        .iter()
        .flat_map(|c| [c.u_x, c.u_y, c.alpha_dot_d])
        .collect()
}

fn unflatten(z: &[f64]) -> ControlPlan {
    ControlPlan::new(
        z.chunks_exact(3)
            .map(|c| ControlInput {
                u_x: c[0],
                u_y: c[1],
                alpha_dot_d: c[2],
            })
            .collect(),
    )
}

/// Solver statistics for one call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub cost_evaluations: usize,
}

pub fn solve(
    attacker: &AttackerModel,
    target: &AgentState,
    defender: &AgentState,
    warm_start: &ControlPlan,
    cfg: &NmpcConfig,
) -> ControlPlan {
    solve_with_stats(attacker, target, defender, warm_start, cfg).0
}

pub fn solve_with_stats(
    attacker: &AttackerModel,
    target: &AgentState,
    defender: &AgentState,
    warm_start: &ControlPlan,
    cfg: &NmpcConfig,
) -> (ControlPlan, SolveStats) {
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 30;

    let problem = HorizonProblem::new(attacker, target, defender, cfg);
    let heading = target.alpha;
    let proj = |z: &[f64]| flatten(&project(&unflatten(z), cfg, heading));

    let mut stats = SolveStats::default();
    let mut z = proj(&flatten(warm_start));
    let mut f = problem.cost(&z);
    stats.cost_evaluations += 1;

    // Step lengths are in native units along the max-norm-normalized
    // gradient; one unit spans the turn-rate box for the default bounds.
    let max_step = (cfg.alpha_dot_bounds[1] - cfg.alpha_dot_bounds[0]).max(2.0 * cfg.v_t_max);
    let mut step = max_step;

    for _ in 0..cfg.max_iters {
        stats.iterations += 1;
        let g = problem.gradient(&z, cfg.fd_step);
        stats.cost_evaluations += 2 * z.len();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 || !gmax.is_finite() {
            break;
        }

        let mut accepted = None;
        let mut s = step;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = proj(
                &z.iter()
                    .zip(&g)
                    .map(|(zi, gi)| zi - s * gi / gmax)
                    .collect::<Vec<_>>(),
            );
            let fc = problem.cost(&cand);
            stats.cost_evaluations += 1;
            let predicted: f64 = g.iter().zip(z.iter().zip(&cand)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fc < f && f - fc >= ARMIJO * predicted {
                accepted = Some((cand, fc, s));
                break;
            }
            s *= 0.5;
        }

        let Some((cand, fc, s)) = accepted else { break };
        // Improvements below the tolerance count as ties; keep the earlier plan.
        if f - fc < cfg.conv_tol {
            break;
        }
        z = cand;
        f = fc;
        step = (2.0 * s).min(max_step);
    }

    let mut plan = unflatten(&z);
    plan.cost = f;
    (plan, stats)
}
