//! Planar point-mass kinematics for the three agents and the relative
//! engagement geometry between them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the target speed bound before a command is rejected.
pub const SPEED_BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum KinematicsError {
    #[error("target command speed {speed} exceeds bound {bound}")]
    CommandOutOfBounds { speed: f64, bound: f64 },
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Heading, rad, kept in `(-pi, pi]`.
    pub alpha: f64,
    /// Speed, m/s.
    pub v: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, alpha: f64, v: f64) -> Self {
        Self {
            x,
            y,
            alpha: wrap_angle(alpha),
            v,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.v * self.alpha.cos(), self.v * self.alpha.sin()]
    }

    pub fn distance_to(&self, other: &AgentState) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementState {
    pub t: f64,
    pub target: AgentState,
    pub attacker: AgentState,
    pub defender: AgentState,
}

/// Ranges, line-of-sight angles and relative velocity components as seen
/// from the attacker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeGeometry {
    /// Target-attacker range.
    pub range_at: f64,
    /// LOS angle from attacker to target.
    pub theta: f64,
    /// Defender-attacker range.
    pub range_ad: f64,
    /// LOS angle from attacker to defender.
    pub xi: f64,
    /// Rate of change of `range_at`.
    pub v_range_at: f64,
    /// `range_at * theta_dot`.
    pub v_theta: f64,
    /// Rate of change of `range_ad`.
    pub v_range_ad: f64,
    /// `range_ad * xi_dot`.
    pub v_xi: f64,
}

fn los_angle(from: &AgentState, to: &AgentState) -> f64 {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        dy.atan2(dx)
    }
}

pub fn relative_geometry(state: &EngagementState) -> RelativeGeometry {
    let (t, a, d) = (&state.target, &state.attacker, &state.defender);
    let theta = los_angle(a, t);
    let xi = los_angle(a, d);
    RelativeGeometry {
        range_at: a.distance_to(t),
        theta,
        range_ad: a.distance_to(d),
        xi,
        v_range_at: t.v * (t.alpha - theta).cos() - a.v * (a.alpha - theta).cos(),
        v_theta: t.v * (t.alpha - theta).sin() - a.v * (a.alpha - theta).sin(),
        v_range_ad: d.v * (d.alpha - xi).cos() - a.v * (a.alpha - xi).cos(),
        v_xi: d.v * (d.alpha - xi).sin() - a.v * (a.alpha - xi).sin(),
    }
}

/// Advance a constant-speed agent under a constant turn rate with one RK4
/// step of length `dt`.
pub fn step_agent(agent: &AgentState, turn_rate: f64, dt: f64) -> AgentState {
    debug_assert!(dt > 0.0);
    let v = agent.v;
    let deriv = |alpha: f64| (v * alpha.cos(), v * alpha.sin());

    let a0 = agent.alpha;
    let k1 = deriv(a0);
    let k2 = deriv(a0 + 0.5 * dt * turn_rate);
    let k3 = k2;
    let k4 = deriv(a0 + dt * turn_rate);

    AgentState {
        x: agent.x + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        y: agent.y + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        alpha: wrap_angle(a0 + dt * turn_rate),
        v,
    }
}

/// Advance the target under a velocity command `(u_x, u_y)`.
///
/// The heading follows the command direction and is kept unchanged when the
/// command is zero.
pub fn step_target(
    target: &AgentState,
    u_x: f64,
    u_y: f64,
    dt: f64,
    max_speed: f64,
) -> Result<AgentState, KinematicsError> {
    debug_assert!(dt > 0.0);
    let speed = u_x.hypot(u_y);
    if speed > max_speed + SPEED_BOUND_SLACK {
        return Err(KinematicsError::CommandOutOfBounds {
            speed,
            bound: max_speed,
        });
    }
    Ok(step_target_unchecked(target, u_x, u_y, dt))
}

pub(crate) fn step_target_unchecked(target: &AgentState, u_x: f64, u_y: f64, dt: f64) -> AgentState {
    let speed = u_x.hypot(u_y);
    let alpha = if speed > 0.0 {
        u_y.atan2(u_x)
    } else {
        target.alpha
    };
    AgentState {
        x: target.x + u_x * dt,
        y: target.y + u_y * dt,
        alpha,
        v: speed,
    }
}
