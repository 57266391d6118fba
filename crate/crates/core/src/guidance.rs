//! Attacker guidance (switched pure pursuit / proportional navigation) and
//! the line-of-sight baselines used for the defender in comparisons.
//!
//! All laws return a lateral acceleration. Turn rates follow from
//! `alpha_dot = a / v`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engagement::{relative_geometry, wrap_angle, EngagementState};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GuidanceError {
    #[error("LOS rate undefined at range {range} (below {min_range})")]
    LosRateUndefined { range: f64, min_range: f64 },
    #[error("target and attacker coincide; LOS line undefined")]
    DegenerateLos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Pure-pursuit gain, 1/s.
    pub kappa: f64,
    /// PN navigation constant.
    pub nav_constant: f64,
    /// Seconds spent in each law before switching.
    pub switch_period: f64,
    /// CLOS proportional gain, 1/s^2.
    pub clos_kp: f64,
    /// CLOS derivative gain, 1/s.
    pub clos_kd: f64,
    /// CLOS / A-CLOS commands saturate at `v_D * clos_turn_limit`.
    pub clos_turn_limit: f64,
    /// Range below which the LOS rate is treated as undefined.
    pub min_range: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            nav_constant: 3.0,
            switch_period: 1.0,
            clos_kp: 10.0,
            clos_kd: 5.0,
            clos_turn_limit: 0.5,
            min_range: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.kappa > 0.0) {
            return Err("guidance.kappa must be > 0".into());
        }
        if !(self.nav_constant > 0.0) {
            return Err("guidance.nav_constant must be > 0".into());
        }
        if !(self.switch_period > 0.0) {
            return Err("guidance.switch_period must be > 0".into());
        }
        if !(self.clos_turn_limit > 0.0) {
            return Err("guidance.clos_turn_limit must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackerLaw {
    PurePursuit,
    ProportionalNavigation,
}

/// Pure pursuit: `-kappa * wrap(alpha_A - theta)`.
pub fn pp_accel(alpha_a: f64, theta: f64, kappa: f64) -> f64 {
    -kappa * wrap_angle(alpha_a - theta)
}

/// Proportional navigation: `N * v_A * theta_dot`.
pub fn pn_accel(v_a: f64, theta_dot: f64, nav_constant: f64) -> f64 {
    nav_constant * v_a * theta_dot
}

/// Attacker-target LOS rate, `v_theta / R`.
pub fn los_rate(state: &EngagementState, min_range: f64) -> Result<f64, GuidanceError> {
    let g = relative_geometry(state);
    if g.range_at < min_range {
        return Err(GuidanceError::LosRateUndefined {
            range: g.range_at,
            min_range,
        });
    }
    Ok(g.v_theta / g.range_at)
}

/// Law in force at time `t`: intervals `[k P, (k+1) P)` use pure pursuit for
/// even `k`.
pub fn active_law(t: f64, switch_period: f64) -> AttackerLaw {
    let k = (t / switch_period).floor() as i64;
    if k.rem_euclid(2) == 0 {
        AttackerLaw::PurePursuit
    } else {
        AttackerLaw::ProportionalNavigation
    }
}

pub fn switched_attacker_accel(
    t: f64,
    state: &EngagementState,
    cfg: &GuidanceConfig,
) -> Result<f64, GuidanceError> {
    debug_assert!(t >= 0.0);
    match active_law(t, cfg.switch_period) {
        AttackerLaw::PurePursuit => {
            let theta = relative_geometry(state).theta;
            Ok(pp_accel(state.attacker.alpha, theta, cfg.kappa))
        }
        AttackerLaw::ProportionalNavigation => {
            let rate = los_rate(state, cfg.min_range)?;
            Ok(pn_accel(state.attacker.v, rate, cfg.nav_constant))
        }
    }
}

/// Turn rate produced by a lateral acceleration at speed `v`.
pub fn turn_rate(accel: f64, v: f64) -> f64 {
    if v > 0.0 {
        accel / v
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LosVariant {
    Clos,
    Aclos,
}

/// Three-point command-to-line-of-sight defender law.
///
/// Keeps the rate memory for the finite-difference terms, so one instance
/// belongs to one run.
#[derive(Debug, Clone)]
pub struct LosController {
    variant: LosVariant,
    prev_offset: Option<f64>,
    prev_line_rate: Option<f64>,
}

/// Signed perpendicular distance of the defender from the target->attacker
/// line (positive on the left).
pub fn line_offset(state: &EngagementState) -> Result<f64, GuidanceError> {
    let (t, a, d) = (&state.target, &state.attacker, &state.defender);
    let (ux, uy) = (a.x - t.x, a.y - t.y);
    let len = ux.hypot(uy);
    if len < 1e-9 {
        return Err(GuidanceError::DegenerateLos);
    }
    Ok((ux * (d.y - t.y) - uy * (d.x - t.x)) / len)
}

impl LosController {
    pub fn new(variant: LosVariant) -> Self {
        Self {
            variant,
            prev_offset: None,
            prev_line_rate: None,
        }
    }

    pub fn variant(&self) -> LosVariant {
        self.variant
    }

    /// Defender lateral acceleration for this step. `dt` is the spacing
    /// between successive calls.
    pub fn accel(
        &mut self,
        state: &EngagementState,
        cfg: &GuidanceConfig,
        dt: f64,
    ) -> Result<f64, GuidanceError> {
        let offset = line_offset(state)?;
        let offset_rate = self.prev_offset.map_or(0.0, |p| (offset - p) / dt);
        self.prev_offset = Some(offset);

        let mut cmd = -(cfg.clos_kp * offset + cfg.clos_kd * offset_rate);

        if self.variant == LosVariant::Aclos {
            let (t, a, d) = (&state.target, &state.attacker, &state.defender);
            let (ux, uy) = (a.x - t.x, a.y - t.y);
            let len = ux.hypot(uy);
            let (ux, uy) = (ux / len, uy / len);
            let [vtx, vty] = t.velocity();
            let [vax, vay] = a.velocity();
            let [vdx, vdy] = d.velocity();
            let line_rate = (ux * (vay - vty) - uy * (vax - vtx)) / len;
            let line_accel = self.prev_line_rate.map_or(0.0, |p| (line_rate - p) / dt);
            self.prev_line_rate = Some(line_rate);
            let along = ux * (d.x - t.x) + uy * (d.y - t.y);
            let along_rate = ux * (vdx - vtx) + uy * (vdy - vty);
            cmd += along * line_accel + 2.0 * along_rate * line_rate;
        }

        let limit = state.defender.v * cfg.clos_turn_limit;
        Ok(cmd.clamp(-limit, limit))
    }
}
