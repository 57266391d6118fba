//! Scenario files: TOML with one section per agent plus optional tuning
//! blocks. Omitted guidance, noise and controller blocks take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engagement::AgentState;
use crate::estimator::NoiseConfig;
use crate::guidance::GuidanceConfig;
use crate::nmpc::{CostWeights, NmpcConfig, TargetMode};
use crate::zones::SafeDistance;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub x: f64,
    pub y: f64,
    /// rad
    #[serde(default)]
    pub heading: f64,
    /// m/s
    #[serde(default)]
    pub speed: f64,
}

impl AgentSpec {
    pub fn state(&self) -> AgentState {
        AgentState::new(self.x, self.y, self.heading, self.speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
    /// Upper bound on the commanded speed; also the cruise speed in
    /// constant-speed mode.
    pub max_speed: f64,
    pub mode: TargetMode,
}

impl TargetSpec {
    /// Initial state: cruising in constant-speed mode, at rest otherwise.
    pub fn state(&self) -> AgentState {
        let v = match self.mode {
            TargetMode::ConstantSpeed => self.max_speed,
            TargetMode::VariableVelocity => 0.0,
        };
        AgentState::new(self.x, self.y, self.heading, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRadii {
    /// Attacker-target capture radius, m.
    pub target: f64,
    /// Attacker-defender capture radius, m.
    pub defender: f64,
}

impl Default for CaptureRadii {
    fn default() -> Self {
        Self {
            target: 1.0,
            defender: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Nmpc,
    Clos,
    Aclos,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Nmpc => "nmpc",
            ControllerKind::Clos => "clos",
            ControllerKind::Aclos => "aclos",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nmpc" => Ok(ControllerKind::Nmpc),
            "clos" => Ok(ControllerKind::Clos),
            "aclos" | "a-clos" => Ok(ControllerKind::Aclos),
            other => Err(format!("unknown controller '{other}'")),
        }
    }
}

/// Controller tuning that is not implied by the agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcSettings {
    pub horizon_steps: usize,
    pub dt: f64,
    pub alpha_dot_bounds: [f64; 2],
    pub max_iters: usize,
    pub conv_tol: f64,
    pub fd_step: f64,
    pub weights: CostWeights,
    pub miss_horizon: f64,
}

impl Default for NmpcSettings {
    fn default() -> Self {
        let d = NmpcConfig::default();
        Self {
            horizon_steps: d.horizon_steps,
            dt: d.dt,
            alpha_dot_bounds: d.alpha_dot_bounds,
            max_iters: d.max_iters,
            conv_tol: d.conv_tol,
            fd_step: d.fd_step,
            weights: d.weights,
            miss_horizon: d.miss_horizon,
        }
    }
}

fn default_duration() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub target: TargetSpec,
    pub attacker: AgentSpec,
    pub defender: AgentSpec,
    #[serde(default = "zero_safe_distance")]
    pub safe_distance: SafeDistance,
    #[serde(default)]
    pub capture: CaptureRadii,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub nmpc: NmpcSettings,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    /// Simulated-time cap, s.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

fn zero_safe_distance() -> SafeDistance {
    SafeDistance::Absolute(0.0)
}

fn default_controller() -> ControllerKind {
    ControllerKind::Nmpc
}

impl ScenarioConfig {
    pub fn initial_range(&self) -> f64 {
        (self.target.x - self.attacker.x).hypot(self.target.y - self.attacker.y)
    }

    /// Safe distance in metres.
    pub fn safe_distance_m(&self) -> f64 {
        self.safe_distance.resolve(self.initial_range())
    }

    pub fn nmpc_config(&self) -> NmpcConfig {
        let s = &self.nmpc;
        NmpcConfig {
            horizon_steps: s.horizon_steps,
            dt: s.dt,
            v_t_max: self.target.max_speed,
            alpha_dot_bounds: s.alpha_dot_bounds,
            safe_distance: self.safe_distance_m(),
            max_iters: s.max_iters,
            conv_tol: s.conv_tol,
            fd_step: s.fd_step,
            weights: s.weights,
            target_mode: self.target.mode,
            miss_horizon: s.miss_horizon,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Validation(m));
        for (name, v) in [
            ("target.x", self.target.x),
            ("target.y", self.target.y),
            ("target.heading", self.target.heading),
            ("attacker.x", self.attacker.x),
            ("attacker.y", self.attacker.y),
            ("attacker.heading", self.attacker.heading),
            ("defender.x", self.defender.x),
            ("defender.y", self.defender.y),
            ("defender.heading", self.defender.heading),
        ] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(self.target.max_speed > 0.0 && self.target.max_speed.is_finite()) {
            return fail("target.max_speed must be > 0".into());
        }
        if !(self.attacker.speed > 0.0 && self.attacker.speed.is_finite()) {
            return fail("attacker.speed must be > 0".into());
        }
        if !(self.defender.speed >= 0.0 && self.defender.speed.is_finite()) {
            return fail("defender.speed must be >= 0".into());
        }
        if !(self.capture.target > 0.0) {
            return fail(format!("capture.target must be > 0 (got {})", self.capture.target));
        }
        if !(self.capture.defender > 0.0) {
            return fail(format!("capture.defender must be > 0 (got {})", self.capture.defender));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail("duration must be > 0".into());
        }

        match self.safe_distance {
            SafeDistance::Absolute(e) if !(e >= 0.0) => {
                return fail("safe_distance.absolute must be >= 0".into())
            }
            SafeDistance::FractionOfRange(f) if !(f >= 0.0) => {
                return fail("safe_distance.fraction_of_range must be >= 0".into())
            }
            _ => {}
        }
        self.guidance.validate().map_err(HarnessError::Validation)?;
        self.noise.validate().map_err(HarnessError::Validation)?;
        self.nmpc_config().validate().map_err(HarnessError::Validation)?;
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, HarnessError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_scenario(&text).map_err(|e| match e {
        HarnessError::Parse(m) => HarnessError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if cfg.name.is_empty() {
        cfg.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(cfg)
}
