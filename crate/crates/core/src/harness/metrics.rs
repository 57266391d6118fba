use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, ScenarioConfig};
use super::sim::{run_simulation, Outcome, SimResult};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub outcome: Outcome,
    /// Time of the first threshold crossing, s.
    pub interception_time: f64,
    /// Mean defender lateral acceleration magnitude `|v_D * alpha_dot_D|`, m/s^2.
    pub avg_control_effort_defender: f64,
    /// Defender effort plus mean target acceleration `|du| / dt`, m/s^2.
    pub avg_control_effort_combined: f64,
    /// Mean wall-clock time per controller call, s.
    pub avg_solver_time_per_iteration: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-step control efforts over the applied steps (every row but the
/// last). The first target acceleration is measured against the initial
/// velocity.
fn efforts(result: &SimResult) -> (Vec<f64>, Vec<f64>) {
    let applied = &result.log[..result.log.len().saturating_sub(1)];
    let mut defender = Vec::with_capacity(applied.len());
    let mut target = Vec::with_capacity(applied.len());
    let mut prev = result.log.first().map(|r| r.target.velocity()).unwrap_or([0.0, 0.0]);
    for r in applied {
        defender.push((r.defender.v * r.control.alpha_dot_d).abs());
        let u = [r.control.u_x, r.control.u_y];
        target.push((u[0] - prev[0]).hypot(u[1] - prev[1]) / result.dt);
        prev = u;
    }
    (defender, target)
}

pub fn compute_metrics(result: &SimResult) -> Result<MetricsRecord, HarnessError> {
    if result.outcome == Outcome::Timeout {
        return Err(HarnessError::NoEvent);
    }
    let (defender, target) = efforts(result);
    let d = mean(defender.iter().copied());
    let t = mean(target.iter().copied());
    Ok(MetricsRecord {
        outcome: result.outcome,
        interception_time: result.event_time,
        avg_control_effort_defender: d,
        avg_control_effort_combined: d + t,
        avg_solver_time_per_iteration: mean(result.controller_times.iter().copied()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: ControllerKind,
    pub outcome: Option<Outcome>,
    pub metrics: Option<MetricsRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, controller: ControllerKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.controller == controller)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<8} {:<22} {:>10} {:>14} {:>14} {:>12}\n",
            "ctrl", "outcome", "t_event", "effort_D", "effort_all", "solve_s"
        );
        for r in &self.rows {
            match (&r.metrics, &r.error) {
                (Some(m), _) => s.push_str(&format!(
                    "{:<8} {:<22} {:>10.3} {:>14.3} {:>14.3} {:>12.2e}\n",
                    r.controller.as_str(),
                    m.outcome.as_str(),
                    m.interception_time,
                    m.avg_control_effort_defender,
                    m.avg_control_effort_combined,
                    m.avg_solver_time_per_iteration
                )),
                (None, Some(e)) => s.push_str(&format!("{:<8} error: {e}\n", r.controller.as_str())),
                (None, None) => s.push_str(&format!(
                    "{:<8} {:<22}\n",
                    r.controller.as_str(),
                    r.outcome.map_or("-", |o| o.as_str())
                )),
            }
        }
        s
    }
}

/// One run per controller from identical initial conditions and seed.
pub fn compare(cfg: &ScenarioConfig, controllers: &[ControllerKind]) -> Result<ComparisonTable, HarnessError> {
    if controllers.len() < 2 {
        return Err(HarnessError::TooFewControllers(controllers.len()));
    }
    cfg.validate()?;
    let rows = controllers
        .par_iter()
        .map(|&controller| {
            let run = ScenarioConfig {
                controller,
                ..cfg.clone()
            };
            match run_simulation(&run) {
                Ok(result) => ComparisonRow {
                    controller,
                    outcome: Some(result.outcome),
                    metrics: result.metrics,
                    error: None,
                },
                Err(e) => ComparisonRow {
                    controller,
                    outcome: None,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ComparisonTable {
        scenario: cfg.name.clone(),
        rows,
    })
}
