//! Zone predictions checked against closed-loop runs, cell by cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::zones::{apollonius_circle, classify, GridSpec, Label, ZoneMode, ZoneParams};

use super::config::{AgentSpec, ScenarioConfig, TargetSpec};
use super::sim::{derive_seed, run_simulation, Outcome};

/// Zone parameters implied by a scenario: canonical half-separation, speed
/// ratios, safe-distance rule and interception radius.
pub fn params_from_scenario(cfg: &ScenarioConfig) -> ZoneParams {
    let half = 0.5 * (cfg.attacker.x - cfg.defender.x).hypot(cfg.attacker.y - cfg.defender.y);
    ZoneParams {
        x_a: half,
        gamma_at: cfg.target.max_speed / cfg.attacker.speed,
        gamma_ad: cfg.defender.speed / cfg.attacker.speed,
        safe_distance: cfg.safe_distance,
        capture_radius: Some(cfg.capture.defender),
        ..ZoneParams::default()
    }
}

/// Heading from the target toward the point of its Apollonius circle that
/// reaches furthest into the defender's dominance region (canonical frame).
pub fn lure_heading(target: [f64; 2], params: &ZoneParams) -> f64 {
    let at = apollonius_circle(target, params.attacker(), params.gamma_at)
        .expect("gamma_at lies in (0, 1)");
    let d = params.defender();
    let (dx, dy) = (d[0] - at.center[0], d[1] - at.center[1]);
    let n = dx.hypot(dy);
    let dir = if n > 0.0 { [dx / n, dy / n] } else { [-1.0, 0.0] };
    let aim = [at.center[0] + at.radius * dir[0], at.center[1] + at.radius * dir[1]];
    (aim[1] - target[1]).atan2(aim[0] - target[0])
}

/// Scenario for one sweep cell: canonical attacker/defender placement, the
/// attacker pointed at the target, the defender at the attacker, and the
/// target on its lure heading.
pub fn cell_scenario(template: &ScenarioConfig, params: &ZoneParams, target: [f64; 2], index: u64) -> ScenarioConfig {
    let a = params.attacker();
    let d = params.defender();
    ScenarioConfig {
        name: format!("{}@({:.3},{:.3})", template.name, target[0], target[1]),
        target: TargetSpec {
            x: target[0],
            y: target[1],
            heading: lure_heading(target, params),
            ..template.target
        },
        attacker: AgentSpec {
            x: a[0],
            y: a[1],
            heading: (target[1] - a[1]).atan2(target[0] - a[0]),
            speed: template.attacker.speed,
        },
        defender: AgentSpec {
            x: d[0],
            y: d[1],
            heading: (a[1] - d[1]).atan2(a[0] - d[0]),
            speed: template.defender.speed,
        },
        seed: derive_seed(template.seed, index),
        ..template.clone()
    }
}

/// Outcome as a zone label; a target that survives the run counts as escaped.
pub fn outcome_label(outcome: Outcome) -> Label {
    match outcome {
        Outcome::TargetCaptured => Label::Capture,
        Outcome::AttackerIntercepted | Outcome::Timeout => Label::Escape,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub x: f64,
    pub y: f64,
    pub predicted: Option<Label>,
    pub simulated: Option<Outcome>,
    /// Predicted label is `Boundary` or differs from a neighbor's.
    pub in_band: bool,
    pub agree: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: ZoneMode,
    pub grid: GridSpec,
    pub cells: Vec<SweepCell>,
    pub off_band: usize,
    pub off_band_agree: usize,
    /// `off_band_agree / off_band`, `None` when no cell is off the band.
    pub agreement_rate: Option<f64>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,predicted,simulated,in_band,agree\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.x,
                c.y,
                c.predicted.map_or("error", |l| l.as_str()),
                c.simulated.map_or("error", |o| o.as_str()),
                c.in_band,
                c.agree.map_or("", |a| if a { "true" } else { "false" }),
            ));
        }
        s
    }
}

pub fn sweep_zone_validation(
    params: &ZoneParams,
    grid: &GridSpec,
    mode: ZoneMode,
    template: &ScenarioConfig,
) -> SweepReport {
    if grid.is_empty() {
        return SweepReport {
            mode,
            grid: *grid,
            cells: Vec::new(),
            off_band: 0,
            off_band_agree: 0,
            agreement_rate: None,
        };
    }
    let centers = grid.centers();
    let predicted: Vec<Result<Label, String>> = centers
        .par_iter()
        .map(|p| classify(mode, *p, params).map_err(|e| e.to_string()))
        .collect();
    let simulated: Vec<Result<Outcome, String>> = centers
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            run_simulation(&cell_scenario(template, params, *p, k as u64))
                .map(|r| r.outcome)
                .map_err(|e| e.to_string())
        })
        .collect();

    let label_at = |i: usize, j: usize| predicted[j * grid.nx + i].as_ref().ok().copied();
    let mut cells = Vec::with_capacity(centers.len());
    let (mut off_band, mut off_band_agree) = (0, 0);
    for (k, p) in centers.iter().enumerate() {
        let (i, j) = (k % grid.nx, k / grid.nx);
        let own = label_at(i, j);
        let mut in_band = own.map_or(true, |l| l == Label::Boundary);
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a < 0 || b < 0 || a as usize >= grid.nx || b as usize >= grid.ny {
                    continue;
                }
                if label_at(a as usize, b as usize) != own {
                    in_band = true;
                }
            }
        }
        let sim = simulated[k].as_ref().ok().copied();
        let agree = match (own, sim) {
            (Some(l), Some(o)) => Some(l == outcome_label(o)),
            _ => None,
        };
        if !in_band {
            if let Some(a) = agree {
                off_band += 1;
                off_band_agree += a as usize;
            }
        }
        let error = match (&predicted[k], &simulated[k]) {
            (Err(e), _) | (_, Err(e)) => Some(e.clone()),
            _ => None,
        };
        cells.push(SweepCell {
            x: p[0],
            y: p[1],
            predicted: own,
            simulated: sim,
            in_band,
            agree,
            error,
        });
    }
    SweepReport {
        mode,
        grid: *grid,
        cells,
        off_band,
        off_band_agree,
        agreement_rate: (off_band > 0).then(|| off_band_agree as f64 / off_band as f64),
    }
}
