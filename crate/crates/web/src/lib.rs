//! Browser bindings: zone maps, the analytic boundary, and closed-loop runs
//! from a clicked target start. Everything works in the canonical frame of
//! the bundled scenario templates (attacker at `+x_a`, defender at `-x_a`).

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tad::harness::sweep::{cell_scenario, params_from_scenario};
use tad::harness::{parse_scenario, run_simulation, ScenarioConfig};
use tad::zones::{
    boundary_equal_speed, build_zone_map, quartic_boundary, GridSpec, Label, ZoneMode, ZoneParams,
};

const CONSTANT_SPEED: &str = include_str!("../../core/scenarios/cs_escape.toml");
const VARIABLE_VELOCITY: &str = include_str!("../../core/scenarios/vv_capture.toml");

/// Scenario template for a zone mode, with speeds set from the two ratios.
pub fn template(mode: ZoneMode, gamma_at: f64, gamma_ad: f64) -> Result<ScenarioConfig, String> {
    let text = match mode {
        ZoneMode::VariableVelocity => VARIABLE_VELOCITY,
        _ => CONSTANT_SPEED,
    };
    let mut cfg = parse_scenario(text).map_err(|e| e.to_string())?;
    cfg.target.max_speed = gamma_at * cfg.attacker.speed;
    cfg.defender.speed = gamma_ad * cfg.attacker.speed;
    cfg.validate().map_err(|e| e.to_string())?;
    params_from_scenario(&cfg).validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn zone_params(cfg: &ScenarioConfig, sigma_frac: f64) -> ZoneParams {
    let p = params_from_scenario(cfg);
    ZoneParams {
        sigma_pos: sigma_frac * p.x_a,
        ..p
    }
}

/// Plot extent shared by the map and the page: `[x_min, x_max, y_min, y_max]`.
pub fn extent(x_a: f64) -> [f64; 4] {
    [-2.0 * x_a, 4.0 * x_a, -3.0 * x_a, 3.0 * x_a]
}

#[derive(Debug, Serialize)]
pub struct MapView {
    pub x_a: f64,
    pub extent: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// Row-major, x fastest: 0 escape, 1 capture, 2 boundary.
    pub labels: Vec<u8>,
    pub boundary: Vec<Vec<[f64; 2]>>,
}

pub fn zone_map_view(
    mode: ZoneMode,
    gamma_at: f64,
    gamma_ad: f64,
    sigma_frac: f64,
    grid: usize,
) -> Result<MapView, String> {
    let cfg = template(mode, gamma_at, gamma_ad)?;
    let params = zone_params(&cfg, sigma_frac);
    let [x_min, x_max, y_min, y_max] = extent(params.x_a);
    let spec = GridSpec {
        x_min,
        x_max,
        y_min,
        y_max,
        nx: grid,
        ny: grid,
    };
    let map = build_zone_map(&params, &spec, mode).map_err(|e| e.to_string())?;
    Ok(MapView {
        x_a: params.x_a,
        extent: [x_min, x_max, y_min, y_max],
        nx: grid,
        ny: grid,
        labels: map
            .labels
            .iter()
            .map(|l| match l {
                Label::Escape => 0,
                Label::Capture => 1,
                Label::Boundary => 2,
            })
            .collect(),
        boundary: map.boundary,
    })
}

/// Upper half of the analytic constant-speed boundary, sampled at `n`
/// abscissae; gaps where no root exists split the curve into pieces.
pub fn boundary_points(gamma_at: f64, gamma_ad: f64, n: usize) -> Result<Vec<Vec<[f64; 2]>>, String> {
    let cfg = template(ZoneMode::ConstantSpeed, gamma_at, gamma_ad)?;
    let params = zone_params(&cfg, 0.0);
    let [x_min, x_max, _, _] = extent(params.x_a);
    let mut pieces: Vec<Vec<[f64; 2]>> = vec![Vec::new()];
    for k in 0..n.max(2) {
        let x = x_min + (x_max - x_min) * k as f64 / (n.max(2) - 1) as f64;
        let y = if params.equal_speeds() {
            boundary_equal_speed(&params, x)
        } else {
            quartic_boundary(&params, x).first().map(|y2| y2.sqrt())
        };
        match y {
            Some(y) => pieces.last_mut().expect("never empty").push([x, y]),
            None if !pieces.last().expect("never empty").is_empty() => pieces.push(Vec::new()),
            None => {}
        }
    }
    pieces.retain(|p| p.len() > 1);
    Ok(pieces)
}

#[derive(Debug, Serialize)]
pub struct RunView {
    pub outcome: String,
    pub event_time: f64,
    pub target: Vec<[f64; 2]>,
    pub attacker: Vec<[f64; 2]>,
    pub defender: Vec<[f64; 2]>,
    pub estimate: Vec<[f64; 2]>,
    /// Minimum target-attacker and defender-attacker ranges, m.
    pub min_range_at: f64,
    pub min_range_ad: f64,
}

pub fn run_from(
    mode: ZoneMode,
    gamma_at: f64,
    gamma_ad: f64,
    target: [f64; 2],
    seed: u64,
) -> Result<RunView, String> {
    let cfg = template(mode, gamma_at, gamma_ad)?;
    let params = zone_params(&cfg, 0.0);
    let run = cell_scenario(&cfg, &params, target, seed);
    let r = run_simulation(&run).map_err(|e| e.to_string())?;
    let fold_min = |f: fn(&tad::harness::LogRow) -> f64| r.log.iter().map(f).fold(f64::INFINITY, f64::min);
    Ok(RunView {
        outcome: r.outcome.as_str().to_string(),
        event_time: r.event_time,
        target: r.log.iter().map(|row| row.target.position()).collect(),
        attacker: r.log.iter().map(|row| row.attacker.position()).collect(),
        defender: r.log.iter().map(|row| row.defender.position()).collect(),
        estimate: r.log.iter().map(|row| [row.estimate[0], row.estimate[1]]).collect(),
        min_range_at: fold_min(|row| row.range_at),
        min_range_ad: fold_min(|row| row.range_ad),
    })
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<JsValue, JsError> {
    let v = value.map_err(|e| JsError::new(&e))?;
    serde_wasm_bindgen::to_value(&v).map_err(|e| JsError::new(&e.to_string()))
}

fn parse_mode(mode: &str) -> Result<ZoneMode, JsError> {
    mode.parse().map_err(|e: String| JsError::new(&e))
}

/// Zone map for the page. `mode` is `cs`, `stationary`, `vv` or `stochastic`.
#[wasm_bindgen(js_name = zoneMap)]
pub fn zone_map(mode: &str, gamma_at: f64, gamma_ad: f64, sigma_frac: f64, grid: usize) -> Result<JsValue, JsError> {
    to_js(zone_map_view(parse_mode(mode)?, gamma_at, gamma_ad, sigma_frac, grid))
}

#[wasm_bindgen(js_name = boundaryCurve)]
pub fn boundary_curve(gamma_at: f64, gamma_ad: f64, samples: usize) -> Result<JsValue, JsError> {
    to_js(boundary_points(gamma_at, gamma_ad, samples))
}

/// Closed-loop engagement with the target starting at `(x, y)`.
#[wasm_bindgen(js_name = simulate)]
pub fn simulate(mode: &str, gamma_at: f64, gamma_ad: f64, x: f64, y: f64, seed: u32) -> Result<JsValue, JsError> {
    to_js(run_from(parse_mode(mode)?, gamma_at, gamma_ad, [x, y], seed as u64))
}
