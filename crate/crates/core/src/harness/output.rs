use std::fmt::Write as _;
use std::path::Path;

use super::sim::{LogRow, SimResult};
use super::HarnessError;

pub const TRAJECTORY_COLUMNS: [&str; 21] = [
    "t",
    "x_T",
    "y_T",
    "x_A",
    "y_A",
    "x_D",
    "y_D",
    "u_x",
    "u_y",
    "alpha_dot_D",
    "a_A",
    "R",
    "r",
    "est_x_A",
    "est_y_A",
    "est_alpha_A",
    "est_a_A",
    "sigma_x",
    "sigma_y",
    "sigma_alpha",
    "sigma_a",
];

fn row_values(r: &LogRow) -> [f64; 21] {
    [
        r.t,
        r.target.x,
        r.target.y,
        r.attacker.x,
        r.attacker.y,
        r.defender.x,
        r.defender.y,
        r.control.u_x,
        r.control.u_y,
        r.control.alpha_dot_d,
        r.attacker_accel,
        r.range_at,
        r.range_ad,
        r.estimate[0],
        r.estimate[1],
        r.estimate[2],
        r.estimate[3],
        r.sigma[0],
        r.sigma[1],
        r.sigma[2],
        r.sigma[3],
    ]
}

/// Trajectory log as CSV. Values use the shortest representation that
/// parses back to the same double.
pub fn trajectory_csv(log: &[LogRow]) -> String {
    let mut s = TRAJECTORY_COLUMNS.join(",");
    s.push('\n');
    for r in log {
        let vals = row_values(r);
        for (i, v) in vals.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v:?}").expect("writing to a String");
        }
        s.push('\n');
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

#[derive(serde::Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    controller: &'a str,
    outcome: &'a str,
    event_time: f64,
    steps: usize,
    metrics: Option<&'a super::metrics::MetricsRecord>,
}

pub fn run_summary_json(result: &SimResult) -> String {
    to_json(&RunSummary {
        scenario: &result.name,
        controller: result.controller.as_str(),
        outcome: result.outcome.as_str(),
        event_time: result.event_time,
        steps: result.log.len(),
        metrics: result.metrics.as_ref(),
    })
}

/// Write `trajectory.csv` and `metrics.json` into `dir`.
pub fn write_run(dir: &Path, result: &SimResult) -> Result<(), HarnessError> {
    write_file(&dir.join("trajectory.csv"), &trajectory_csv(&result.log))?;
    write_file(&dir.join("metrics.json"), &run_summary_json(result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engagement::AgentState;
    use crate::nmpc::ControlInput;

    #[test]
    fn csv_round_trips_doubles() {
        let row = LogRow {
            t: 0.1 + 0.2,
            target: AgentState::new(1.0 / 3.0, -0.0, 0.0, 2.0),
            attacker: AgentState::new(1e-300, 5e300, 0.0, 4.0),
            defender: AgentState::new(0.0, 0.0, 0.0, 4.0),
            control: ControlInput {
                u_x: std::f64::consts::PI,
                u_y: 0.0,
                alpha_dot_d: -0.5,
            },
            attacker_accel: 0.0,
            range_at: 1.0,
            range_ad: 2.0,
            estimate: [0.0; 4],
            sigma: [1.0; 4],
        };
        let csv = trajectory_csv(&[row]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 21);
        let parsed: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        let expect = row_values(&row);
        for (a, b) in parsed.iter().zip(expect.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
