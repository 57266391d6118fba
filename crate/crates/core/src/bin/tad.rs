use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tad::harness::output::{to_json, write_file, write_run};
use tad::harness::sweep::params_from_scenario;
use tad::harness::{compare, load_scenario, run_simulation, sweep_zone_validation, ControllerKind, HarnessError};
use tad::nmpc::TargetMode;
use tad::zones::{build_zone_map, GridSpec, SafeDistance, ZoneMode, ZoneParams};

#[derive(Parser)]
#[command(name = "tad", version, about = "Target-attacker-defender engagement simulator and zone analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop engagement and write trajectory.csv and metrics.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's defender controller.
        #[arg(long)]
        controller: Option<ControllerKind>,
    },
    /// Compute an escape/capture zone map and write zones.csv and zones.svg.
    Zones {
        #[arg(long, value_parser = parse_mode)]
        mode: ZoneMode,
        #[arg(long)]
        gamma_at: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma_ad: f64,
        #[arg(long)]
        xa: f64,
        /// Safe distance as a fraction of the initial target-attacker range.
        #[arg(long, default_value_t = 0.5)]
        e: f64,
        /// Attacker position one-sigma for the stochastic map, m.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare zone predictions with closed-loop runs on a grid of target starts.
    Sweep {
        scenario: PathBuf,
        #[arg(long, default_value_t = 21)]
        grid: usize,
        /// Grid bounds in the canonical frame: x_min,x_max,y_min,y_max.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        extent: Option<Vec<f64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the same scenario under several defender controllers.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "nmpc,clos,aclos")]
        controllers: Vec<ControllerKind>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<ZoneMode, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            scenario,
            out,
            seed,
            controller,
        } => {
            let mut cfg = load_scenario(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = controller {
                cfg.controller = c;
            }
            let result = run_simulation(&cfg)?;
            write_run(&out, &result)?;
            println!(
                "{}: {} at t = {:.3} s ({} samples) -> {}",
                cfg.name,
                result.outcome.as_str(),
                result.event_time,
                result.log.len(),
                out.display()
            );
            Ok(())
        }
        Command::Zones {
            mode,
            gamma_at,
            gamma_ad,
            xa,
            e,
            sigma,
            grid,
            out,
        } => {
            let params = ZoneParams {
                x_a: xa,
                gamma_at,
                gamma_ad,
                safe_distance: SafeDistance::FractionOfRange(e),
                sigma_pos: sigma.unwrap_or(0.05 * xa),
                ..ZoneParams::default()
            };
            params.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
            let spec = GridSpec {
                x_min: -2.0 * xa,
                x_max: 4.0 * xa,
                y_min: -3.0 * xa,
                y_max: 3.0 * xa,
                nx: grid,
                ny: grid,
            };
            let map = build_zone_map(&params, &spec, mode).map_err(|e| HarnessError::Validation(e.to_string()))?;
            write_file(&out.join("zones.csv"), &map.to_csv())?;
            write_file(&out.join("zones.svg"), &map.to_svg())?;
            println!(
                "{} cells: {} escape, {} capture, {} boundary; {} boundary polylines -> {}",
                map.labels.len(),
                map.count(tad::zones::Label::Escape),
                map.count(tad::zones::Label::Capture),
                map.count(tad::zones::Label::Boundary),
                map.boundary.len(),
                out.display()
            );
            for (k, err) in &map.failures {
                eprintln!("cell {k}: {err}");
            }
            Ok(())
        }
        Command::Sweep {
            scenario,
            grid,
            extent,
            out,
        } => {
            let cfg = load_scenario(&scenario)?;
            let params = params_from_scenario(&cfg);
            params.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
            let xa = params.x_a;
            let [x_min, x_max, y_min, y_max] = match extent.as_deref() {
                Some(&[a, b, c, d]) => [a, b, c, d],
                _ => [-xa, 3.2 * xa, 0.0, 3.2 * xa],
            };
            let spec = GridSpec {
                x_min,
                x_max,
                y_min,
                y_max,
                nx: grid,
                ny: grid,
            };
            let mode = match cfg.target.mode {
                TargetMode::ConstantSpeed => ZoneMode::ConstantSpeed,
                TargetMode::VariableVelocity => ZoneMode::VariableVelocity,
            };
            let report = sweep_zone_validation(&params, &spec, mode, &cfg);
            write_file(&out.join("sweep.csv"), &report.to_csv())?;
            write_file(&out.join("sweep.json"), &to_json(&report))?;
            match report.agreement_rate {
                Some(rate) => println!(
                    "{}: {}/{} off-band cells agree ({:.1}%) -> {}",
                    cfg.name,
                    report.off_band_agree,
                    report.off_band,
                    100.0 * rate,
                    out.display()
                ),
                None => println!("{}: no off-band cells", cfg.name),
            }
            Ok(())
        }
        Command::Compare {
            scenario,
            controllers,
            out,
        } => {
            let cfg = load_scenario(&scenario)?;
            let table = compare(&cfg, &controllers)?;
            write_file(&out.join("comparison.json"), &to_json(&table))?;
            print!("{}", table.to_text());
            Ok(())
        }
    }
}
