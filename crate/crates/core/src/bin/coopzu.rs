use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coopzu::metrics::report;
use coopzu::report::{run_ab_with, with_zu, write_run};
use coopzu::sim::{builtin, run_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(version, about = "Cooperative localization simulator with zero-velocity updates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ZuArg {
    On,
    Off,
    Ab,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write traces, event logs, metrics and plots.
    Run {
        /// Scenario TOML file, or `cave` / `indoor` for the built-in layouts.
        #[arg(long)]
        scenario: String,
        /// First seed; trial k uses `seed + k`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, value_enum, default_value = "on")]
        zu: ZuArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "off")]
        plots: Toggle,
    },
}

fn load(scenario: &str) -> coopzu::Result<ScenarioConfig> {
    match builtin(scenario) {
        Some(cfg) => Ok(cfg),
        None => ScenarioConfig::from_file(scenario),
    }
}

fn run(cli: Cli) -> coopzu::Result<()> {
    let Cmd::Run {
        scenario,
        seed,
        trials,
        zu,
        out,
        plots,
    } = cli.cmd;
    let mut cfg = load(&scenario)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if trials == 0 {
        return Err(coopzu::Error::config("trials", "must be ≥ 1"));
    }
    let plots = plots == Toggle::On;
    let rate = cfg.sensors.imu_rate;
    let seeds: Vec<u64> = (0..trials as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    match zu {
        ZuArg::Ab => {
            let name = cfg.name.clone();
            let summary = run_ab_with(&cfg, &seeds, |art, on| {
                let dir = if on { name.clone() } else { format!("{name}_no_zu") };
                let path = write_run(&out, &dir, art, rate, plots)?;
                log::info!("wrote {}", path.display());
                Ok(())
            })?;
            let dir = out.join(&name);
            std::fs::create_dir_all(&dir)?;
            let json = serde_json::to_string_pretty(&summary).map_err(|e| coopzu::Error::Io(e.to_string()))?;
            std::fs::write(dir.join("ab_summary.json"), json)?;
            print!("{}", summary.to_table());
        }
        ZuArg::On | ZuArg::Off => {
            let cfg = with_zu(&cfg, zu == ZuArg::On);
            for &s in &seeds {
                let mut c = cfg.clone();
                c.seed = s;
                let art = run_scenario(&c)?;
                let path = write_run(&out, &c.name, &art, rate, plots)?;
                for w in &art.warnings {
                    log::warn!("{w}");
                }
                let m = report(&art, rate)?;
                println!("{} seed {s} → {}", c.name, path.display());
                for r in &m.robots {
                    println!(
                        "  robot {}: 3D RMSE {:.4} m, Up RMSE {:.4} m, final horizontal error {:.3} m",
                        r.robot_id, r.error_3d.rmse, r.up.rmse, r.final_horizontal_error
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
