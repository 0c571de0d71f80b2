//! A/B trials, CSV/JSON output and static SVG plots.
//!
//! Output layout for one run: `<out>/<scenario>/<seed>/` holding
//! `truth.csv`, `robot<N>_belief.csv`, `events.csv`, `metrics.json` and
//! optionally `plots/`. In A/B mode the ZU-disabled arm goes to
//! `<out>/<scenario>_no_zu/<seed>/` and the summary to
//! `<out>/<scenario>/ab_summary.json`.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ab_improvement, report, ErrorStats, MetricsReport};
use crate::nav::RobotId;
use crate::sim::{run_scenario, AgentSummary, RunArtifacts, ScenarioConfig};

/// Copy of `cfg` with ZU turned off on every robot when `on` is false.
pub fn with_zu(cfg: &ScenarioConfig, on: bool) -> ScenarioConfig {
    let mut c = cfg.clone();
    if !on {
        for r in &mut c.robots {
            r.zu_enabled = false;
        }
    }
    c
}

/// Paired runs for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbTrial {
    pub seed: u64,
    pub with_zu: MetricsReport,
    pub without_zu: MetricsReport,
}

/// Mean of a statistic over trials, with and without ZU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbRow {
    pub without_zu: f64,
    pub with_zu: f64,
    /// `100 · (without − with) / without` (%).
    pub improvement: f64,
}

impl AbRow {
    fn new(without_zu: f64, with_zu: f64) -> Self {
        Self {
            without_zu,
            with_zu,
            improvement: ab_improvement(without_zu, with_zu),
        }
    }
}

/// Max/RMSE/median/std rows for one error component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbStats {
    pub max: AbRow,
    pub rmse: AbRow,
    pub median: AbRow,
    pub std: AbRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbRobotSummary {
    pub robot_id: RobotId,
    pub east: AbStats,
    pub north: AbStats,
    pub up: AbStats,
    pub error_3d: AbStats,
    pub mean_initial_error: f64,
    pub mean_correction_with_zu: f64,
    pub mean_correction_without_zu: f64,
    pub mean_improvement_with_zu: f64,
    pub mean_improvement_without_zu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbSummary {
    pub scenario: String,
    pub trials: Vec<AbTrial>,
    pub robots: Vec<AbRobotSummary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn ab_stats(trials: &[AbTrial], id: RobotId, pick: impl Fn(&crate::metrics::RobotMetrics) -> ErrorStats) -> AbStats {
    let col = |f: &dyn Fn(&ErrorStats) -> f64, with: bool| {
        mean(trials.iter().map(|t| {
            let r = if with { &t.with_zu } else { &t.without_zu };
            f(&pick(r.robot(id).expect("robot in both arms")))
        }))
    };
    let row = |f: &dyn Fn(&ErrorStats) -> f64| AbRow::new(col(f, false), col(f, true));
    AbStats {
        max: row(&|s| s.max),
        rmse: row(&|s| s.rmse),
        median: row(&|s| s.median),
        std: row(&|s| s.std),
    }
}

/// Summarizes paired trials robot by robot.
pub fn summarize(scenario: &str, trials: Vec<AbTrial>) -> AbSummary {
    let ids: Vec<RobotId> = trials
        .first()
        .map(|t| t.with_zu.robots.iter().map(|r| r.robot_id).collect())
        .unwrap_or_default();
    let robots = ids
        .iter()
        .map(|&id| {
            let per = |with: bool, f: &dyn Fn(&crate::metrics::RobotMetrics) -> f64| {
                mean(trials.iter().map(|t| {
                    let r = if with { &t.with_zu } else { &t.without_zu };
                    f(r.robot(id).expect("robot in both arms"))
                }))
            };
            AbRobotSummary {
                robot_id: id,
                east: ab_stats(&trials, id, |m| m.east),
                north: ab_stats(&trials, id, |m| m.north),
                up: ab_stats(&trials, id, |m| m.up),
                error_3d: ab_stats(&trials, id, |m| m.error_3d),
                mean_initial_error: per(true, &|m| m.initial_horizontal_error),
                mean_correction_with_zu: per(true, &|m| m.correction),
                mean_correction_without_zu: per(false, &|m| m.correction),
                mean_improvement_with_zu: per(true, &|m| m.improvement),
                mean_improvement_without_zu: per(false, &|m| m.improvement),
            }
        })
        .collect();
    AbSummary {
        scenario: scenario.to_string(),
        trials,
        robots,
    }
}

/// Runs each seed twice, ZU as configured and ZU off, with identical noise.
/// `on_run` sees every run (`true` for the ZU arm) before it is dropped.
pub fn run_ab_with(
    cfg: &ScenarioConfig,
    seeds: &[u64],
    mut on_run: impl FnMut(&RunArtifacts, bool) -> Result<()>,
) -> Result<AbSummary> {
    if seeds.is_empty() {
        return Err(Error::config("trials", "must be ≥ 1"));
    }
    let mut trials = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut reports = Vec::with_capacity(2);
        for on in [true, false] {
            let mut c = with_zu(cfg, on);
            c.seed = seed;
            let art = run_scenario(&c)?;
            on_run(&art, on)?;
            reports.push(report(&art, c.sensors.imu_rate)?);
        }
        let without_zu = reports.pop().expect("two arms");
        let with_zu = reports.pop().expect("two arms");
        trials.push(AbTrial {
            seed,
            with_zu,
            without_zu,
        });
    }
    Ok(summarize(&cfg.name, trials))
}

/// `n_trials` paired runs on seeds `cfg.seed, cfg.seed + 1, …`.
pub fn run_ab(cfg: &ScenarioConfig, n_trials: usize) -> Result<AbSummary> {
    let seeds: Vec<u64> = (0..n_trials as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    run_ab_with(cfg, &seeds, |_, _| Ok(()))
}

impl AbSummary {
    /// Plain-text tables: per-axis error statistics and lost-robot corrections.
    pub fn to_table(&self) -> String {
        let mut s = format!("scenario {} — {} paired trial(s)\n", self.scenario, self.trials.len());
        for r in &self.robots {
            s += &format!("\nrobot {}\n{:<10}{:>12}{:>12}{:>10}\n", r.robot_id, "metric", "w/o ZU", "w/ ZU", "impr %");
            for (axis, st) in [("E", r.east), ("N", r.north), ("U", r.up), ("3D", r.error_3d)] {
                for (name, row) in [("max", st.max), ("rmse", st.rmse), ("median", st.median), ("std", st.std)] {
                    s += &format!(
                        "{:<10}{:>12.4}{:>12.4}{:>10.2}\n",
                        format!("{name}_{axis}"),
                        row.without_zu,
                        row.with_zu,
                        row.improvement
                    );
                }
            }
            s += &format!(
                "initial {:.2} m | correction w/o {:.2} m ({:.1}%) | w/ {:.2} m ({:.1}%)\n",
                r.mean_initial_error,
                r.mean_correction_without_zu,
                r.mean_improvement_without_zu,
                r.mean_correction_with_zu,
                r.mean_improvement_with_zu
            );
        }
        s
    }
}

/// Structured per-run output.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary<'a> {
    pub metrics: &'a MetricsReport,
    pub agents: Vec<AgentSummaryJson>,
    pub warnings: &'a [String],
}

#[derive(Clone, Debug, Serialize)]
pub struct AgentSummaryJson {
    pub robot_id: RobotId,
    pub zu_count: usize,
    pub range_count: usize,
    pub stale_dropped: u64,
    pub busy_dropped: u64,
    pub failed_relative: u64,
    pub gated_relative: u64,
    pub skipped_absent_maps: u64,
}

impl From<&AgentSummary> for AgentSummaryJson {
    fn from(a: &AgentSummary) -> Self {
        Self {
            robot_id: a.robot_id,
            zu_count: a.zu_count,
            range_count: a.range_count,
            stale_dropped: a.stale_dropped,
            busy_dropped: a.busy_dropped,
            failed_relative: a.failed_relative,
            gated_relative: a.gated_relative,
            skipped_absent_maps: a.skipped_absent_maps,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub const BELIEF_HEADER: [&str; 16] = [
    "t", "robot_id", "rE", "rN", "rU", "vE", "vN", "vU", "yaw", "pitch", "roll", "P66", "P77", "P88",
    "zu_active", "rel_update_peer",
];

pub const TRUTH_HEADER: [&str; 17] = [
    "t", "robot_id", "rE", "rN", "rU", "vE", "vN", "vU", "yaw", "pitch", "roll", "baX", "baY", "baZ",
    "bgX", "bgY", "bgZ",
];

pub const EVENTS_HEADER: [&str; 7] = [
    "t", "robot_id", "update_kind", "innovation_norm", "trace_P_before", "trace_P_after", "peer",
];

pub fn write_belief_csv(path: &Path, art: &RunArtifacts, id: RobotId) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(BELIEF_HEADER).map_err(csv_err)?;
    for b in art.beliefs.iter().filter(|b| b.robot_id == id) {
        let mut rec = vec![num(b.t), b.robot_id.to_string()];
        rec.extend(b.r.iter().chain(b.v.iter()).chain(b.ypr.iter()).chain(b.p_pos.iter()).map(|x| num(*x)));
        rec.push(u8::from(b.zu_active).to_string());
        rec.push(b.rel_update_peer.map(|p| p.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth_csv(path: &Path, art: &RunArtifacts) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRUTH_HEADER).map_err(csv_err)?;
    for s in &art.truth {
        let mut rec = vec![num(s.t), s.robot_id.to_string()];
        rec.extend(
            s.r.iter()
                .chain(s.v.iter())
                .chain(s.ypr.iter())
                .chain(s.b_a.iter())
                .chain(s.b_g.iter())
                .map(|x| num(*x)),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv(path: &Path, art: &RunArtifacts) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(EVENTS_HEADER).map_err(csv_err)?;
    for e in &art.events {
        w.write_record([
            num(e.t),
            e.robot_id.to_string(),
            e.update_kind.label().to_string(),
            num(e.innovation_norm),
            num(e.trace_p_before),
            num(e.trace_p_after),
            e.peer.map(|p| p.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every artifact of one run and returns its directory.
pub fn write_run(out: &Path, scenario_dir: &str, art: &RunArtifacts, imu_rate: f64, plots: bool) -> Result<PathBuf> {
    let dir = out.join(scenario_dir).join(art.seed.to_string());
    fs::create_dir_all(&dir)?;
    write_truth_csv(&dir.join("truth.csv"), art)?;
    for id in art.robot_ids() {
        write_belief_csv(&dir.join(format!("robot{id}_belief.csv")), art, id)?;
    }
    write_events_csv(&dir.join("events.csv"), art)?;
    let metrics = report(art, imu_rate)?;
    let summary = RunSummary {
        metrics: &metrics,
        agents: art.summaries.iter().map(AgentSummaryJson::from).collect(),
        warnings: &art.warnings,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("metrics.json"), json)?;
    if plots {
        write_plots(&dir.join("plots"), art)?;
    }
    Ok(dir)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(format!("plot: {e}"))
}

const AXES: [&str; 3] = ["East", "North", "Up"];

/// Error-vs-time and ENU-vs-time figures with 3σ envelopes, one pair per robot.
pub fn write_plots(dir: &Path, art: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    for id in art.robot_ids() {
        let b = art.beliefs_of(id);
        let t = art.truth_of(id);
        let n = b.len().min(t.len());
        let t_end = b.last().map(|s| s.t).unwrap_or(1.0).max(1e-3);

        let path = dir.join(format!("robot{id}_error.svg"));
        let root = SVGBackend::new(&path, (900, 900)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((3, 1));
        for (k, area) in panels.iter().enumerate() {
            let err: Vec<(f64, f64)> = (0..n).map(|i| (b[i].t, b[i].r[k] - t[i].r[k])).collect();
            let sig: Vec<(f64, f64)> = (0..n).map(|i| (b[i].t, 3.0 * b[i].p_pos[k].max(0.0).sqrt())).collect();
            let lim = err
                .iter()
                .map(|e| e.1.abs())
                .chain(sig.iter().map(|s| s.1))
                .fold(1e-3, f64::max)
                * 1.05;
            let mut chart = ChartBuilder::on(area)
                .caption(format!("robot {id} {} error (m), ±3σ", AXES[k]), ("sans-serif", 16))
                .margin(8)
                .x_label_area_size(28)
                .y_label_area_size(50)
                .build_cartesian_2d(0.0..t_end, -lim..lim)
                .map_err(plot_err)?;
            chart.configure_mesh().x_desc("t (s)").draw().map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(sig.iter().copied(), RED.stroke_width(1)))
                .map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(sig.iter().map(|(t, s)| (*t, -s)), RED.stroke_width(1)))
                .map_err(plot_err)?;
            chart.draw_series(LineSeries::new(err, BLUE.stroke_width(1))).map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;

        let path = dir.join(format!("robot{id}_enu.svg"));
        let root = SVGBackend::new(&path, (900, 900)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((3, 1));
        for (k, area) in panels.iter().enumerate() {
            let est: Vec<(f64, f64)> = (0..n).map(|i| (b[i].t, b[i].r[k])).collect();
            let tru: Vec<(f64, f64)> = (0..n).map(|i| (t[i].t, t[i].r[k])).collect();
            let band: Vec<(f64, f64, f64)> = (0..n)
                .map(|i| {
                    let s = 3.0 * b[i].p_pos[k].max(0.0).sqrt();
                    (b[i].t, b[i].r[k] - s, b[i].r[k] + s)
                })
                .collect();
            let (lo, hi) = band
                .iter()
                .map(|x| (x.1, x.2))
                .chain(tru.iter().map(|x| (x.1, x.1)))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
            let pad = ((hi - lo) * 0.05).max(0.1);
            let mut chart = ChartBuilder::on(area)
                .caption(format!("robot {id} {} (m): estimate, truth, ±3σ", AXES[k]), ("sans-serif", 16))
                .margin(8)
                .x_label_area_size(28)
                .y_label_area_size(50)
                .build_cartesian_2d(0.0..t_end, (lo - pad)..(hi + pad))
                .map_err(plot_err)?;
            chart.configure_mesh().x_desc("t (s)").draw().map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(band.iter().map(|x| (x.0, x.1)), RED.stroke_width(1)))
                .map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(band.iter().map(|x| (x.0, x.2)), RED.stroke_width(1)))
                .map_err(plot_err)?;
            chart.draw_series(LineSeries::new(tru, BLACK.stroke_width(1))).map_err(plot_err)?;
            chart.draw_series(LineSeries::new(est, BLUE.stroke_width(1))).map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ScenarioConfig;

    fn tiny() -> ScenarioConfig {
        ScenarioConfig::from_toml(
            r#"
            name = "tiny"
            duration = 4.0
            gate_distance = 2.0
            [[robots]]
            id = 1
            start = [0.0, 0.0, 0.0]
            waypoints = [[1.0, 0.0]]
            zu_enabled = true
            [[robots]]
            id = 0
            start = [0.5, 1.0, 0.0]
            initial = { position_error = 3.0 }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn writes_the_documented_layout() {
        let cfg = tiny();
        let art = run_scenario(&cfg).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_run(tmp.path(), &cfg.name, &art, cfg.sensors.imu_rate, true).unwrap();
        assert_eq!(dir, tmp.path().join("tiny").join("0"));
        for f in ["truth.csv", "robot0_belief.csv", "robot1_belief.csv", "events.csv", "metrics.json", "plots/robot0_error.svg", "plots/robot1_enu.svg"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let header = fs::read_to_string(dir.join("robot0_belief.csv")).unwrap();
        assert_eq!(header.lines().next().unwrap(), BELIEF_HEADER.join(","));
        let events = fs::read_to_string(dir.join("events.csv")).unwrap();
        assert!(events.lines().any(|l| l.contains(",range,")));
    }

    #[test]
    fn ab_arms_differ_only_in_zu() {
        let s = run_ab(&tiny(), 2).unwrap();
        assert_eq!(s.trials.len(), 2);
        assert_eq!(s.trials[1].seed, 1);
        // Robot 0 never uses ZU, but it ranges with robot 1 which does, so its
        // numbers may differ; robot 1's initial error is identical in both arms.
        for t in &s.trials {
            assert_eq!(
                t.with_zu.robot(1).unwrap().initial_horizontal_error,
                t.without_zu.robot(1).unwrap().initial_horizontal_error
            );
        }
        assert!(s.to_table().contains("rmse_3D"));
        assert!(matches!(run_ab_with(&tiny(), &[], |_, _| Ok(())), Err(Error::Config { .. })));
    }
}
