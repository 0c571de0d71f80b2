//! Deterministic multi-robot simulator.
//!
//! A single global event queue, ordered by `(time, class, robot)`, drives
//! truth stepping, sensor sampling and agent delivery. Relative-update
//! handshakes complete within the UWB epoch that triggered them.

pub mod config;
pub mod scenarios;
pub mod sensors;
pub mod truth;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;

use crate::agent::{deliver, Agent, AgentEvent, AgentEventKind, Outbound, UpdateKind, UpdateRecord, ZuInfo};
use crate::error::{Error, Result};
use crate::linalg::{attitude_error, euler_from_dcm, rotation_from_vector, Mat15, Vec15, Vec3};
use crate::nav::{idx, ImuBiases, NavState, RobotId};

pub use config::{
    FilterConfig, InitialBelief, RobotConfig, ScenarioConfig, SensorModel, StartTrigger, TruthModel,
};
pub use scenarios::{builtin, cave, indoor};
use sensors::{gauss, gauss3, sample_encoder, sample_gnss, sample_imu, sample_uwb, stream, SensorStreams, Stream};
use truth::{RobotTruth, ScriptRunner};

#[derive(Clone, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub robot_id: RobotId,
    pub r: Vec3,
    pub v: Vec3,
    /// `(yaw, pitch, roll)` in radians.
    pub ypr: [f64; 3],
    pub b_a: Vec3,
    pub b_g: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefSample {
    pub t: f64,
    pub robot_id: RobotId,
    pub r: Vec3,
    pub v: Vec3,
    pub ypr: [f64; 3],
    /// Position variances `P66, P77, P88` (m²).
    pub p_pos: [f64; 3],
    /// A ZU was applied since the previous sample.
    pub zu_active: bool,
    /// A relative update with this peer was installed since the previous sample.
    pub rel_update_peer: Option<RobotId>,
}

/// One ZU with the truth it should be judged against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZuSnapshot {
    pub robot_id: RobotId,
    pub info: ZuInfo,
    pub v_true: Vec3,
    pub b_a_true: Vec3,
    pub b_g_true: Vec3,
}

impl ZuSnapshot {
    /// Accel then gyro bias estimation errors.
    pub fn bias_errors(&self) -> [f64; 6] {
        let ea = self.info.biases_after.accel - self.b_a_true;
        let eg = self.info.biases_after.gyro - self.b_g_true;
        [ea.x, ea.y, ea.z, eg.x, eg.y, eg.z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeesSample {
    pub t: f64,
    pub robot_id: RobotId,
    pub nees: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialCondition {
    pub robot_id: RobotId,
    /// Initial estimate minus truth.
    pub position_error: Vec3,
}

impl InitialCondition {
    pub fn horizontal_error(&self) -> f64 {
        self.position_error.xy().norm()
    }
}

/// Per-robot bookkeeping at the end of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSummary {
    pub robot_id: RobotId,
    pub zu_count: usize,
    pub range_count: usize,
    pub stale_dropped: u64,
    pub busy_dropped: u64,
    pub failed_relative: u64,
    pub gated_relative: u64,
    pub skipped_absent_maps: u64,
    /// Worst `λ_min(P) / trace(P)` seen after any update or propagation.
    pub worst_min_eig_ratio: f64,
    /// Worst `max|P − Pᵀ|` seen.
    pub worst_asymmetry: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Record NEES of the full 15-state error at every IMU tick.
    pub record_nees: bool,
    /// Check symmetry and PSD of every robot's covariance after every event.
    pub check_invariants: bool,
    /// Keep each agent's audit log.
    pub audit: bool,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub scenario: String,
    pub seed: u64,
    pub truth: Vec<TruthSample>,
    pub beliefs: Vec<BeliefSample>,
    pub events: Vec<UpdateRecord>,
    pub zu: Vec<ZuSnapshot>,
    pub nees: Vec<NeesSample>,
    pub initial: Vec<InitialCondition>,
    pub summaries: Vec<AgentSummary>,
    pub warnings: Vec<String>,
    /// Final agents, for inspection.
    pub agents: Vec<Agent>,
}

impl RunArtifacts {
    pub fn robot_ids(&self) -> Vec<RobotId> {
        self.initial.iter().map(|i| i.robot_id).collect()
    }
    pub fn beliefs_of(&self, id: RobotId) -> Vec<BeliefSample> {
        self.beliefs.iter().filter(|b| b.robot_id == id).cloned().collect()
    }
    pub fn truth_of(&self, id: RobotId) -> Vec<TruthSample> {
        self.truth.iter().filter(|b| b.robot_id == id).cloned().collect()
    }
    pub fn initial_of(&self, id: RobotId) -> Option<&InitialCondition> {
        self.initial.iter().find(|i| i.robot_id == id)
    }
    /// Range updates recorded by `a` with peer `b`.
    pub fn range_updates(&self, a: RobotId, b: RobotId) -> usize {
        self.events
            .iter()
            .filter(|e| e.update_kind == UpdateKind::Range && e.robot_id == a && e.peer == Some(b))
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Imu = 0,
    Encoder = 1,
    Gnss = 2,
    Uwb = 3,
}

#[derive(Clone, Copy, Debug)]
struct Scheduled {
    t: f64,
    class: Class,
    /// Robot index (0 for global events).
    robot: usize,
    tick: u64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.class.cmp(&other.class))
            .then(self.robot.cmp(&other.robot))
            .then(self.tick.cmp(&other.tick))
    }
}

/// Initial truth, estimate and covariance for one robot.
pub fn initial_belief(cfg: &ScenarioConfig, robot: &RobotConfig, truth: &RobotTruth) -> (NavState, Mat15) {
    let ib = &robot.initial;
    let mut rng = stream(cfg.seed, robot.id, Stream::Init);
    let up = ib.position_sigma[2];
    let (dr, pos_var) = match ib.position_error {
        Some(e) => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let dz = gauss(&mut rng, up);
            (Vec3::new(e * theta.cos(), e * theta.sin(), dz), [e * e, e * e, up * up])
        }
        None => {
            let s = ib.position_sigma;
            let d = Vec3::new(gauss(&mut rng, s[0]), gauss(&mut rng, s[1]), gauss(&mut rng, s[2]));
            (d, [s[0] * s[0], s[1] * s[1], s[2] * s[2]])
        }
    };
    let dv = gauss3(&mut rng, ib.velocity_sigma);
    let psi = gauss3(&mut rng, ib.attitude_sigma);
    let nav = NavState::new(rotation_from_vector(&psi) * truth.c_bn, truth.v + dv, truth.r + dr, 0.0);

    let sa = ib.accel_bias_sigma.unwrap_or(cfg.truth.accel_bias_sigma);
    let sg = ib.gyro_bias_sigma.unwrap_or(cfg.truth.gyro_bias_sigma);
    let mut diag = Vec15::zeros();
    for i in 0..3 {
        diag[idx::ATT + i] = ib.attitude_sigma.powi(2);
        diag[idx::VEL + i] = ib.velocity_sigma.powi(2);
        diag[idx::POS + i] = pos_var[i];
        diag[idx::BA + i] = sa * sa;
        diag[idx::BG + i] = sg * sg;
    }
    (nav, Mat15::from_diagonal(&diag))
}

/// Full error state in filter convention (estimate minus truth for
/// attitude/velocity/position, truth minus estimate for bias residuals).
pub fn full_error(nav: &NavState, biases: &ImuBiases, truth: &RobotTruth) -> Vec15 {
    let mut e = Vec15::zeros();
    e.fixed_rows_mut::<3>(idx::ATT).copy_from(&attitude_error(&nav.c_bn, &truth.c_bn));
    e.fixed_rows_mut::<3>(idx::VEL).copy_from(&(nav.v - truth.v));
    e.fixed_rows_mut::<3>(idx::POS).copy_from(&(nav.r - truth.r));
    e.fixed_rows_mut::<3>(idx::BA).copy_from(&(truth.b_a - biases.accel));
    e.fixed_rows_mut::<3>(idx::BG).copy_from(&(truth.b_g - biases.gyro));
    e
}

/// `eᵀ P⁻¹ e`, or `None` if `P` cannot be factored.
pub fn nees(e: &Vec15, p: &Mat15) -> Option<f64> {
    let chol = p.cholesky()?;
    Some(e.dot(&chol.solve(e)))
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    opts: &'a RunOptions,
    truth: Vec<RobotTruth>,
    scripts: Vec<ScriptRunner>,
    streams: Vec<SensorStreams>,
    agents: Vec<Agent>,
    cmd_moving: Vec<bool>,
    contact: Vec<bool>,
    art: RunArtifacts,
    worst_eig: Vec<f64>,
    worst_asym: Vec<f64>,
    zu_seen: Vec<usize>,
}

impl World<'_> {
    fn index_of(&self, id: RobotId) -> usize {
        self.agents.iter().position(|a| a.id() == id).expect("known robot")
    }

    fn step_agent(&mut self, i: usize, t: f64, kind: AgentEventKind) {
        match self.agents[i].step(AgentEvent::new(t, kind)) {
            Ok(out) => self.route(i, t, out),
            Err(e) => self.art.warnings.push(format!("t={t:.3} robot {}: {e}", self.agents[i].id())),
        }
    }

    fn route(&mut self, i: usize, t: f64, out: Vec<Outbound>) {
        if out.is_empty() {
            return;
        }
        let from = self.agents[i].id();
        match deliver(&mut self.agents, t, from, out) {
            Ok(ctrl) => {
                for (who, msg) in ctrl {
                    let j = self.index_of(who);
                    match msg {
                        Outbound::RequestStop => self.scripts[j].pause(),
                        Outbound::RequestResume => self.scripts[j].resume(),
                        _ => unreachable!("controller messages only"),
                    }
                    self.sync_command(j, t);
                }
            }
            Err(e) => self.art.warnings.push(format!("t={t:.3} robot {from}: {e}")),
        }
    }

    /// Tells the agent when its controller command changes.
    fn sync_command(&mut self, i: usize, t: f64) {
        let moving = self.scripts[i].commanded_moving(t);
        if moving != self.cmd_moving[i] {
            self.cmd_moving[i] = moving;
            let kind = if moving {
                AgentEventKind::ResumeCommand
            } else {
                AgentEventKind::StopCommand
            };
            self.step_agent(i, t, kind);
        }
    }

    fn check(&mut self, i: usize) {
        if !self.opts.check_invariants {
            return;
        }
        let p = &self.agents[i].belief().p;
        let asym = crate::linalg::asymmetry(p);
        let tr = p.trace().abs().max(1e-300);
        let ratio = crate::linalg::min_eigenvalue(p) / tr;
        self.worst_asym[i] = self.worst_asym[i].max(asym);
        self.worst_eig[i] = self.worst_eig[i].min(ratio);
    }

    fn record(&mut self, i: usize, t: f64) {
        let tr = &self.truth[i];
        let a = &self.agents[i];
        let (roll, pitch, yaw) = euler_from_dcm(&tr.c_bn);
        self.art.truth.push(TruthSample {
            t,
            robot_id: tr.id,
            r: tr.r,
            v: tr.v,
            ypr: [yaw, pitch, roll],
            b_a: tr.b_a,
            b_g: tr.b_g,
        });
        let nav = a.nav();
        let (roll, pitch, yaw) = euler_from_dcm(&nav.c_bn);
        let p = &a.belief().p;
        let p_pos = [p[(6, 6)], p[(7, 7)], p[(8, 8)]];
        let nees_val = if self.opts.record_nees {
            nees(&full_error(nav, a.biases(), tr), p)
        } else {
            None
        };
        let sample = BeliefSample {
            t,
            robot_id: a.id(),
            r: nav.r,
            v: nav.v,
            ypr: [yaw, pitch, roll],
            p_pos,
            zu_active: false,
            rel_update_peer: None,
        };
        let (zu, rel) = self.agents[i].take_flags();
        self.art.beliefs.push(BeliefSample {
            zu_active: zu,
            rel_update_peer: rel,
            ..sample
        });
        if let Some(n) = nees_val {
            self.art.nees.push(NeesSample {
                t,
                robot_id: self.agents[i].id(),
                nees: n,
            });
        }
        let zus = self.agents[i].zu_events();
        for info in &zus[self.zu_seen[i]..] {
            self.art.zu.push(ZuSnapshot {
                robot_id: self.truth[i].id,
                info: *info,
                v_true: self.truth[i].v,
                b_a_true: self.truth[i].b_a,
                b_g_true: self.truth[i].b_g,
            });
        }
        self.zu_seen[i] = zus.len();
    }

    fn on_imu(&mut self, t: f64, dt: f64) {
        for i in 0..self.agents.len() {
            let kin = self.scripts[i].step(&mut self.truth[i], t - dt, dt);
            let imu = sample_imu(&kin, &self.truth[i], &self.cfg.sensors, &mut self.streams[i].imu);
            self.sync_command(i, t);
            self.step_agent(i, t, AgentEventKind::ImuTick(imu));
            self.check(i);
            self.record(i, t);
        }
    }

    fn on_encoder(&mut self, i: usize, t: f64) {
        let speed = sample_encoder(&self.truth[i], &self.cfg.sensors, &mut self.streams[i].encoder);
        self.step_agent(i, t, AgentEventKind::EncoderTick { speed });
        self.check(i);
    }

    fn on_gnss(&mut self, i: usize, t: f64) {
        let (v, r) = sample_gnss(&self.truth[i], &self.cfg.sensors, &mut self.streams[i].gnss);
        self.step_agent(i, t, AgentEventKind::GnssTick { v, r });
        self.check(i);
    }

    fn on_uwb(&mut self, t: f64) {
        let var = self.cfg.range_variance();
        for [det, tgt] in self.cfg.effective_links() {
            let (i, j) = (self.index_of(det), self.index_of(tgt));
            let Some(meas) = sample_uwb(
                &self.truth[i],
                &self.truth[j],
                &self.cfg.sensors,
                &mut self.streams[i].uwb,
                self.cfg.gate_distance,
                var,
            ) else {
                continue;
            };
            self.step_agent(i, t, AgentEventKind::RangeDetected { peer: tgt, meas });
            self.check(i);
            self.check(j);
            for k in [i, j] {
                if !self.contact[k] && self.agents[k].log().iter().any(|r| r.update_kind == UpdateKind::Range) {
                    self.contact[k] = true;
                    if let StartTrigger::AfterFirstContact { delay } = self.cfg.robots[k].start_trigger {
                        self.scripts[k].set_start(t + delay);
                    }
                }
            }
        }
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    run_scenario_with(cfg, &RunOptions::default())
}

pub fn run_scenario_with(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    cfg.validate()?;
    let n = cfg.robots.len();
    let mut truth = Vec::with_capacity(n);
    let mut agents = Vec::with_capacity(n);
    let mut scripts = Vec::with_capacity(n);
    let mut initial = Vec::with_capacity(n);
    let mut cmd_moving = Vec::with_capacity(n);
    for rc in &cfg.robots {
        let mut tr = RobotTruth::at_rest(rc.id, Vec3::from(rc.start), rc.yaw);
        let mut brng = stream(cfg.seed, rc.id, Stream::Bias);
        tr.b_a = gauss3(&mut brng, cfg.truth.accel_bias_sigma);
        tr.b_g = gauss3(&mut brng, cfg.truth.gyro_bias_sigma);
        let (nav, p0) = initial_belief(cfg, rc, &tr);
        initial.push(InitialCondition {
            robot_id: rc.id,
            position_error: nav.r - tr.r,
        });
        let script = ScriptRunner::from_config(rc);
        let moving = script.commanded_moving(0.0);
        let mut acfg = cfg.agent_config(rc);
        acfg.audit = opts.audit;
        agents.push(Agent::new(acfg, nav, p0, !moving));
        cmd_moving.push(moving);
        scripts.push(script);
        truth.push(tr);
    }
    let mut world = World {
        cfg,
        opts,
        streams: cfg.robots.iter().map(|r| SensorStreams::new(cfg.seed, r.id)).collect(),
        truth,
        scripts,
        agents,
        cmd_moving,
        contact: vec![false; n],
        art: RunArtifacts {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            truth: Vec::new(),
            beliefs: Vec::new(),
            events: Vec::new(),
            zu: Vec::new(),
            nees: Vec::new(),
            initial,
            summaries: Vec::new(),
            warnings: Vec::new(),
            agents: Vec::new(),
        },
        worst_eig: vec![f64::INFINITY; n],
        worst_asym: vec![0.0; n],
        zu_seen: vec![0; n],
    };
    for i in 0..n {
        world.record(i, 0.0);
    }

    let s = &cfg.sensors;
    let rate_of = |c: Class| match c {
        Class::Imu => s.imu_rate,
        Class::Encoder => s.encoder_rate,
        Class::Gnss => s.gnss_rate,
        Class::Uwb => s.uwb_rate,
    };
    let mut queue = BinaryHeap::new();
    let push = |q: &mut BinaryHeap<Reverse<Scheduled>>, class: Class, robot: usize, tick: u64| {
        let t = tick as f64 / rate_of(class);
        if t <= cfg.duration + 1e-9 {
            q.push(Reverse(Scheduled { t, class, robot, tick }));
        }
    };
    push(&mut queue, Class::Imu, 0, 1);
    push(&mut queue, Class::Uwb, 0, 1);
    for (i, rc) in cfg.robots.iter().enumerate() {
        push(&mut queue, Class::Encoder, i, 1);
        if rc.gnss {
            push(&mut queue, Class::Gnss, i, 1);
        }
    }
    let dt = cfg.imu_dt();
    while let Some(Reverse(ev)) = queue.pop() {
        match ev.class {
            Class::Imu => world.on_imu(ev.t, dt),
            Class::Encoder => world.on_encoder(ev.robot, ev.t),
            Class::Gnss => world.on_gnss(ev.robot, ev.t),
            Class::Uwb => world.on_uwb(ev.t),
        }
        push(&mut queue, ev.class, ev.robot, ev.tick + 1);
    }

    let mut art = world.art;
    let mut events: Vec<UpdateRecord> = world.agents.iter().flat_map(|a| a.log().iter().cloned()).collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.robot_id.cmp(&b.robot_id)));
    art.events = events;
    art.summaries = world
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentSummary {
            robot_id: a.id(),
            zu_count: a.zu_events().len(),
            range_count: a.log().iter().filter(|r| r.update_kind == UpdateKind::Range).count(),
            stale_dropped: a.stale_dropped(),
            busy_dropped: a.busy_dropped(),
            failed_relative: a.failed_relative(),
            gated_relative: a.gated_relative(),
            skipped_absent_maps: a.skipped_absent_maps(),
            worst_min_eig_ratio: world.worst_eig[i],
            worst_asymmetry: world.worst_asym[i],
        })
        .collect();
    art.agents = world.agents;
    if art.beliefs.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(art)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(noise: bool) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::from_toml(
            r#"
            name = "single"
            duration = 30.0
            [[robots]]
            id = 0
            start = [0.0, 0.0, 0.0]
            waypoints = [[3.0, 0.0], [3.0, 2.0]]
            "#,
        )
        .unwrap();
        if !noise {
            cfg.sensors = SensorModel {
                accel_sigma: 0.0,
                gyro_sigma: 0.0,
                encoder_sigma: 0.0,
                gnss_pos_sigma: 0.0,
                gnss_vel_sigma: 0.0,
                uwb_sigma: 0.0,
                ..SensorModel::default()
            };
            cfg.truth = TruthModel {
                accel_bias_sigma: 0.0,
                gyro_bias_sigma: 0.0,
            };
            cfg.robots[0].initial.position_sigma = [1e-9; 3];
            cfg.robots[0].initial.velocity_sigma = 1e-9;
            cfg.robots[0].initial.attitude_sigma = 1e-12;
        }
        cfg
    }

    #[test]
    fn noiseless_robot_tracks_truth() {
        let art = run_scenario(&single(false)).unwrap();
        let b = art.beliefs_of(0);
        let t = art.truth_of(0);
        assert_eq!(b.len(), t.len());
        let worst = b.iter().zip(&t).map(|(b, t)| (b.r - t.r).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
        assert!(art.warnings.is_empty(), "{:?}", art.warnings);
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = single(true);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.beliefs, b.beliefs);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn event_order_is_time_then_class_then_robot() {
        let e = |t, class, robot| Scheduled { t, class, robot, tick: 0 };
        let mut v = vec![e(1.0, Class::Uwb, 0), e(1.0, Class::Imu, 2), e(0.5, Class::Encoder, 1), e(1.0, Class::Imu, 0)];
        v.sort();
        assert_eq!(v.iter().map(|s| (s.class, s.robot)).collect::<Vec<_>>(),
            vec![(Class::Encoder, 1), (Class::Imu, 0), (Class::Imu, 2), (Class::Uwb, 0)]);
    }

    #[test]
    fn nees_oracle() {
        let p = Mat15::from_diagonal_element(4.0);
        let e = Vec15::repeat(2.0);
        assert!((nees(&e, &p).unwrap() - 15.0).abs() < 1e-12);
    }
}
