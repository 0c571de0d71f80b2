//! Per-robot decentralized node.
//!
//! An [`Agent`] owns one robot's navigation state, error state, bias
//! estimates and [`BeliefBlock`]. It turns incoming [`AgentEvent`]s into
//! propagations and updates, runs stationary detection and the stopping state
//! machine, and speaks the relative-update handshake:
//!
//! ```text
//! A (detector)                      B (detected)
//! RangeDetected ── Request ───────▶ PeerRequest   (B freezes)
//! PeerBelief    ◀── Belief ──────── reply
//! couple/update/decompose, install own side
//!               ── Posterior ─────▶ PeerPosterior (B installs, unfreezes)
//! ```
//!
//! While frozen, measurement and command events are buffered and replayed in
//! order once the transaction completes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat15, Vec3};
use crate::nav::{
    build_f, build_phi, build_q, fold_correction, mechanize, BeliefBlock, ErrorState, ImuBiases,
    ImuSample, NavState, NoiseSpec, RobotId,
};
use crate::private::{
    apply_private, h_odomvel, h_odomvel_coupled, h_posvel, h_zupt, innovation_odomvel, innovation_posvel,
    r_from_sigmas, zupt_innovation, CrossFactorUpdate, PrivateKind,
};
use crate::protocol::{mat_to_row_major, BeliefPayload, PosteriorPayload};
use crate::relative::{
    couple, decompose, install_side, relative_update, AbsentFactorOrder, RangeMeasurement,
    SidePosterior,
};

/// Encoder speed below which the wheels count as stopped (m/s).
pub const DEFAULT_ENCODER_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    #[default]
    None,
    /// Stop whenever a diagonal position variance exceeds the threshold.
    Autonomous,
    /// Stop after every `period` seconds of motion.
    Periodic,
    /// Autonomous until a post-ZU covariance is still above threshold, then
    /// periodic for the rest of the run.
    AutoThenPeriodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopPolicy {
    pub mode: StopMode,
    /// Diagonal position-variance trigger (m²).
    pub cov_threshold: f64,
    /// Seconds of motion between periodic stops.
    pub period: f64,
    /// Stationary wait before a ZU (s).
    pub dwell: f64,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self {
            mode: StopMode::None,
            cov_threshold: 5.0,
            period: 20.0,
            dwell: 0.5,
        }
    }
}

impl StopPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.cov_threshold > 0.0) {
            return Err(Error::config("stop_policy.cov_threshold", "must be > 0"));
        }
        if !(self.dwell > 0.0) {
            return Err(Error::config("stop_policy.dwell", "must be > 0"));
        }
        if !(self.period > 0.0) {
            return Err(Error::config("stop_policy.period", "must be > 0"));
        }
        Ok(())
    }
}

/// Inputs to stationary detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionStatus {
    pub cmd_vel_zero: bool,
    pub encoder_speed: f64,
    pub stationary_since: Option<f64>,
}

impl MotionStatus {
    pub fn new(cmd_vel_zero: bool) -> Self {
        Self {
            cmd_vel_zero,
            encoder_speed: 0.0,
            stationary_since: None,
        }
    }

    /// Re-evaluates `stationary_since` at time `t`.
    pub fn refresh(&mut self, t: f64, eps: f64) {
        let still = self.cmd_vel_zero && self.encoder_speed.abs() < eps;
        match (still, self.stationary_since) {
            (true, None) => self.stationary_since = Some(t),
            (false, Some(_)) => self.stationary_since = None,
            _ => {}
        }
    }
}

/// True once the robot has been commanded still with stopped wheels for at
/// least `dwell` seconds.
pub fn detect_stationary(status: &MotionStatus, now: f64, dwell: f64) -> bool {
    status.cmd_vel_zero
        && status
            .stationary_since
            .is_some_and(|since| now - since >= dwell - 1e-9)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    IssueStop,
}

/// What the stop rule needs to remember between calls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StopHistory {
    /// Set permanently once a post-ZU covariance stayed above threshold.
    pub periodic_active: bool,
    /// Seconds of motion since the last ZU.
    pub motion_since_zu: f64,
}

fn max_position_variance(p: &Mat15) -> f64 {
    p[(6, 6)].max(p[(7, 7)]).max(p[(8, 8)])
}

pub fn stop_decision(p: &Mat15, policy: &StopPolicy, history: &StopHistory) -> StopDecision {
    let autonomous = max_position_variance(p) > policy.cov_threshold;
    let periodic = history.motion_since_zu >= policy.period - 1e-9;
    let stop = match policy.mode {
        StopMode::None => false,
        StopMode::Autonomous => autonomous,
        StopMode::Periodic => periodic,
        StopMode::AutoThenPeriodic => {
            if history.periodic_active {
                periodic
            } else {
                autonomous
            }
        }
    };
    if stop {
        StopDecision::IssueStop
    } else {
        StopDecision::Continue
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AgentEventKind {
    ImuTick(ImuSample),
    /// Forward wheel speed (m/s).
    EncoderTick { speed: f64 },
    GnssTick { v: Vec3, r: Vec3 },
    /// This robot's UWB ranged `peer`.
    RangeDetected { peer: RobotId, meas: RangeMeasurement },
    PeerRequest { from: RobotId },
    /// Reply to our request.
    PeerBelief(BeliefPayload),
    PeerPosterior(PosteriorPayload),
    PeerAbort { from: RobotId },
    /// The controller's velocity command went to zero.
    StopCommand,
    /// The controller's velocity command became nonzero.
    ResumeCommand,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentEvent {
    pub t: f64,
    pub kind: AgentEventKind,
}

impl AgentEvent {
    pub fn new(t: f64, kind: AgentEventKind) -> Self {
        Self { t, kind }
    }
}

/// Messages an agent asks the bus (or the controller) to deliver.
#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    Request { to: RobotId },
    Belief { to: RobotId, payload: Box<BeliefPayload> },
    Posterior { to: RobotId, payload: Box<PosteriorPayload> },
    Abort { to: RobotId },
    /// Ask the controller to halt for a ZU.
    RequestStop,
    RequestResume,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Odometry,
    Gnss,
    Zupt,
    Range,
}

impl UpdateKind {
    pub fn label(self) -> &'static str {
        match self {
            UpdateKind::Odometry => PrivateKind::OdomVel.label(),
            UpdateKind::Gnss => PrivateKind::PosVel.label(),
            UpdateKind::Zupt => PrivateKind::ZeroVel.label(),
            UpdateKind::Range => "range",
        }
    }
}

/// One applied update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub t: f64,
    pub robot_id: RobotId,
    pub update_kind: UpdateKind,
    pub innovation_norm: f64,
    #[serde(rename = "trace_P_before")]
    pub trace_p_before: f64,
    #[serde(rename = "trace_P_after")]
    pub trace_p_after: f64,
    /// Other robot for range updates.
    pub peer: Option<RobotId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditOp {
    Propagate,
    Update(UpdateKind),
    Freeze,
    Unfreeze,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditEntry {
    pub t: f64,
    pub op: AuditOp,
}

/// Snapshot around one ZU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZuInfo {
    pub t: f64,
    pub v_before: Vec3,
    pub v_after: Vec3,
    pub biases_after: ImuBiases,
    /// 1σ of the accel then gyro bias marginals after the update.
    pub bias_sigma: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub id: RobotId,
    pub peers: Vec<RobotId>,
    pub noise: NoiseSpec,
    pub odom_sigma: f64,
    /// Vertical odometry σ; large values leave the Up channel unaided.
    pub odom_vertical_sigma: f64,
    /// Include the attitude block in the odometry Jacobian.
    pub odom_attitude_coupling: bool,
    pub gnss_pos_sigma: f64,
    pub gnss_vel_sigma: f64,
    pub zupt_vel_sigma: f64,
    pub zupt_gyro_sigma: f64,
    pub zu_enabled: bool,
    pub stop_policy: StopPolicy,
    pub encoder_eps: f64,
    pub cross_update: CrossFactorUpdate,
    pub absent_order: AbsentFactorOrder,
    /// Reject range updates whose NIS exceeds this value. `None` applies
    /// every update.
    pub range_nis_gate: Option<f64>,
    /// Keep an [`AuditEntry`] per operation.
    pub audit: bool,
}

impl AgentConfig {
    pub fn new(id: RobotId, peers: Vec<RobotId>, noise: NoiseSpec) -> Self {
        Self {
            id,
            peers,
            noise,
            odom_sigma: 0.01,
            odom_vertical_sigma: 100.0,
            odom_attitude_coupling: true,
            gnss_pos_sigma: 0.1,
            gnss_vel_sigma: 0.02,
            zupt_vel_sigma: 1e-3,
            zupt_gyro_sigma: 1e-3,
            zu_enabled: true,
            stop_policy: StopPolicy::default(),
            encoder_eps: DEFAULT_ENCODER_EPS,
            cross_update: CrossFactorUpdate::default(),
            absent_order: AbsentFactorOrder::default(),
            range_nis_gate: None,
            audit: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Txn {
    Detector { peer: RobotId, meas: RangeMeasurement },
    Responder { peer: RobotId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OwnStop {
    Moving,
    /// Stop requested, waiting for the ZU.
    Stopping,
}

#[derive(Clone, Debug)]
pub struct Agent {
    cfg: AgentConfig,
    nav: NavState,
    err: ErrorState,
    biases: ImuBiases,
    belief: BeliefBlock,
    motion: MotionStatus,
    history: StopHistory,
    own_stop: OwnStop,
    next_zu_at: Option<f64>,
    gyro_window: Vec<Vec3>,
    txn: Option<Txn>,
    buffer: VecDeque<AgentEvent>,
    last_t: f64,
    stale_dropped: u64,
    busy_dropped: u64,
    failed_relative: u64,
    gated_relative: u64,
    skipped_absent_maps: u64,
    log: Vec<UpdateRecord>,
    audit: Vec<AuditEntry>,
    zu_events: Vec<ZuInfo>,
    zu_flag: bool,
    rel_flag: Option<RobotId>,
}

impl Agent {
    /// New agent with estimate `nav` and initial covariance `p0`; factors
    /// toward every peer start at zero. `cmd_vel_zero` is the controller's
    /// command at start.
    pub fn new(cfg: AgentConfig, nav: NavState, p0: Mat15, cmd_vel_zero: bool) -> Self {
        let belief = BeliefBlock::new(cfg.id, p0, cfg.peers.iter().copied());
        let last_t = nav.t;
        let mut motion = MotionStatus::new(cmd_vel_zero);
        motion.refresh(last_t, cfg.encoder_eps);
        let next_zu_at = motion.stationary_since.map(|s| s + cfg.stop_policy.dwell);
        Self {
            cfg,
            nav,
            err: ErrorState::zero(),
            biases: ImuBiases::default(),
            belief,
            motion,
            history: StopHistory::default(),
            own_stop: OwnStop::Moving,
            next_zu_at,
            gyro_window: Vec::new(),
            txn: None,
            buffer: VecDeque::new(),
            last_t,
            stale_dropped: 0,
            busy_dropped: 0,
            failed_relative: 0,
            gated_relative: 0,
            skipped_absent_maps: 0,
            log: Vec::new(),
            audit: Vec::new(),
            zu_events: Vec::new(),
            zu_flag: false,
            rel_flag: None,
        }
    }

    pub fn id(&self) -> RobotId {
        self.cfg.id
    }
    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }
    pub fn nav(&self) -> &NavState {
        &self.nav
    }
    pub fn err(&self) -> &ErrorState {
        &self.err
    }
    pub fn biases(&self) -> &ImuBiases {
        &self.biases
    }
    pub fn belief(&self) -> &BeliefBlock {
        &self.belief
    }
    pub fn motion(&self) -> &MotionStatus {
        &self.motion
    }
    pub fn stop_history(&self) -> &StopHistory {
        &self.history
    }
    pub fn is_frozen(&self) -> bool {
        self.txn.is_some()
    }
    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }
    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }
    pub fn busy_dropped(&self) -> u64 {
        self.busy_dropped
    }
    pub fn failed_relative(&self) -> u64 {
        self.failed_relative
    }
    /// Range updates rejected by the innovation gate.
    pub fn gated_relative(&self) -> u64 {
        self.gated_relative
    }
    pub fn skipped_absent_maps(&self) -> u64 {
        self.skipped_absent_maps
    }
    pub fn log(&self) -> &[UpdateRecord] {
        &self.log
    }
    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }
    pub fn zu_events(&self) -> &[ZuInfo] {
        &self.zu_events
    }
    pub fn set_zu_enabled(&mut self, on: bool) {
        self.cfg.zu_enabled = on;
    }

    /// True while ZU conditions hold at the agent's latest time.
    pub fn zu_active(&self) -> bool {
        self.cfg.zu_enabled && detect_stationary(&self.motion, self.last_t, self.cfg.stop_policy.dwell)
    }

    /// Returns and clears "a ZU was applied" and "a relative update with this
    /// peer was installed" since the previous call.
    pub fn take_flags(&mut self) -> (bool, Option<RobotId>) {
        (std::mem::take(&mut self.zu_flag), self.rel_flag.take())
    }

    /// Overrides the initial belief, e.g. when seeding a scenario.
    pub fn reset_belief(&mut self, nav: NavState, p0: Mat15, biases: ImuBiases) {
        self.nav = nav;
        self.err = ErrorState::zero();
        self.biases = biases;
        self.belief = BeliefBlock::new(self.cfg.id, p0, self.cfg.peers.iter().copied());
    }

    /// Processes one event. Stale events are dropped (and counted) with
    /// [`Error::StaleMessage`]; other errors leave the agent consistent.
    pub fn step(&mut self, event: AgentEvent) -> Result<Vec<Outbound>> {
        if event.t < self.last_t {
            self.stale_dropped += 1;
            return Err(Error::StaleMessage {
                robot: self.cfg.id,
                t: event.t,
                last: self.last_t,
            });
        }
        self.last_t = event.t;
        let mut out = Vec::new();
        match event.kind {
            AgentEventKind::PeerRequest { from } => self.on_request(event.t, from, &mut out),
            AgentEventKind::PeerBelief(payload) => self.on_belief(event.t, payload, &mut out)?,
            AgentEventKind::PeerPosterior(payload) => self.on_posterior(event.t, payload, &mut out)?,
            AgentEventKind::PeerAbort { from } => self.on_abort(from, &mut out)?,
            AgentEventKind::RangeDetected { peer, meas } => {
                if self.txn.is_some() {
                    self.busy_dropped += 1;
                    return Err(Error::Busy { robot: self.cfg.id });
                }
                self.freeze(event.t, Txn::Detector { peer, meas });
                out.push(Outbound::Request { to: peer });
            }
            kind => {
                let ev = AgentEvent { t: event.t, kind };
                if self.txn.is_some() {
                    self.buffer.push_back(ev);
                } else {
                    self.handle_local(ev, &mut out)?;
                }
            }
        }
        Ok(out)
    }

    fn record_op(&mut self, t: f64, op: AuditOp) {
        if self.cfg.audit {
            self.audit.push(AuditEntry { t, op });
        }
    }

    fn freeze(&mut self, t: f64, txn: Txn) {
        self.txn = Some(txn);
        self.record_op(t, AuditOp::Freeze);
    }

    fn unfreeze(&mut self, out: &mut Vec<Outbound>) -> Result<()> {
        self.txn = None;
        self.record_op(self.last_t, AuditOp::Unfreeze);
        while let Some(ev) = self.buffer.pop_front() {
            self.handle_local(ev, out)?;
        }
        Ok(())
    }

    fn handle_local(&mut self, ev: AgentEvent, out: &mut Vec<Outbound>) -> Result<()> {
        let t = ev.t;
        match ev.kind {
            AgentEventKind::ImuTick(imu) => self.on_imu(t, &imu, out)?,
            AgentEventKind::EncoderTick { speed } => {
                self.motion.encoder_speed = speed;
                self.refresh_motion(t);
                self.odometry_update(t, speed)?;
            }
            AgentEventKind::GnssTick { v, r } => self.gnss_update(t, &v, &r)?,
            AgentEventKind::StopCommand => {
                self.motion.cmd_vel_zero = true;
                self.refresh_motion(t);
            }
            AgentEventKind::ResumeCommand => {
                self.motion.cmd_vel_zero = false;
                self.refresh_motion(t);
                // A stop we asked for is over once the controller moves again.
                self.own_stop = OwnStop::Moving;
            }
            other => unreachable!("not a local event: {other:?}"),
        }
        Ok(())
    }

    fn refresh_motion(&mut self, t: f64) {
        let was = self.motion.stationary_since;
        self.motion.refresh(t, self.cfg.encoder_eps);
        match (was, self.motion.stationary_since) {
            (None, Some(since)) => {
                self.next_zu_at = Some(since + self.cfg.stop_policy.dwell);
                self.gyro_window.clear();
            }
            (Some(_), None) => {
                self.next_zu_at = None;
                self.gyro_window.clear();
            }
            _ => {}
        }
    }

    fn on_imu(&mut self, t: f64, imu: &ImuSample, out: &mut Vec<Outbound>) -> Result<()> {
        let c_minus = self.nav.c_bn;
        let a_corr = imu.accel - self.biases.accel;
        self.nav = mechanize(&self.nav, imu, &self.biases);
        self.nav.t = t;
        let phi = build_phi(&build_f(&c_minus, &a_corr), imu.dt);
        let q = build_q(&self.cfg.noise, imu.dt);
        self.belief.propagate(&phi, &q);
        self.err = ErrorState(phi * self.err.0);
        self.record_op(t, AuditOp::Propagate);

        if self.motion.stationary_since.is_some() {
            self.gyro_window.push(imu.gyro - self.biases.gyro);
        } else if !self.motion.cmd_vel_zero {
            self.history.motion_since_zu += imu.dt;
        }

        if self.cfg.zu_enabled {
            if let Some(due) = self.next_zu_at {
                if t >= due - 1e-9 && detect_stationary(&self.motion, t, self.cfg.stop_policy.dwell) {
                    self.zero_velocity_update(t)?;
                    self.next_zu_at = Some(due + self.cfg.stop_policy.dwell);
                    self.after_zu(out);
                }
            }
            if self.own_stop == OwnStop::Moving
                && !self.motion.cmd_vel_zero
                && stop_decision(&self.belief.p, &self.cfg.stop_policy, &self.history)
                    == StopDecision::IssueStop
            {
                self.own_stop = OwnStop::Stopping;
                out.push(Outbound::RequestStop);
            }
        }
        Ok(())
    }

    fn after_zu(&mut self, out: &mut Vec<Outbound>) {
        self.history.motion_since_zu = 0.0;
        let policy = &self.cfg.stop_policy;
        if policy.mode == StopMode::AutoThenPeriodic
            && !self.history.periodic_active
            && max_position_variance(&self.belief.p) > policy.cov_threshold
        {
            self.history.periodic_active = true;
        }
        if self.own_stop == OwnStop::Stopping {
            self.own_stop = OwnStop::Moving;
            out.push(Outbound::RequestResume);
        }
    }

    fn private<const K: usize>(
        &mut self,
        t: f64,
        kind: UpdateKind,
        h: &crate::private::Jacobian<K>,
        z: &nalgebra::SVector<f64, K>,
        r: &nalgebra::SMatrix<f64, K, K>,
    ) -> Result<()> {
        let before = self.belief.p.trace();
        let innovation = z - h * self.err.0;
        let (belief, err) = apply_private(&self.belief, &self.err, h, z, r, self.cfg.cross_update)?;
        let (nav, err, biases) = fold_correction(&self.nav, &err, &self.biases);
        self.belief = belief;
        self.nav = nav;
        self.err = err;
        self.biases = biases;
        self.record_op(t, AuditOp::Update(kind));
        self.log.push(UpdateRecord {
            t,
            robot_id: self.cfg.id,
            update_kind: kind,
            innovation_norm: innovation.norm(),
            trace_p_before: before,
            trace_p_after: self.belief.p.trace(),
            peer: None,
        });
        Ok(())
    }

    fn odometry_update(&mut self, t: f64, speed: f64) -> Result<()> {
        let v_nav = self.nav.c_bn * Vec3::new(speed, 0.0, 0.0);
        let z = innovation_odomvel(&v_nav, &self.nav);
        let s = self.cfg.odom_sigma;
        let r = r_from_sigmas([s, s, self.cfg.odom_vertical_sigma]);
        let h = if self.cfg.odom_attitude_coupling {
            h_odomvel_coupled(&v_nav)
        } else {
            h_odomvel()
        };
        self.private(t, UpdateKind::Odometry, &h, &z, &r)
    }

    fn gnss_update(&mut self, t: f64, v: &Vec3, r: &Vec3) -> Result<()> {
        let z = innovation_posvel(v, r, &self.nav);
        let (sv, sr) = (self.cfg.gnss_vel_sigma, self.cfg.gnss_pos_sigma);
        let rm = r_from_sigmas([sv, sv, sv, sr, sr, sr]);
        self.private(t, UpdateKind::Gnss, &h_posvel(), &z, &rm)
    }

    fn zero_velocity_update(&mut self, t: f64) -> Result<()> {
        let omega = if self.gyro_window.is_empty() {
            Vec3::zeros()
        } else {
            self.gyro_window.iter().sum::<Vec3>() / self.gyro_window.len() as f64
        };
        self.gyro_window.clear();
        let v_before = self.nav.v;
        let z = zupt_innovation(&omega, &self.nav.v);
        let (sg, sv) = (self.cfg.zupt_gyro_sigma, self.cfg.zupt_vel_sigma);
        let r = r_from_sigmas([sg, sg, sg, sv, sv, sv]);
        self.private(t, UpdateKind::Zupt, &h_zupt(), &z, &r)?;
        let p = &self.belief.p;
        self.zu_events.push(ZuInfo {
            t,
            v_before,
            v_after: self.nav.v,
            biases_after: self.biases,
            bias_sigma: std::array::from_fn(|i| p[(9 + i, 9 + i)].max(0.0).sqrt()),
        });
        self.zu_flag = true;
        Ok(())
    }

    fn on_request(&mut self, t: f64, from: RobotId, out: &mut Vec<Outbound>) {
        let sigma = match (&self.txn, self.belief.sigma.get(&from)) {
            (None, Some(s)) => *s,
            _ => {
                self.busy_dropped += 1;
                out.push(Outbound::Abort { to: from });
                return;
            }
        };
        let payload = BeliefPayload::new(self.cfg.id, t, &self.err.0, &self.belief.p, &sigma, &self.nav);
        self.freeze(t, Txn::Responder { peer: from });
        out.push(Outbound::Belief {
            to: from,
            payload: Box::new(payload),
        });
    }

    fn on_belief(&mut self, t: f64, payload: BeliefPayload, out: &mut Vec<Outbound>) -> Result<()> {
        let (peer, meas) = match &self.txn {
            Some(Txn::Detector { peer, meas }) if *peer == payload.sender_id => (*peer, *meas),
            _ => {
                return Err(Error::ProtocolViolation {
                    robot: self.cfg.id,
                    reason: format!("unexpected belief from robot {}", payload.sender_id),
                })
            }
        };
        match self.detector_compute(t, peer, &meas, &payload) {
            Ok(reply) => out.push(Outbound::Posterior {
                to: peer,
                payload: Box::new(reply),
            }),
            Err(e @ Error::RangeGated { .. }) => {
                log::debug!("robot {}: range to {peer} rejected: {e}", self.cfg.id);
                self.gated_relative += 1;
                out.push(Outbound::Abort { to: peer });
            }
            Err(e) => {
                log::warn!("robot {}: relative update with {peer} failed: {e}", self.cfg.id);
                self.failed_relative += 1;
                out.push(Outbound::Abort { to: peer });
            }
        }
        self.unfreeze(out)
    }

    fn detector_compute(
        &mut self,
        t: f64,
        peer: RobotId,
        meas: &RangeMeasurement,
        payload: &BeliefPayload,
    ) -> Result<PosteriorPayload> {
        let mut peer_belief = BeliefBlock::new(peer, payload.p()?, []);
        peer_belief.sigma.insert(self.cfg.id, payload.sigma()?);
        let peer_err = ErrorState(payload.x_err()?);
        let peer_nav = payload.nav_state.to_state(t);

        let coupled = couple(&self.belief, &self.err, &peer_belief, &peer_err)?;
        let upd = relative_update(&coupled, meas, &self.nav, &peer_nav)?;
        if let Some(gate) = self.cfg.range_nis_gate {
            if upd.nis > gate {
                return Err(Error::RangeGated { nis: upd.nis, gate });
            }
        }
        let (mine, theirs) = decompose(&upd.coupled);
        self.install(t, peer, &mine, upd.innovation);
        Ok(PosteriorPayload {
            sender_id: self.cfg.id,
            timestamp: t,
            x_err: theirs.err.0.iter().copied().collect(),
            p: mat_to_row_major(&theirs.p),
            sigma_toward_sender: mat_to_row_major(&theirs.sigma_toward_peer),
            innovation: upd.innovation,
        })
    }

    fn install(&mut self, t: f64, peer: RobotId, side: &SidePosterior, innovation: f64) {
        let before = self.belief.p.trace();
        let (belief, err, skipped) = install_side(&self.belief, side, peer, self.cfg.absent_order);
        if skipped {
            self.skipped_absent_maps += 1;
        }
        let (nav, err, biases) = fold_correction(&self.nav, &err, &self.biases);
        self.belief = belief;
        self.nav = nav;
        self.err = err;
        self.biases = biases;
        self.rel_flag = Some(peer);
        self.record_op(t, AuditOp::Update(UpdateKind::Range));
        self.log.push(UpdateRecord {
            t,
            robot_id: self.cfg.id,
            update_kind: UpdateKind::Range,
            innovation_norm: innovation.abs(),
            trace_p_before: before,
            trace_p_after: self.belief.p.trace(),
            peer: Some(peer),
        });
    }

    fn on_posterior(&mut self, t: f64, payload: PosteriorPayload, out: &mut Vec<Outbound>) -> Result<()> {
        let peer = match &self.txn {
            Some(Txn::Responder { peer }) if *peer == payload.sender_id => *peer,
            _ => {
                return Err(Error::ProtocolViolation {
                    robot: self.cfg.id,
                    reason: format!("posterior from robot {} while not awaiting it", payload.sender_id),
                })
            }
        };
        let side = SidePosterior {
            p: payload.p()?,
            err: ErrorState(payload.x_err()?),
            sigma_toward_peer: payload.sigma()?,
        };
        self.install(t, peer, &side, payload.innovation);
        self.unfreeze(out)
    }

    fn on_abort(&mut self, from: RobotId, out: &mut Vec<Outbound>) -> Result<()> {
        match &self.txn {
            Some(Txn::Responder { peer }) | Some(Txn::Detector { peer, .. }) if *peer == from => {
                self.unfreeze(out)
            }
            _ => Err(Error::ProtocolViolation {
                robot: self.cfg.id,
                reason: format!("abort from robot {from} outside a transaction"),
            }),
        }
    }
}

/// Delivers agent messages between agents synchronously until quiescent.
///
/// Controller requests (`RequestStop`/`RequestResume`) are returned to the
/// caller tagged with the robot that issued them.
pub fn deliver(
    agents: &mut [Agent],
    t: f64,
    from: RobotId,
    msgs: Vec<Outbound>,
) -> Result<Vec<(RobotId, Outbound)>> {
    let mut queue: VecDeque<(RobotId, Outbound)> = msgs.into_iter().map(|m| (from, m)).collect();
    let mut controller = Vec::new();
    while let Some((sender, msg)) = queue.pop_front() {
        let (to, kind) = match msg {
            Outbound::Request { to } => (to, AgentEventKind::PeerRequest { from: sender }),
            Outbound::Belief { to, payload } => (to, AgentEventKind::PeerBelief(*payload)),
            Outbound::Posterior { to, payload } => (to, AgentEventKind::PeerPosterior(*payload)),
            Outbound::Abort { to } => (to, AgentEventKind::PeerAbort { from: sender }),
            m @ (Outbound::RequestStop | Outbound::RequestResume) => {
                controller.push((sender, m));
                continue;
            }
        };
        let agent = agents
            .iter_mut()
            .find(|a| a.id() == to)
            .ok_or_else(|| Error::ProtocolViolation {
                robot: sender,
                reason: format!("no robot {to}"),
            })?;
        for m in agent.step(AgentEvent::new(t, kind))? {
            queue.push_back((to, m));
        }
    }
    Ok(controller)
}
