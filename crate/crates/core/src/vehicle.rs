//! Vehicle agent: local recording, login, streaming on two timers, the
//! accident flow and the final terminate report.
//!
//! The agent is sans-IO. The owner calls [`VehicleAgent::poll`] with the
//! current logical time (or exactly at [`VehicleAgent::next_deadline`]),
//! hands it inbound datagrams through [`VehicleAgent::handle_datagram`], and
//! drains [`VehicleAgent::drain_transmits`]. Capture always happens before
//! the send of the same chunk: a frame or sample only enters a send buffer
//! after the local recorder accepted it.

use std::collections::VecDeque;
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::net::{ServerPorts, Transmit};
use crate::protocol::codec::MAX_PAYLOAD;
use crate::protocol::{csv, encode, ChannelId, Message, MsgType, Packet, RejectReason, TerminateReason};
use crate::recorder::{AccidentAction, Recorder, RecorderConfig, RecorderError, TickOutcome};
use crate::sim::{
    detect_vcd, detect_vtd, AccidentKind, FrameSource, GeoPoint, SimConfig, SimConfigError, Simulator,
};
use crate::store::SegmentStore;
use crate::Millis;

pub const LOGIN_BACKOFF_INITIAL_MS: Millis = 1_000;
pub const LOGIN_BACKOFF_MAX_MS: Millis = 32_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub vehicle_id: u32,
    pub credentials: String,
    /// Any address on the server host; ports come from `ports`.
    pub server: SocketAddr,
    pub ports: ServerPorts,
    pub recorder: RecorderConfig,
    pub sim: SimConfig,
    pub video_send_period: Millis,
    pub data_send_period: Millis,
    /// Simulated ms per real ms; only the socket runtime uses it.
    pub time_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            vehicle_id: 1,
            credentials: String::new(),
            server: SocketAddr::from(([127, 0, 0, 1], 7000)),
            ports: ServerPorts::default(),
            recorder: RecorderConfig::default(),
            data_send_period: sim.sample_period,
            sim,
            video_send_period: 33,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("already-started")]
    AlreadyStarted,
    #[error("agent not started")]
    NotStarted,
    #[error("operation not allowed in phase {0:?}")]
    InvalidPhase(Phase),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimConfigError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.vehicle_id == 0 {
            return bad("vehicle_id must be non-zero");
        }
        if self.video_send_period == 0 || self.data_send_period == 0 {
            return bad("send periods must be > 0");
        }
        if self.time_scale.is_nan() || self.time_scale <= 0.0 {
            return bad("time_scale must be > 0");
        }
        if self.recorder.segment_ms == 0 {
            return bad("segment duration must be > 0");
        }
        if self.recorder.fps == 0 || self.recorder.frame_bytes == 0 {
            return bad("fps and frame_bytes must be > 0");
        }
        if self.recorder.frame_bytes > MAX_PAYLOAD {
            return bad("frame_bytes exceeds one datagram (payload-too-large)");
        }
        self.sim.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Starting,
    RecordingLocal,
    AwaitingRequest,
    Streaming,
    Terminated,
}

/// Stand-in for the help SMS: a structured record instead of a GSM message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmsRecord {
    pub t: Millis,
    pub vehicle_id: u32,
    pub kind: AccidentKind,
    pub lat: f64,
    pub lon: f64,
}

impl SmsRecord {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{:.6},{:.6}", self.t, self.vehicle_id, self.kind, self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentStats {
    pub frames_captured: u64,
    pub samples_recorded: u64,
    pub video_sent: u64,
    pub data_sent: u64,
    pub control_sent: u64,
    pub login_attempts: u64,
    pub bad_datagrams: u64,
}

#[derive(Debug)]
struct Login {
    next_at: Millis,
    backoff: Millis,
}

#[derive(Debug)]
pub struct VehicleAgent<S> {
    cfg: AgentConfig,
    phase: Phase,
    recorder: Option<Recorder<S>>,
    sim: Simulator,
    frames: FrameSource,
    session_start: Millis,
    last_gps: GeoPoint,
    sms_log: Vec<SmsRecord>,
    accident: Option<(AccidentKind, Millis)>,
    login: Option<Login>,
    rejected: Option<RejectReason>,
    video_buf: VecDeque<(Millis, Vec<u8>)>,
    data_buf: VecDeque<(Millis, String)>,
    video_seq: u64,
    data_seq: u64,
    next_video_send: Millis,
    next_data_send: Millis,
    terminate_reason: Option<TerminateReason>,
    outbox: Vec<Transmit>,
    stats: AgentStats,
}

impl<S: SegmentStore> VehicleAgent<S> {
    pub fn new(cfg: AgentConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let sim = Simulator::new(cfg.sim.clone())?;
        let frames = FrameSource::new(cfg.sim.seed, cfg.recorder.fps, cfg.recorder.frame_bytes, 0);
        Ok(Self {
            phase: Phase::Starting,
            recorder: None,
            last_gps: cfg.sim.route.first().copied().unwrap_or_default(),
            sim,
            frames,
            session_start: 0,
            sms_log: Vec::new(),
            accident: None,
            login: None,
            rejected: None,
            video_buf: VecDeque::new(),
            data_buf: VecDeque::new(),
            video_seq: 0,
            data_seq: 0,
            next_video_send: 0,
            next_data_send: 0,
            terminate_reason: None,
            outbox: Vec::new(),
            stats: AgentStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn vehicle_id(&self) -> u32 {
        self.cfg.vehicle_id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn recorder(&self) -> Option<&Recorder<S>> {
        self.recorder.as_ref()
    }

    pub fn recorder_mut(&mut self) -> Option<&mut Recorder<S>> {
        self.recorder.as_mut()
    }

    pub fn last_gps(&self) -> GeoPoint {
        self.last_gps
    }

    pub fn sms_log(&self) -> &[SmsRecord] {
        &self.sms_log
    }

    pub fn accident(&self) -> Option<(AccidentKind, Millis)> {
        self.accident
    }

    pub fn rejected(&self) -> Option<RejectReason> {
        self.rejected
    }

    pub fn stats(&self) -> AgentStats {
        self.stats
    }

    pub fn terminated_by_accident(&self) -> bool {
        self.terminate_reason == Some(TerminateReason::Accident)
    }

    pub fn drain_transmits(&mut self) -> Vec<Transmit> {
        std::mem::take(&mut self.outbox)
    }

    /// Starts local recording (unconditionally) and begins the login
    /// exchange.
    pub fn start(&mut self, stores: [S; 2], now: Millis) -> Result<(), AgentError> {
        if self.phase != Phase::Starting {
            return Err(AgentError::AlreadyStarted);
        }
        let rcfg = RecorderConfig {
            vehicle_id: self.cfg.vehicle_id,
            ..self.cfg.recorder.clone()
        };
        self.recorder = Some(Recorder::init(rcfg, stores, now)?);
        self.session_start = now;
        self.sim = Simulator::starting_at(self.cfg.sim.clone(), now)?;
        self.frames = FrameSource::new(self.cfg.sim.seed, self.cfg.recorder.fps, self.cfg.recorder.frame_bytes, now);
        self.phase = Phase::RecordingLocal;
        info!(vehicle = self.cfg.vehicle_id, now, "local recording started");
        self.send_login(now);
        self.login = Some(Login {
            next_at: now + LOGIN_BACKOFF_INITIAL_MS,
            backoff: LOGIN_BACKOFF_INITIAL_MS,
        });
        self.phase = Phase::AwaitingRequest;
        Ok(())
    }

    fn capturing(&self) -> bool {
        self.recorder.as_ref().is_some_and(|r| !r.is_stopped())
    }

    /// Earliest time at which [`poll`](Self::poll) has work to do.
    pub fn next_deadline(&self) -> Option<Millis> {
        let mut next: Option<Millis> = None;
        let mut consider = |t: Millis| next = Some(next.map_or(t, |n: Millis| n.min(t)));
        if self.phase == Phase::Terminated {
            return None;
        }
        if self.capturing() {
            consider(self.sim.next_sample_at());
            consider(self.frames.next_frame_at());
            if let Some(t) = self.recorder.as_ref().and_then(|r| r.pending_tick()) {
                consider(t);
            }
        }
        if self.phase == Phase::Streaming {
            consider(self.next_video_send);
            consider(self.next_data_send);
        }
        if let Some(l) = &self.login {
            consider(l.next_at);
        }
        next
    }

    /// Processes every internal event due at or before `now`, in time order.
    pub fn poll(&mut self, now: Millis) {
        while let Some(t) = self.next_deadline().filter(|&t| t <= now) {
            self.step(t);
        }
    }

    fn step(&mut self, t: Millis) {
        // Sample first, so an accident detected at `t` precedes a tick at `t`.
        let mut sample = None;
        if self.capturing() && self.sim.next_sample_at() == t {
            let s = self.sim.next_sample();
            self.last_gps = s.fix();
            let detected = if detect_vtd(&s, self.cfg.sim.theta_crit) {
                Some(AccidentKind::Turnover)
            } else if detect_vcd(&s) {
                Some(AccidentKind::Crash)
            } else {
                None
            };
            match detected.filter(|_| self.accident.is_none()) {
                Some(kind) => {
                    // The detecting reading is the last one recorded.
                    self.record_sample(&s);
                    self.handle_accident(kind, t);
                }
                None => sample = Some(s),
            }
        }

        if self.recorder.as_ref().and_then(|r| r.pending_tick()) == Some(t) {
            let outcome = self
                .recorder
                .as_mut()
                .unwrap()
                .on_tick(t)
                .expect("tick at its due time");
            debug!(vehicle = self.cfg.vehicle_id, t, ?outcome, "tick");
            if matches!(outcome, TickOutcome::Stopped { .. }) {
                self.finish(t, TerminateReason::Accident);
            }
        }

        if let Some(s) = sample {
            self.record_sample(&s);
        }

        while self.capturing() && self.frames.next_frame_at() == t {
            let f = self.frames.make_frame();
            self.stats.frames_captured += 1;
            let rec = self.recorder.as_mut().unwrap();
            if rec.append_frame(f.t, &f.payload).is_ok() && self.phase == Phase::Streaming {
                self.video_buf.push_back((f.t, f.payload));
            }
        }

        if self.phase == Phase::Streaming {
            if self.next_data_send == t {
                self.flush_data();
                self.next_data_send += self.cfg.data_send_period;
            }
            if self.next_video_send == t {
                self.flush_video();
                self.next_video_send += self.cfg.video_send_period;
            }
        }

        if self.login.as_ref().is_some_and(|l| l.next_at == t) {
            self.send_login(t);
            let l = self.login.as_mut().unwrap();
            l.backoff = (l.backoff * 2).min(LOGIN_BACKOFF_MAX_MS);
            l.next_at = t + l.backoff;
        }
    }

    fn record_sample(&mut self, s: &crate::sim::TelemetrySample) {
        let Some(rec) = self.recorder.as_mut() else {
            return;
        };
        if rec.append_telemetry(s).is_ok() {
            self.stats.samples_recorded += 1;
            if self.phase == Phase::Streaming {
                self.data_buf.push_back((s.t, csv::format_line(s, self.cfg.vehicle_id)));
            }
        }
    }

    fn server_addr(&self, channel: ChannelId) -> SocketAddr {
        self.cfg.ports.addr(self.cfg.server, channel)
    }

    fn send(&mut self, packet: Packet) {
        match encode(&packet) {
            Ok(bytes) => {
                match packet.channel {
                    ChannelId::VehicleVideoIn => self.stats.video_sent += 1,
                    ChannelId::VehicleDataIn => self.stats.data_sent += 1,
                    _ => self.stats.control_sent += 1,
                }
                self.outbox.push(Transmit {
                    channel: packet.channel,
                    peer: self.server_addr(packet.channel),
                    bytes,
                });
            }
            Err(e) => warn!(vehicle = self.cfg.vehicle_id, error = %e, "dropping unencodable packet"),
        }
    }

    fn send_control(&mut self, t: Millis, message: Message) {
        self.send(Packet::control(self.cfg.vehicle_id, 0, t, message));
    }

    fn send_login(&mut self, t: Millis) {
        self.stats.login_attempts += 1;
        self.send_control(
            t,
            Message::Login {
                credentials: self.cfg.credentials.clone(),
            },
        );
        self.send_control(
            t,
            Message::Running {
                session_start: self.session_start,
                segment_ms: self.cfg.recorder.segment_ms,
            },
        );
    }

    fn flush_video(&mut self) {
        while let Some((t, payload)) = self.video_buf.pop_front() {
            let seq = self.video_seq;
            self.video_seq += 1;
            self.send(Packet {
                channel: ChannelId::VehicleVideoIn,
                vehicle_id: self.cfg.vehicle_id,
                user_id: 0,
                seq,
                t,
                message: Message::Video { payload },
            });
        }
    }

    fn flush_data(&mut self) {
        while let Some((t, line)) = self.data_buf.pop_front() {
            let seq = self.data_seq;
            self.data_seq += 1;
            self.send(Packet {
                channel: ChannelId::VehicleDataIn,
                vehicle_id: self.cfg.vehicle_id,
                user_id: 0,
                seq,
                t,
                message: Message::Data { line },
            });
        }
    }

    pub fn handle_datagram(&mut self, now: Millis, bytes: &[u8]) {
        let packet = match crate::protocol::decode(bytes) {
            Ok(p) if p.vehicle_id == self.cfg.vehicle_id && p.channel == ChannelId::Control => p,
            Ok(_) | Err(_) => {
                self.stats.bad_datagrams += 1;
                return;
            }
        };
        match packet.message {
            Message::StreamRequest => self.on_stream_request(now),
            Message::Ack { of: MsgType::Login } => debug!(vehicle = self.cfg.vehicle_id, "login acknowledged"),
            Message::Ack { .. } => {}
            // Running can overtake Login on the wire; the retry covers it.
            Message::Reject {
                reason: RejectReason::NotLoggedIn | RejectReason::Malformed,
            } => {}
            Message::Reject { reason } => {
                warn!(vehicle = self.cfg.vehicle_id, %reason, "server rejected login");
                self.rejected = Some(reason);
                self.login = None;
            }
            _ => self.stats.bad_datagrams += 1,
        }
    }

    pub fn on_stream_request(&mut self, now: Millis) {
        match self.phase {
            Phase::AwaitingRequest => {
                self.login = None;
                self.phase = Phase::Streaming;
                self.next_video_send = now + self.cfg.video_send_period;
                self.next_data_send = now + self.cfg.data_send_period;
                info!(vehicle = self.cfg.vehicle_id, now, "streaming to server");
            }
            Phase::Streaming => self.send_control(
                now,
                Message::Ack {
                    of: MsgType::StreamRequest,
                },
            ),
            _ => {}
        }
    }

    /// Accident entry point. Detection from the simulated sensors calls this
    /// internally; it is public so a supervisor can inject one.
    pub fn on_accident(&mut self, kind: AccidentKind, now: Millis) -> Result<(), AgentError> {
        match self.phase {
            Phase::AwaitingRequest | Phase::Streaming => {
                self.handle_accident(kind, now);
                Ok(())
            }
            Phase::Terminated if self.accident.is_some() => Ok(()),
            p => Err(AgentError::InvalidPhase(p)),
        }
    }

    fn handle_accident(&mut self, kind: AccidentKind, now: Millis) {
        if self.accident.is_some() {
            return;
        }
        let Some(rec) = self.recorder.as_mut() else {
            return;
        };
        let actions = match rec.on_accident(now) {
            Ok(Some(a)) => a,
            Ok(None) | Err(_) => return,
        };
        self.accident = Some((kind, now));
        info!(vehicle = self.cfg.vehicle_id, now, %kind, "accident detected");
        let fix = self.last_gps;
        for action in actions {
            match action {
                // Sensor recording stop is enforced by the recorder itself.
                AccidentAction::CaptureGps | AccidentAction::StopSensorRecording => {}
                AccidentAction::NotifyServer => self.send_control(now, Message::AccidentNotify { kind, fix }),
                AccidentAction::SendHelpSms => self.sms_log.push(SmsRecord {
                    t: now,
                    vehicle_id: self.cfg.vehicle_id,
                    kind,
                    lat: fix.lat,
                    lon: fix.lon,
                }),
            }
        }
        if self.recorder.as_ref().is_some_and(|r| r.is_stopped()) {
            self.finish(now, TerminateReason::Accident);
        }
    }

    /// Sends whatever is buffered, then the terminate report.
    fn finish(&mut self, now: Millis, reason: TerminateReason) {
        if self.phase == Phase::Terminated {
            return;
        }
        if self.phase == Phase::Streaming {
            self.flush_data();
            self.flush_video();
        }
        self.login = None;
        self.send_control(now, Message::TerminateReport { reason });
        self.terminate_reason = Some(reason);
        self.phase = Phase::Terminated;
        info!(vehicle = self.cfg.vehicle_id, now, ?reason, "terminated");
    }

    /// Vehicle stopped normally. A second call is a no-op.
    pub fn stop(&mut self, now: Millis) -> Result<(), AgentError> {
        if self.phase == Phase::Terminated {
            return Ok(());
        }
        if let Some(rec) = self.recorder.as_mut() {
            rec.stop(now)?;
        }
        let reason = if self.accident.is_some() {
            TerminateReason::Accident
        } else {
            TerminateReason::Stopped
        };
        self.finish(now, reason);
        Ok(())
    }
}
