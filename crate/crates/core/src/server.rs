//! ITS centre: registries, control dispatch, server-side recording of each
//! vehicle's streams, forwarding to subscribed users and replay of the last
//! recorded session.
//!
//! Sans-IO like the other parties. The transport passes each datagram in with
//! the channel of the socket it arrived on and the sender address, and sends
//! the queued [`Transmit`]s from the socket their `channel` names.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::container;
use crate::net::Transmit;
use crate::protocol::{
    csv, decode, encode, ChannelId, Message, MsgType, Packet, RejectReason, ReorderBuffer, ReorderConfig,
};
use crate::recorder::{Recorder, RecorderConfig, Segment};
use crate::registry::{PartyKind, Registration, RegistryError, RegistryStore};
use crate::sim::{AccidentKind, GeoPoint};
use crate::store::{FileStore, MemStore, SegmentStore};
use crate::Millis;

pub const DEFAULT_D_CRIT_M: f64 = 10.0;
pub const DEFAULT_PROXIMITY_WINDOW_MS: Millis = 1_000;

/// Opens the two segment stores of one recording session.
pub trait StoreFactory {
    type Store: SegmentStore;
    fn open(&mut self, vehicle_id: u32, session: u32, index: u8) -> io::Result<Self::Store>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MemStores;

impl StoreFactory for MemStores {
    type Store = MemStore;

    fn open(&mut self, _: u32, _: u32, _: u8) -> io::Result<MemStore> {
        Ok(MemStore::new())
    }
}

/// `<root>/<vehicle_id>/session-<n>/seg<i>.ivsg`
#[derive(Debug, Clone)]
pub struct FileStores {
    pub root: PathBuf,
}

impl FileStores {
    pub fn path(&self, vehicle_id: u32, session: u32, index: u8) -> PathBuf {
        self.root
            .join(vehicle_id.to_string())
            .join(format!("session-{session}"))
            .join(format!("seg{index}.ivsg"))
    }
}

impl StoreFactory for FileStores {
    type Store = FileStore;

    fn open(&mut self, vehicle_id: u32, session: u32, index: u8) -> io::Result<FileStore> {
        let path = self.path(vehicle_id, session, index);
        std::fs::create_dir_all(path.parent().expect("segment path has a parent"))?;
        FileStore::create(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    /// Server-side segment duration; `None` follows the vehicle's.
    pub segment_ms: Option<Millis>,
    pub reorder: ReorderConfig,
    pub d_crit_m: f64,
    pub proximity_window_ms: Millis,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            segment_ms: None,
            reorder: ReorderConfig::default(),
            d_crit_m: DEFAULT_D_CRIT_M,
            proximity_window_ms: DEFAULT_PROXIMITY_WINDOW_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleStatus {
    Registered,
    Running,
    Stopped,
    Accident,
}

impl VehicleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleStatus::Registered => "registered",
            VehicleStatus::Running => "running",
            VehicleStatus::Stopped => "stopped",
            VehicleStatus::Accident => "accident",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentLogEntry {
    pub t: Millis,
    pub vehicle_id: u32,
    pub kind: AccidentKind,
    pub lat: f64,
    pub lon: f64,
}

impl AccidentLogEntry {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{:.6},{:.6}", self.t, self.vehicle_id, self.kind, self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityWarning {
    pub t: Millis,
    pub vehicles: (u32, u32),
    pub distance_m: f64,
}

/// One line of the control event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerEvent {
    pub t: Millis,
    pub event: String,
    pub vehicle_id: u32,
    pub user_id: u32,
    pub detail: String,
}

impl fmt::Display for ServerEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} event={} vehicle={} user={}", self.t, self.event, self.vehicle_id, self.user_id)?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ServerStats {
    pub datagrams: u64,
    pub bad_datagrams: u64,
    pub wrong_channel: u64,
    pub rejects: u64,
    pub dropped_inactive: u64,
    pub recorded_video: u64,
    pub recorded_data: u64,
    pub forwarded: u64,
    pub replayed: u64,
}

/// A recording session whose vehicle has terminated.
#[derive(Debug)]
pub struct LastSegments<S> {
    pub session: u32,
    pub segments: [Segment; 2],
    pub stores: [S; 2],
}

#[derive(Debug)]
struct Streams {
    session_start: Millis,
    video: ReorderBuffer<(Millis, Vec<u8>)>,
    data: ReorderBuffer<(Millis, String)>,
}

#[derive(Debug)]
pub struct VehicleEntry<S> {
    pub registration: Registration,
    pub status: VehicleStatus,
    pub peer: Option<SocketAddr>,
    pub logged_in: bool,
    pub session: u32,
    pub last_fix: Option<(Millis, GeoPoint)>,
    recorder: Option<Recorder<S>>,
    streams: Option<Streams>,
    last_segments: Option<LastSegments<S>>,
}

impl<S: SegmentStore> VehicleEntry<S> {
    fn new(registration: Registration) -> Self {
        Self {
            registration,
            status: VehicleStatus::Registered,
            peer: None,
            logged_in: false,
            session: 0,
            last_fix: None,
            recorder: None,
            streams: None,
            last_segments: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.registration.id
    }

    pub fn is_running(&self) -> bool {
        self.recorder.is_some()
    }

    pub fn recorder(&self) -> Option<&Recorder<S>> {
        self.recorder.as_ref()
    }

    pub fn last_segments(&self) -> Option<&LastSegments<S>> {
        self.last_segments.as_ref()
    }

    pub fn last_segments_mut(&mut self) -> Option<&mut LastSegments<S>> {
        self.last_segments.as_mut()
    }
}

#[derive(Debug, Clone)]
pub struct UserEntry {
    pub registration: Registration,
    pub enabled: Option<u32>,
    pub peer: Option<SocketAddr>,
    video_seq: u64,
    data_seq: u64,
    pub forwarded: u64,
}

impl UserEntry {
    fn new(registration: Registration) -> Self {
        Self {
            registration,
            enabled: None,
            peer: None,
            video_seq: 0,
            data_seq: 0,
            forwarded: 0,
        }
    }

    pub fn id(&self) -> u32 {
        self.registration.id
    }
}

pub struct ItsServer<F: StoreFactory> {
    cfg: ServerConfig,
    registry: Box<dyn RegistryStore>,
    factory: F,
    vehicles: BTreeMap<u32, VehicleEntry<F::Store>>,
    users: BTreeMap<u32, UserEntry>,
    accident_log: Vec<AccidentLogEntry>,
    proximity: Vec<ProximityWarning>,
    close_pairs: BTreeSet<(u32, u32)>,
    events: Vec<ServerEvent>,
    outbox: Vec<Transmit>,
    stats: ServerStats,
}

impl<F: StoreFactory> fmt::Debug for ItsServer<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ItsServer")
            .field("vehicles", &self.vehicles.len())
            .field("users", &self.users.len())
            .field("stats", &self.stats)
            .finish()
    }
}

enum Chunk {
    Video(Vec<u8>),
    Data(String),
}

impl<F: StoreFactory> ItsServer<F> {
    /// Loads every registration from `registry`. Running state is not
    /// persisted, so all vehicles come back as registered.
    pub fn new(cfg: ServerConfig, mut registry: Box<dyn RegistryStore>, factory: F) -> Result<Self, RegistryError> {
        let mut server = Self {
            cfg,
            factory,
            vehicles: BTreeMap::new(),
            users: BTreeMap::new(),
            accident_log: Vec::new(),
            proximity: Vec::new(),
            close_pairs: BTreeSet::new(),
            events: Vec::new(),
            outbox: Vec::new(),
            stats: ServerStats::default(),
            registry: Box::new(crate::registry::MemRegistry::new()),
        };
        for r in registry.load()? {
            server.insert(r)?;
        }
        server.registry = registry;
        Ok(server)
    }

    fn insert(&mut self, r: Registration) -> Result<(), RegistryError> {
        match r.kind {
            PartyKind::Vehicle => {
                if self.vehicles.contains_key(&r.id) {
                    return Err(RegistryError::AlreadyRegistered("vehicle", r.id));
                }
                self.vehicles.insert(r.id, VehicleEntry::new(r));
            }
            PartyKind::User => {
                if self.users.contains_key(&r.id) {
                    return Err(RegistryError::AlreadyRegistered("user", r.id));
                }
                self.users.insert(r.id, UserEntry::new(r));
            }
        }
        Ok(())
    }

    pub fn register(
        &mut self,
        kind: PartyKind,
        id: u32,
        credentials: &str,
        links: Vec<u32>,
    ) -> Result<Registration, RegistryError> {
        let taken = match kind {
            PartyKind::Vehicle => self.vehicles.contains_key(&id),
            PartyKind::User => self.users.contains_key(&id),
        };
        if taken {
            return Err(RegistryError::AlreadyRegistered(kind.as_str(), id));
        }
        let r = Registration::new(kind, id, credentials, links);
        self.registry.append(&r)?;
        self.insert(r.clone())?;
        let (vid, uid) = match kind {
            PartyKind::Vehicle => (id, 0),
            PartyKind::User => (0, id),
        };
        self.log(0, "register", vid, uid, String::new());
        Ok(r)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleEntry<F::Store>> {
        self.vehicles.values()
    }

    pub fn vehicle(&self, id: u32) -> Option<&VehicleEntry<F::Store>> {
        self.vehicles.get(&id)
    }

    pub fn vehicle_mut(&mut self, id: u32) -> Option<&mut VehicleEntry<F::Store>> {
        self.vehicles.get_mut(&id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserEntry> {
        self.users.values()
    }

    pub fn user(&self, id: u32) -> Option<&UserEntry> {
        self.users.get(&id)
    }

    pub fn active_vehicles(&self) -> Vec<u32> {
        self.vehicles.values().filter(|v| v.is_running()).map(|v| v.id()).collect()
    }

    pub fn accident_log(&self) -> &[AccidentLogEntry] {
        &self.accident_log
    }

    pub fn proximity_warnings(&self) -> &[ProximityWarning] {
        &self.proximity
    }

    pub fn events(&self) -> &[ServerEvent] {
        &self.events
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    pub fn drain_transmits(&mut self) -> Vec<Transmit> {
        std::mem::take(&mut self.outbox)
    }

    /// Flushes every open server-side recorder.
    pub fn flush(&mut self) -> io::Result<()> {
        for v in self.vehicles.values_mut() {
            if let Some(r) = v.recorder.as_mut() {
                r.flush().map_err(io::Error::other)?;
            }
        }
        Ok(())
    }

    fn log(&mut self, t: Millis, event: &str, vehicle_id: u32, user_id: u32, detail: String) {
        let e = ServerEvent {
            t,
            event: event.to_string(),
            vehicle_id,
            user_id,
            detail,
        };
        info!("{e}");
        self.events.push(e);
    }

    fn send(&mut self, peer: SocketAddr, packet: Packet) {
        match encode(&packet) {
            Ok(bytes) => self.outbox.push(Transmit {
                channel: packet.channel,
                peer,
                bytes,
            }),
            Err(e) => warn!(error = %e, "dropping unencodable packet"),
        }
    }

    fn reply(&mut self, to: SocketAddr, vehicle_id: u32, user_id: u32, t: Millis, message: Message) {
        self.send(to, Packet::control(vehicle_id, user_id, t, message));
    }

    fn reject(&mut self, to: SocketAddr, vehicle_id: u32, user_id: u32, t: Millis, reason: RejectReason) {
        self.stats.rejects += 1;
        self.log(t, "reject", vehicle_id, user_id, format!("reason={reason}"));
        self.reply(to, vehicle_id, user_id, t, Message::Reject { reason });
    }

    /// Entry point for every received datagram.
    pub fn handle_datagram(&mut self, now: Millis, local: ChannelId, from: SocketAddr, bytes: &[u8]) {
        self.stats.datagrams += 1;
        let packet = match decode(bytes) {
            Ok(p) => p,
            Err(e) => {
                self.stats.bad_datagrams += 1;
                debug!(%from, error = %e, "undecodable datagram");
                if local == ChannelId::Control {
                    self.reject(from, 0, 0, now, RejectReason::Malformed);
                }
                return;
            }
        };
        if packet.channel != local {
            self.stats.wrong_channel += 1;
            return;
        }
        match local {
            ChannelId::Control => self.on_control(now, from, packet),
            ChannelId::VehicleVideoIn | ChannelId::VehicleDataIn => self.on_stream(now, packet),
            ChannelId::UserVideoOut | ChannelId::UserDataOut => self.stats.wrong_channel += 1,
        }
    }

    fn on_control(&mut self, now: Millis, from: SocketAddr, p: Packet) {
        let (vid, uid, t) = (p.vehicle_id, p.user_id, p.t);
        match p.message {
            Message::Login { credentials } => self.on_login(from, vid, t, &credentials),
            Message::Running {
                session_start,
                segment_ms,
            } => self.on_running(from, vid, t, session_start, segment_ms),
            Message::TerminateReport { reason } => self.on_terminate(now, from, vid, t, reason),
            Message::AccidentNotify { kind, fix } => self.on_accident_notify(from, vid, t, kind, fix),
            Message::UserEnable { credentials } => self.on_user_enable(from, uid, vid, t, &credentials),
            Message::UserDisable => self.on_user_disable(from, uid, vid, t),
            Message::Ack { .. } => {}
            _ => self.reject(from, vid, uid, t, RejectReason::Malformed),
        }
    }

    fn on_login(&mut self, from: SocketAddr, vid: u32, t: Millis, credentials: &str) {
        let Some(v) = self.vehicles.get_mut(&vid) else {
            return self.reject(from, vid, 0, t, RejectReason::NotRegistered);
        };
        if !v.registration.check(credentials) {
            return self.reject(from, vid, 0, t, RejectReason::BadCredentials);
        }
        let first = !v.logged_in;
        v.logged_in = true;
        v.peer = Some(from);
        if first {
            self.log(t, "login", vid, 0, format!("peer={from}"));
        }
        self.reply(from, vid, 0, t, Message::Ack { of: MsgType::Login });
    }

    fn on_running(&mut self, from: SocketAddr, vid: u32, t: Millis, session_start: Millis, segment_ms: Millis) {
        let Some(v) = self.vehicles.get(&vid) else {
            return self.reject(from, vid, 0, t, RejectReason::NotRegistered);
        };
        if !v.logged_in {
            return self.reject(from, vid, 0, t, RejectReason::NotLoggedIn);
        }
        let same_session = v.streams.as_ref().is_some_and(|s| s.session_start == session_start);
        if !same_session {
            if v.is_running() {
                // A new session replaces one that never sent its terminate report.
                self.close_session(vid, t);
            }
            if let Err(e) = self.open_session(vid, session_start, segment_ms) {
                warn!(vehicle = vid, error = %e, "cannot open server-side segments");
                return;
            }
            let session = self.vehicles[&vid].session;
            self.log(t, "running", vid, 0, format!("session={session} start={session_start}"));
        }
        let v = self.vehicles.get_mut(&vid).unwrap();
        v.peer = Some(from);
        self.reply(from, vid, 0, t, Message::StreamRequest);
    }

    fn open_session(&mut self, vid: u32, session_start: Millis, segment_ms: Millis) -> Result<(), crate::recorder::RecorderError> {
        let session = self.vehicles[&vid].session + 1;
        let stores = [self.factory.open(vid, session, 1)?, self.factory.open(vid, session, 2)?];
        let rcfg = RecorderConfig {
            vehicle_id: vid,
            segment_ms: self.cfg.segment_ms.unwrap_or(segment_ms),
            ..RecorderConfig::default()
        };
        let recorder = Recorder::init(rcfg, stores, session_start)?;
        let v = self.vehicles.get_mut(&vid).unwrap();
        v.session = session;
        v.recorder = Some(recorder);
        v.streams = Some(Streams {
            session_start,
            video: ReorderBuffer::new(self.cfg.reorder, 0),
            data: ReorderBuffer::new(self.cfg.reorder, 0),
        });
        v.status = VehicleStatus::Running;
        v.last_fix = None;
        Ok(())
    }

    /// Drains the reorder buffers, seals the recorder at `t` and keeps its
    /// segments for replay.
    fn close_session(&mut self, vid: u32, t: Millis) {
        let Some(v) = self.vehicles.get_mut(&vid) else {
            return;
        };
        if let Some(mut streams) = v.streams.take() {
            let video = streams.video.flush();
            let data = streams.data.flush();
            v.streams = Some(streams);
            self.ingest_released(vid, video, data, Some(t));
        }
        let v = self.vehicles.get_mut(&vid).unwrap();
        v.streams = None;
        let Some(mut rec) = v.recorder.take() else {
            return;
        };
        while rec.pending_tick().is_some_and(|due| due < t) {
            let due = rec.pending_tick().unwrap();
            let _ = rec.on_tick(due);
        }
        if let Err(e) = rec.stop(t) {
            warn!(vehicle = vid, error = %e, "sealing server-side segments failed");
        }
        let segments = *rec.segments();
        v.last_segments = Some(LastSegments {
            session: v.session,
            segments,
            stores: rec.into_stores(),
        });
        v.status = VehicleStatus::Stopped;
        v.last_fix = None;
        for u in self.users.values_mut().filter(|u| u.enabled == Some(vid)) {
            u.enabled = None;
        }
        self.close_pairs.retain(|&(a, b)| a != vid && b != vid);
    }

    fn on_terminate(
        &mut self,
        _now: Millis,
        from: SocketAddr,
        vid: u32,
        t: Millis,
        reason: crate::protocol::TerminateReason,
    ) {
        let Some(v) = self.vehicles.get(&vid) else {
            return self.reject(from, vid, 0, t, RejectReason::NotRegistered);
        };
        if !v.is_running() {
            // Duplicate report.
            return self.reply(from, vid, 0, t, Message::Ack { of: MsgType::TerminateReport });
        }
        self.close_session(vid, t);
        self.vehicles.get_mut(&vid).unwrap().logged_in = false;
        self.log(t, "terminate", vid, 0, format!("reason={reason:?}").to_lowercase());
        self.reply(from, vid, 0, t, Message::Ack { of: MsgType::TerminateReport });
    }

    fn on_accident_notify(&mut self, from: SocketAddr, vid: u32, t: Millis, kind: AccidentKind, fix: GeoPoint) {
        let Some(v) = self.vehicles.get_mut(&vid) else {
            return self.reject(from, vid, 0, t, RejectReason::NotRegistered);
        };
        // One entry per accident even if the notify is retransmitted.
        let dup = self.accident_log.iter().any(|e| e.vehicle_id == vid && e.t == t);
        if !dup {
            if v.is_running() {
                v.status = VehicleStatus::Accident;
            }
            let entry = AccidentLogEntry {
                t,
                vehicle_id: vid,
                kind,
                lat: fix.lat,
                lon: fix.lon,
            };
            self.accident_log.push(entry);
            self.log(t, "accident", vid, 0, format!("kind={kind} lat={:.6} lon={:.6}", fix.lat, fix.lon));
        }
        self.reply(from, vid, 0, t, Message::Ack { of: MsgType::AccidentNotify });
    }

    fn check_user(&self, uid: u32, credentials: Option<&str>) -> Result<(), RejectReason> {
        let u = self.users.get(&uid).ok_or(RejectReason::NotRegistered)?;
        match credentials {
            Some(c) if !u.registration.check(c) => Err(RejectReason::BadCredentials),
            _ => Ok(()),
        }
    }

    fn owns(&self, uid: u32, vid: u32) -> bool {
        let by_user = self.users.get(&uid).is_some_and(|u| u.registration.links.contains(&vid));
        let by_vehicle = self
            .vehicles
            .get(&vid)
            .is_some_and(|v| v.registration.links.contains(&uid));
        by_user || by_vehicle
    }

    fn on_user_enable(&mut self, from: SocketAddr, uid: u32, vid: u32, t: Millis, credentials: &str) {
        if let Err(reason) = self.check_user(uid, Some(credentials)) {
            return self.reject(from, vid, uid, t, reason);
        }
        if !self.vehicles.contains_key(&vid) {
            return self.reject(from, vid, uid, t, RejectReason::NotRegistered);
        }
        if !self.owns(uid, vid) {
            return self.reject(from, vid, uid, t, RejectReason::NotOwner);
        }
        let running = self.vehicles[&vid].is_running();
        let u = self.users.get_mut(&uid).unwrap();
        u.peer = Some(from);
        u.video_seq = 0;
        u.data_seq = 0;
        if running {
            u.enabled = Some(vid);
            self.log(t, "user-enable", vid, uid, "mode=live".into());
            self.reply(from, vid, uid, t, Message::Ack { of: MsgType::UserEnable });
        } else {
            u.enabled = None;
            self.log(t, "user-enable", vid, uid, "mode=replay".into());
            self.reply(from, vid, uid, t, Message::Ack { of: MsgType::UserEnable });
            self.replay(from, uid, vid);
        }
    }

    fn on_user_disable(&mut self, from: SocketAddr, uid: u32, vid: u32, t: Millis) {
        if let Err(reason) = self.check_user(uid, None) {
            return self.reject(from, vid, uid, t, reason);
        }
        let u = self.users.get_mut(&uid).unwrap();
        if u.enabled.take().is_some() {
            self.log(t, "user-disable", vid, uid, String::new());
        }
        self.reply(from, vid, uid, t, Message::Ack { of: MsgType::UserDisable });
    }

    /// Streams the last sealed session to `peer`, in timestamp order, as fast
    /// as the transport takes it.
    fn replay(&mut self, peer: SocketAddr, uid: u32, vid: u32) {
        let Some(last) = self.vehicles.get_mut(&vid).and_then(|v| v.last_segments.as_mut()) else {
            return;
        };
        let mut order: Vec<usize> = vec![0, 1];
        order.sort_by_key(|&i| last.segments[i].start_t);
        let mut records = Vec::new();
        for i in order {
            if matches!(last.segments[i].state, crate::recorder::SegmentState::Empty | crate::recorder::SegmentState::Cleared) {
                continue;
            }
            match last.stores[i].contents() {
                Ok(Some(bytes)) => match container::parse(&bytes) {
                    Ok(c) => records.extend(c.records),
                    Err(e) => warn!(vehicle = vid, error = %e, "stored segment does not parse"),
                },
                Ok(None) => {}
                Err(e) => warn!(vehicle = vid, error = %e, "cannot read stored segment"),
            }
        }
        records.sort_by_key(|r| r.t);
        let (mut vseq, mut dseq) = (0, 0);
        for r in records {
            let (channel, seq, message) = match r.kind {
                container::RecordKind::Frame => {
                    vseq += 1;
                    (ChannelId::UserVideoOut, vseq - 1, Message::Video { payload: r.payload })
                }
                container::RecordKind::Telemetry => match String::from_utf8(r.payload) {
                    Ok(line) => {
                        dseq += 1;
                        (ChannelId::UserDataOut, dseq - 1, Message::Data { line })
                    }
                    Err(_) => continue,
                },
            };
            self.stats.replayed += 1;
            self.send(
                peer,
                Packet {
                    channel,
                    vehicle_id: vid,
                    user_id: uid,
                    seq,
                    t: r.t,
                    message,
                },
            );
        }
        if let Some(u) = self.users.get_mut(&uid) {
            u.video_seq = vseq;
            u.data_seq = dseq;
        }
    }

    fn on_stream(&mut self, now: Millis, p: Packet) {
        let vid = p.vehicle_id;
        let Some(streams) = self.vehicles.get_mut(&vid).and_then(|v| v.streams.as_mut()) else {
            self.stats.dropped_inactive += 1;
            return;
        };
        let (video, data) = match p.message {
            Message::Video { payload } if p.channel == ChannelId::VehicleVideoIn => {
                (streams.video.push(p.seq, (p.t, payload), now), Vec::new())
            }
            Message::Data { line } if p.channel == ChannelId::VehicleDataIn => {
                (Vec::new(), streams.data.push(p.seq, (p.t, line), now))
            }
            _ => {
                self.stats.wrong_channel += 1;
                return;
            }
        };
        self.ingest_released(vid, video, data, None);
    }

    /// Releases whatever the reorder hold timers have given up on.
    pub fn poll(&mut self, now: Millis) {
        let ids: Vec<u32> = self.vehicles.keys().copied().collect();
        for vid in ids {
            let Some(streams) = self.vehicles.get_mut(&vid).and_then(|v| v.streams.as_mut()) else {
                continue;
            };
            let video = streams.video.poll(now);
            let data = streams.data.poll(now);
            if !video.is_empty() || !data.is_empty() {
                self.ingest_released(vid, video, data, None);
            }
        }
    }

    pub fn next_deadline(&self) -> Option<Millis> {
        self.vehicles
            .values()
            .filter_map(|v| v.streams.as_ref())
            .flat_map(|s| [s.video.next_deadline(), s.data.next_deadline()])
            .flatten()
            .min()
    }

    fn ingest_released(
        &mut self,
        vid: u32,
        video: Vec<(u64, (Millis, Vec<u8>))>,
        data: Vec<(u64, (Millis, String))>,
        end: Option<Millis>,
    ) {
        for (_, (t, line)) in data {
            self.ingest(vid, t, Chunk::Data(line), end);
        }
        for (_, (t, payload)) in video {
            self.ingest(vid, t, Chunk::Video(payload), end);
        }
    }

    /// Appends one in-order chunk to the vehicle's recorder and forwards it.
    /// With `end` set (terminate in progress) ticks due at or after `end` are
    /// not run.
    fn ingest(&mut self, vid: u32, t: Millis, chunk: Chunk, end: Option<Millis>) {
        let v = self.vehicles.get_mut(&vid).expect("ingest for a known vehicle");
        let Some(rec) = v.recorder.as_mut() else {
            self.stats.dropped_inactive += 1;
            return;
        };
        while let Some(due) = rec.pending_tick().filter(|&d| d <= t && end.is_none_or(|e| d < e)) {
            if let Err(e) = rec.on_tick(due) {
                warn!(vehicle = vid, error = %e, "server-side tick failed");
                break;
            }
        }
        let result = match &chunk {
            Chunk::Video(payload) => rec.append_frame(t, payload),
            Chunk::Data(line) => rec.append_telemetry_line(t, line),
        };
        match result {
            Ok(()) => match chunk {
                Chunk::Video(_) => self.stats.recorded_video += 1,
                Chunk::Data(_) => self.stats.recorded_data += 1,
            },
            Err(e) => warn!(vehicle = vid, t, error = %e, "server-side append failed"),
        }
        if let Chunk::Data(line) = &chunk {
            if let Ok((sample, _)) = csv::parse_line(line) {
                v.last_fix = Some((t, sample.fix()));
                self.proximity_check(vid, t);
            }
        }
        self.forward(vid, t, chunk);
    }

    fn forward(&mut self, vid: u32, t: Millis, chunk: Chunk) {
        let targets: Vec<(u32, SocketAddr)> = self
            .users
            .values()
            .filter(|u| u.enabled == Some(vid))
            .filter_map(|u| u.peer.map(|p| (u.id(), p)))
            .collect();
        for (uid, peer) in targets {
            let u = self.users.get_mut(&uid).unwrap();
            u.forwarded += 1;
            let (channel, seq, message) = match &chunk {
                Chunk::Video(payload) => {
                    u.video_seq += 1;
                    (ChannelId::UserVideoOut, u.video_seq - 1, Message::Video { payload: payload.clone() })
                }
                Chunk::Data(line) => {
                    u.data_seq += 1;
                    (ChannelId::UserDataOut, u.data_seq - 1, Message::Data { line: line.clone() })
                }
            };
            self.stats.forwarded += 1;
            self.send(
                peer,
                Packet {
                    channel,
                    vehicle_id: vid,
                    user_id: uid,
                    seq,
                    t,
                    message,
                },
            );
        }
    }

    /// Advisory collision warning: the latest fixes of two running vehicles
    /// within `d_crit_m` and `proximity_window_ms`. One warning per approach;
    /// the pair re-arms once it separates.
    fn proximity_check(&mut self, vid: u32, t: Millis) {
        let Some((_, here)) = self.vehicles[&vid].last_fix else {
            return;
        };
        let others: Vec<(u32, Millis, GeoPoint)> = self
            .vehicles
            .values()
            .filter(|o| o.id() != vid && o.is_running())
            .filter_map(|o| o.last_fix.map(|(ot, fix)| (o.id(), ot, fix)))
            .collect();
        for (oid, ot, fix) in others {
            let pair = (vid.min(oid), vid.max(oid));
            let d = here.distance_m(&fix);
            let close = d <= self.cfg.d_crit_m && t.abs_diff(ot) <= self.cfg.proximity_window_ms;
            if !close {
                if d > self.cfg.d_crit_m {
                    self.close_pairs.remove(&pair);
                }
                continue;
            }
            if self.close_pairs.insert(pair) {
                self.proximity.push(ProximityWarning {
                    t,
                    vehicles: pair,
                    distance_m: d,
                });
                self.log(t, "proximity", pair.0, 0, format!("other={} distance_m={d:.2}", pair.1));
            }
        }
    }
}
