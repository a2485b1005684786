//! Single-threaded discrete-event driver for vehicles, server and users.
//!
//! At each event time the runner, in this order: starts vehicles due to
//! start, delivers datagrams due (in send order), polls every party, then
//! applies scripted stops and user actions. Datagrams sent at `t` are
//! scheduled at `t + delay` through the fault injector. Every step is logged
//! to a trace whose SHA-256 (covering datagram bytes too) identifies the run.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;

use ivvdr_core::net::Transmit;
use ivvdr_core::protocol::{codec, ChannelId};
use ivvdr_core::registry::{MemRegistry, PartyKind};
use ivvdr_core::server::{ItsServer, MemStores};
use ivvdr_core::store::{MemStore, SegmentStore};
use ivvdr_core::user::{UserClient, UserConfig, UserPhase};
use ivvdr_core::vehicle::{AgentConfig, Phase, VehicleAgent};
use ivvdr_core::Millis;
use sha2::{Digest, Sha256};

use crate::netsim::{Fate, FaultInjector, NetStats};
use crate::scenario::{Scenario, ScenarioError, UserAction};

pub const SERVER_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

fn vehicle_addr(i: usize) -> SocketAddr {
    SocketAddr::new(
        IpAddr::V4(Ipv4Addr::new(10, 1, (i / 250) as u8, (i % 250 + 1) as u8)),
        5000,
    )
}

fn user_addr(i: usize) -> SocketAddr {
    SocketAddr::new(
        IpAddr::V4(Ipv4Addr::new(10, 2, (i / 250) as u8, (i % 250 + 1) as u8)),
        6000,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Party {
    Server,
    Vehicle(usize),
    User(usize),
}

#[derive(Debug)]
struct InFlight {
    to: Party,
    /// Channel of the receiving server socket, or of the sending one.
    channel: ChannelId,
    from: SocketAddr,
    bytes: Vec<u8>,
}

/// Ordered log plus running hash of everything that happened.
#[derive(Debug)]
pub struct Trace {
    hasher: Sha256,
    lines: Vec<String>,
}

impl Trace {
    fn new() -> Self {
        Self {
            hasher: Sha256::new(),
            lines: Vec::new(),
        }
    }

    fn push(&mut self, line: String, bytes: &[u8]) {
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.hasher.update((bytes.len() as u64).to_be_bytes());
        self.hasher.update(bytes);
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    fn finish(self) -> (String, Vec<String>) {
        (hex::encode(self.hasher.finalize()), self.lines)
    }
}

pub struct VehicleRun {
    pub spec_index: usize,
    pub addr: SocketAddr,
    pub agent: VehicleAgent<MemStore>,
    started: bool,
    stopped: bool,
    snapshot: String,
}

pub struct UserRun {
    pub id: u32,
    pub addr: SocketAddr,
    pub client: UserClient<MemStore, Vec<u8>>,
    actions: Vec<UserAction>,
    next_action: usize,
    phase: UserPhase,
}

/// Everything a finished run produced.
pub struct RunResult {
    pub scenario: Scenario,
    pub trace_hash: String,
    pub trace: Vec<String>,
    pub end_t: Millis,
    pub server: ItsServer<MemStores>,
    pub vehicles: Vec<VehicleRun>,
    pub users: Vec<UserRun>,
    pub net: NetStats,
    pub net_by_channel: BTreeMap<ChannelId, NetStats>,
    /// Datagrams addressed to an unreachable server.
    pub unreachable: u64,
}

struct World {
    sc: Scenario,
    now: Millis,
    queue: BTreeMap<(Millis, u64), InFlight>,
    next_id: u64,
    net: FaultInjector,
    server: ItsServer<MemStores>,
    vehicles: Vec<VehicleRun>,
    users: Vec<UserRun>,
    trace: Trace,
    server_events_seen: usize,
    unreachable: u64,
}

/// Runs `sc` to completion. Configuration errors surface before any party
/// starts.
pub fn run_scenario(sc: &Scenario) -> Result<RunResult, ScenarioError> {
    sc.validate()?;
    let mut world = World::new(sc.clone())?;
    world.run();
    Ok(world.finish())
}

impl World {
    fn new(sc: Scenario) -> Result<Self, ScenarioError> {
        let invalid = |e: String| ScenarioError::Invalid(e);
        let mut server = ItsServer::new(sc.server.clone(), Box::new(MemRegistry::new()), MemStores)
            .map_err(|e| invalid(e.to_string()))?;
        let server_addr = SocketAddr::new(IpAddr::V4(SERVER_IP), 0);
        let mut trace = Trace::new();
        trace.push(
            format!(
                "scenario {} seed={} duration={}",
                sc.name, sc.net.seed, sc.duration_ms
            ),
            &[],
        );

        let mut vehicles = Vec::new();
        for (i, spec) in sc.vehicles.iter().enumerate() {
            if spec.register {
                server
                    .register(
                        PartyKind::Vehicle,
                        spec.agent.vehicle_id,
                        &spec.agent.credentials,
                        spec.owners.clone(),
                    )
                    .map_err(|e| invalid(e.to_string()))?;
            }
            let cfg = AgentConfig {
                server: server_addr,
                ..spec.agent.clone()
            };
            let agent = VehicleAgent::new(cfg).map_err(|e| invalid(e.to_string()))?;
            vehicles.push(VehicleRun {
                spec_index: i,
                addr: vehicle_addr(i),
                agent,
                started: false,
                stopped: false,
                snapshot: String::new(),
            });
        }
        let mut users = Vec::new();
        for (i, spec) in sc.users.iter().enumerate() {
            if spec.register {
                server
                    .register(
                        PartyKind::User,
                        spec.id,
                        &spec.credentials,
                        spec.vehicles.clone(),
                    )
                    .map_err(|e| invalid(e.to_string()))?;
            }
            let cfg = UserConfig {
                user_id: spec.id,
                credentials: spec.credentials.clone(),
                server: server_addr,
                ports: Default::default(),
                reorder: sc.server.reorder,
            };
            let client = UserClient::new(cfg, MemStore::new(), Vec::new())
                .map_err(|e| invalid(e.to_string()))?;
            users.push(UserRun {
                id: spec.id,
                addr: user_addr(i),
                client,
                actions: spec.actions.clone(),
                next_action: 0,
                phase: UserPhase::Idle,
            });
        }
        Ok(Self {
            net: FaultInjector::new(sc.net.clone()),
            sc,
            now: 0,
            queue: BTreeMap::new(),
            next_id: 0,
            server,
            vehicles,
            users,
            trace,
            server_events_seen: 0,
            unreachable: 0,
        })
    }

    fn next_event_time(&self) -> Option<Millis> {
        let mut times: Vec<Millis> = Vec::new();
        times.extend(self.queue.keys().next().map(|k| k.0));
        for (v, spec) in self
            .vehicles
            .iter()
            .map(|v| (v, &self.sc.vehicles[v.spec_index]))
        {
            if !v.started {
                times.push(spec.start_at);
            } else if !v.stopped {
                times.extend(v.agent.next_deadline());
                times.extend(
                    spec.stop_at
                        .filter(|_| v.agent.phase() != Phase::Terminated),
                );
            }
        }
        times.extend(self.server.next_deadline());
        for u in &self.users {
            times.extend(u.client.next_deadline());
            times.extend(u.actions.get(u.next_action).map(|a| a.t()));
        }
        times.into_iter().min()
    }

    fn run(&mut self) {
        while let Some(t) = self.next_event_time().filter(|&t| t <= self.sc.duration_ms) {
            debug_assert!(t >= self.now, "time went backwards: {t} < {}", self.now);
            self.now = t;
            self.step(t);
        }
    }

    fn step(&mut self, t: Millis) {
        for i in 0..self.vehicles.len() {
            let spec = &self.sc.vehicles[self.vehicles[i].spec_index];
            if !self.vehicles[i].started && spec.start_at <= t {
                self.vehicles[i].started = true;
                let r = self.vehicles[i]
                    .agent
                    .start([MemStore::new(), MemStore::new()], t);
                if let Err(e) = r {
                    self.trace.push(
                        format!("{t} vehicle {} start-failed {e}", self.vehicle_id(i)),
                        &[],
                    );
                }
                self.after_vehicle(i);
            }
        }

        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > t {
                break;
            }
            let d = entry.remove();
            self.deliver(t, d);
        }

        for i in 0..self.vehicles.len() {
            if self.vehicles[i].started && !self.vehicles[i].stopped {
                self.vehicles[i].agent.poll(t);
                self.after_vehicle(i);
            }
        }
        self.server.poll(t);
        self.after_server();
        for i in 0..self.users.len() {
            if let Err(e) = self.users[i].client.poll(t) {
                self.trace
                    .push(format!("{t} user {} error {e}", self.users[i].id), &[]);
            }
            self.after_user(i);
        }

        for i in 0..self.vehicles.len() {
            let spec = &self.sc.vehicles[self.vehicles[i].spec_index];
            let v = &self.vehicles[i];
            if v.started && !v.stopped && spec.stop_at.is_some_and(|s| s <= t) {
                self.vehicles[i].stopped = true;
                if let Err(e) = self.vehicles[i].agent.stop(t) {
                    self.trace.push(
                        format!("{t} vehicle {} stop-failed {e}", self.vehicle_id(i)),
                        &[],
                    );
                }
                self.after_vehicle(i);
            }
        }
        for i in 0..self.users.len() {
            while let Some(&a) = self.users[i]
                .actions
                .get(self.users[i].next_action)
                .filter(|a| a.t() <= t)
            {
                self.users[i].next_action += 1;
                let uid = self.users[i].id;
                let client = &mut self.users[i].client;
                let line = match a {
                    UserAction::Enable { vehicle, .. } => match client.enable(vehicle, t) {
                        Ok(()) => format!("{t} user {uid} enable vehicle={vehicle}"),
                        Err(e) => format!("{t} user {uid} enable-failed {e}"),
                    },
                    UserAction::Disable { .. } => match client.disable(t) {
                        Ok(Some(s)) => format!("{t} user {uid} disable {}", s.to_csv()),
                        Ok(None) => format!("{t} user {uid} disable no-op"),
                        Err(e) => format!("{t} user {uid} disable-failed {e}"),
                    },
                };
                self.trace.push(line, &[]);
                self.after_user(i);
            }
        }
    }

    fn vehicle_id(&self, i: usize) -> u32 {
        self.vehicles[i].agent.vehicle_id()
    }

    fn deliver(&mut self, t: Millis, d: InFlight) {
        match d.to {
            Party::Server => {
                self.trace.push(
                    format!("{t} recv server {} from={}", d.channel, d.from),
                    &d.bytes,
                );
                self.server.handle_datagram(t, d.channel, d.from, &d.bytes);
                self.after_server();
            }
            Party::Vehicle(i) => {
                self.trace.push(
                    format!("{t} recv vehicle {} {}", self.vehicle_id(i), d.channel),
                    &d.bytes,
                );
                self.vehicles[i].agent.handle_datagram(t, &d.bytes);
                self.after_vehicle(i);
            }
            Party::User(i) => {
                self.trace.push(
                    format!("{t} recv user {} {}", self.users[i].id, d.channel),
                    &d.bytes,
                );
                if let Err(e) = self.users[i].client.handle_datagram(t, &d.bytes) {
                    self.trace
                        .push(format!("{t} user {} error {e}", self.users[i].id), &[]);
                }
                self.after_user(i);
            }
        }
    }

    fn schedule(
        &mut self,
        from: SocketAddr,
        to: Party,
        channel: ChannelId,
        mut bytes: Vec<u8>,
        label: &str,
    ) {
        let t = self.now;
        let fate = self.net.fate(channel);
        let kind = if channel == ChannelId::Control {
            match codec::decode(&bytes) {
                Ok(p) => format!(" {:?}", p.message.msg_type()),
                Err(e) => format!(" undecodable:{}", e.code()),
            }
        } else {
            String::new()
        };
        self.trace.push(
            format!("{t} send {label} {channel}{kind} {}", fate.label()),
            &bytes,
        );
        if let Fate::Delivered(delays) = fate {
            let n = delays.len();
            for (k, delay) in delays.into_iter().enumerate() {
                let payload = if k + 1 == n {
                    std::mem::take(&mut bytes)
                } else {
                    bytes.clone()
                };
                self.queue.insert(
                    (t + delay, self.next_id),
                    InFlight {
                        to,
                        channel,
                        from,
                        bytes: payload,
                    },
                );
                self.next_id += 1;
            }
        }
    }

    /// Routes datagrams a vehicle or user sent towards the server.
    fn send_to_server(&mut self, from: SocketAddr, out: Vec<Transmit>, label: &str) {
        for tx in out {
            let channel = match self.server_port_channel(tx.peer) {
                Some(ch) => ch,
                None => continue,
            };
            if !self.sc.server_enabled {
                self.unreachable += 1;
                self.trace.push(
                    format!("{} send {label} {channel} unreachable", self.now),
                    &tx.bytes,
                );
                continue;
            }
            self.schedule(from, Party::Server, channel, tx.bytes, label);
        }
    }

    fn server_port_channel(&self, peer: SocketAddr) -> Option<ChannelId> {
        if peer.ip() != IpAddr::V4(SERVER_IP) {
            return None;
        }
        ivvdr_core::net::ServerPorts::default().channel_of(peer.port())
    }

    fn after_vehicle(&mut self, i: usize) {
        let out = self.vehicles[i].agent.drain_transmits();
        let vid = self.vehicle_id(i);
        let from = self.vehicles[i].addr;
        self.send_to_server(from, out, &format!("vehicle {vid}"));
        let agent = &self.vehicles[i].agent;
        let snap = match agent.recorder() {
            Some(r) => format!(
                "phase={:?} alternat={} accident={} stopped={} sms={}",
                agent.phase(),
                r.file_alternat(),
                r.accident_flag(),
                r.is_stopped(),
                agent.sms_log().len()
            ),
            None => format!("phase={:?}", agent.phase()),
        };
        if snap != self.vehicles[i].snapshot {
            self.trace
                .push(format!("{} vehicle {vid} {snap}", self.now), &[]);
            self.vehicles[i].snapshot = snap;
        }
    }

    fn after_user(&mut self, i: usize) {
        let out = self.users[i].client.drain_transmits();
        let uid = self.users[i].id;
        let from = self.users[i].addr;
        self.send_to_server(from, out, &format!("user {uid}"));
        let phase = self.users[i].client.phase();
        if phase != self.users[i].phase {
            self.users[i].phase = phase;
            self.trace
                .push(format!("{} user {uid} phase={phase:?}", self.now), &[]);
        }
    }

    fn after_server(&mut self) {
        let events = self.server.events();
        let new: Vec<String> = events[self.server_events_seen..]
            .iter()
            .map(|e| e.to_string())
            .collect();
        self.server_events_seen = events.len();
        for e in new {
            self.trace.push(format!("{} server {e}", self.now), &[]);
        }
        for tx in self.server.drain_transmits() {
            let to = if let Some(i) = self.vehicles.iter().position(|v| v.addr == tx.peer) {
                Party::Vehicle(i)
            } else if let Some(i) = self.users.iter().position(|u| u.addr == tx.peer) {
                Party::User(i)
            } else {
                continue;
            };
            let from = SocketAddr::new(
                IpAddr::V4(SERVER_IP),
                ivvdr_core::net::ServerPorts::default().port(tx.channel),
            );
            let label = match to {
                Party::Vehicle(i) => format!("server->vehicle {}", self.vehicle_id(i)),
                Party::User(i) => format!("server->user {}", self.users[i].id),
                Party::Server => unreachable!(),
            };
            self.schedule(from, to, tx.channel, tx.bytes, &label);
        }
    }

    fn finish(self) -> RunResult {
        let net_by_channel = ChannelId::ALL
            .iter()
            .map(|&ch| (ch, self.net.channel_stats(ch)))
            .collect();
        let net = self.net.stats();
        let (trace_hash, trace) = self.trace.finish();
        RunResult {
            scenario: self.sc,
            trace_hash,
            trace,
            end_t: self.now,
            server: self.server,
            vehicles: self.vehicles,
            users: self.users,
            net,
            net_by_channel,
            unreachable: self.unreachable,
        }
    }
}

impl RunResult {
    pub fn vehicle(&self, id: u32) -> Option<&VehicleAgent<MemStore>> {
        self.vehicles
            .iter()
            .map(|v| &v.agent)
            .find(|a| a.vehicle_id() == id)
    }

    pub fn vehicle_mut(&mut self, id: u32) -> Option<&mut VehicleAgent<MemStore>> {
        self.vehicles
            .iter_mut()
            .map(|v| &mut v.agent)
            .find(|a| a.vehicle_id() == id)
    }

    pub fn user(&self, id: u32) -> Option<&UserClient<MemStore, Vec<u8>>> {
        self.users.iter().find(|u| u.id == id).map(|u| &u.client)
    }

    /// Both vehicle-side segment containers, in segment order.
    pub fn vehicle_segments(&self, id: u32) -> Vec<Vec<u8>> {
        self.vehicles
            .iter()
            .find(|v| v.agent.vehicle_id() == id)
            .map(segment_bytes_of)
            .unwrap_or_default()
    }

    /// Server-side containers of `id`: the active session if there is one,
    /// otherwise the last sealed one.
    pub fn server_segments(&mut self, id: u32) -> Vec<Vec<u8>> {
        let Some(v) = self.server.vehicle_mut(id) else {
            return Vec::new();
        };
        if let Some(last) = v.last_segments_mut() {
            return last
                .stores
                .iter_mut()
                .filter_map(|s| s.contents().ok().flatten())
                .collect();
        }
        Vec::new()
    }

    /// Writes every produced artefact under `dir`.
    pub fn write_outputs(&mut self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut trace = self.trace.join("\n");
        trace.push('\n');
        fs::write(dir.join("trace.log"), trace)?;
        fs::write(dir.join("trace.sha256"), format!("{}\n", self.trace_hash))?;
        for v in &self.vehicles {
            let id = v.agent.vehicle_id();
            let vdir = dir.join(format!("vehicle-{id}"));
            fs::create_dir_all(&vdir)?;
            for (i, bytes) in segment_bytes_of(v).into_iter().enumerate() {
                fs::write(vdir.join(format!("seg{}.ivsg", i + 1)), bytes)?;
            }
            let sms: String = v
                .agent
                .sms_log()
                .iter()
                .map(|s| s.to_line() + "\n")
                .collect();
            fs::write(vdir.join("sms.log"), sms)?;
        }
        let sdir = dir.join("server");
        fs::create_dir_all(&sdir)?;
        let ids: Vec<u32> = self.server.vehicles().map(|v| v.id()).collect();
        for id in ids {
            let segs = self.server_segments(id);
            if segs.is_empty() {
                continue;
            }
            let vdir = sdir.join(id.to_string());
            fs::create_dir_all(&vdir)?;
            for (i, bytes) in segs.into_iter().enumerate() {
                fs::write(vdir.join(format!("seg{}.ivsg", i + 1)), bytes)?;
            }
        }
        let accidents: String = self
            .server
            .accident_log()
            .iter()
            .map(|e| e.to_line() + "\n")
            .collect();
        fs::write(sdir.join("accidents.csv"), accidents)?;
        let events: String = self
            .server
            .events()
            .iter()
            .map(|e| e.to_string() + "\n")
            .collect();
        fs::write(sdir.join("events.log"), events)?;
        let prox: String = self
            .server
            .proximity_warnings()
            .iter()
            .map(|w| {
                format!(
                    "{},{},{},{:.3}\n",
                    w.t, w.vehicles.0, w.vehicles.1, w.distance_m
                )
            })
            .collect();
        fs::write(sdir.join("proximity.csv"), prox)?;
        for u in &mut self.users {
            let udir = dir.join(format!("user-{}", u.id));
            fs::create_dir_all(&udir)?;
            fs::write(udir.join("stream.ivsg"), u.client.container().bytes())?;
            fs::write(udir.join("telemetry.csv"), u.client.csv())?;
            if let Some(s) = u.client.summary() {
                fs::write(udir.join("summary.csv"), format!("{}\n", s.to_csv()))?;
            }
        }
        Ok(())
    }
}

fn segment_bytes_of(v: &VehicleRun) -> Vec<Vec<u8>> {
    v.agent
        .recorder()
        .map(|r| r.stores().iter().map(|s| s.bytes().to_vec()).collect())
        .unwrap_or_default()
}
