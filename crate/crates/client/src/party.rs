//! UDP runtimes for the vehicle and user parties.
//!
//! Both wrap a sans-IO state machine from `ivvdr-core` in one task: poll it
//! at its next deadline, feed it datagrams as they arrive, and send what it
//! queues. The logical clock is real time times `time_scale`, starting at 0.

use std::fs::File;
use std::future::Future;
use std::io::{BufWriter, Write};
use std::net::{Ipv4Addr, Ipv6Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::Context;
use ivvdr_core::net::Transmit;
use ivvdr_core::protocol::RejectReason;
use ivvdr_core::sim::AccidentKind;
use ivvdr_core::store::FileStore;
use ivvdr_core::user::{Summary, UserClient, UserConfig, UserPhase};
use ivvdr_core::vehicle::{AgentConfig, AgentStats, Phase, SmsRecord, VehicleAgent};
use ivvdr_core::Millis;
use tokio::net::UdpSocket;
use tracing::{debug, info};

/// Idle wake-up when nothing is scheduled.
const IDLE: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy)]
pub struct Clock {
    origin: Instant,
    scale: f64,
}

impl Clock {
    pub fn new(scale: f64) -> Self {
        Self {
            origin: Instant::now(),
            scale,
        }
    }

    pub fn now(&self) -> Millis {
        (self.origin.elapsed().as_secs_f64() * 1000.0 * self.scale) as Millis
    }

    /// Real time left until logical instant `t`.
    pub fn until(&self, t: Millis) -> Duration {
        let now = self.now();
        Duration::from_secs_f64(t.saturating_sub(now) as f64 / 1000.0 / self.scale)
    }
}

async fn bind_for(server: SocketAddr) -> std::io::Result<UdpSocket> {
    let local: SocketAddr = if server.is_ipv4() {
        (Ipv4Addr::UNSPECIFIED, 0).into()
    } else {
        (Ipv6Addr::UNSPECIFIED, 0).into()
    };
    UdpSocket::bind(local).await
}

async fn send_all(sock: &UdpSocket, transmits: Vec<Transmit>) {
    for t in transmits {
        if let Err(e) = sock.send_to(&t.bytes, t.peer).await {
            debug!(peer = %t.peer, error = %e, "send");
        }
    }
}

#[derive(Debug)]
pub struct VehicleRun {
    pub phase: Phase,
    pub accident: Option<(AccidentKind, Millis)>,
    pub terminated_by_accident: bool,
    pub rejected: Option<RejectReason>,
    pub stats: AgentStats,
    pub sms: Vec<SmsRecord>,
    pub segments: [PathBuf; 2],
    pub end_t: Millis,
}

/// Runs a vehicle until it terminates: after an accident, at `stop_at`
/// (logical ms) or when `shutdown` resolves. Segments go to `out_dir` under
/// the recorder's configured file names, SMS records to `out_dir/sms.log`.
pub async fn run_vehicle(
    cfg: AgentConfig,
    out_dir: &Path,
    stop_at: Option<Millis>,
    shutdown: impl Future<Output = ()>,
) -> anyhow::Result<VehicleRun> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let segments = cfg.recorder.segment_paths.clone().map(|p| {
        out_dir.join(p.file_name().map(PathBuf::from).unwrap_or(p))
    });
    let sock = bind_for(cfg.server).await.context("binding vehicle socket")?;
    let clock = Clock::new(cfg.time_scale);
    let mut agent = VehicleAgent::new(cfg)?;
    let stores = [FileStore::create(&segments[0])?, FileStore::create(&segments[1])?];
    agent.start(stores, 0)?;
    tokio::pin!(shutdown);

    let advance = |agent: &mut VehicleAgent<FileStore>, now: Millis| -> anyhow::Result<()> {
        match stop_at {
            Some(s) if now >= s => {
                agent.poll(s);
                agent.stop(s)?;
            }
            _ => agent.poll(now),
        }
        Ok(())
    };

    let mut buf = vec![0u8; 65_536];
    let mut end_t: Millis;
    loop {
        end_t = clock.now();
        advance(&mut agent, end_t)?;
        send_all(&sock, agent.drain_transmits()).await;
        if agent.phase() == Phase::Terminated {
            break;
        }
        let wake = match (agent.next_deadline(), stop_at) {
            (Some(d), Some(s)) => Some(d.min(s)),
            (d, s) => d.or(s),
        };
        let sleep = wake.map_or(IDLE, |t| clock.until(t));
        tokio::select! {
            r = sock.recv_from(&mut buf) => {
                if let Ok((n, _)) = r {
                    let now = clock.now();
                    advance(&mut agent, now)?;
                    agent.handle_datagram(now, &buf[..n]);
                }
            }
            _ = tokio::time::sleep(sleep) => {}
            _ = &mut shutdown => {
                end_t = clock.now();
                advance(&mut agent, end_t)?;
                agent.stop(end_t)?;
                send_all(&sock, agent.drain_transmits()).await;
                break;
            }
        }
    }

    let sms_path = out_dir.join("sms.log");
    let mut sms = BufWriter::new(File::create(&sms_path).with_context(|| format!("creating {}", sms_path.display()))?);
    for r in agent.sms_log() {
        writeln!(sms, "{}", r.to_line())?;
    }
    sms.flush()?;
    info!(vehicle = agent.vehicle_id(), end_t, phase = ?agent.phase(), "vehicle finished");
    Ok(VehicleRun {
        phase: agent.phase(),
        accident: agent.accident(),
        terminated_by_accident: agent.terminated_by_accident(),
        rejected: agent.rejected(),
        stats: agent.stats(),
        sms: agent.sms_log().to_vec(),
        segments,
        end_t,
    })
}

#[derive(Debug)]
pub struct UserRun {
    pub phase: UserPhase,
    pub summary: Option<Summary>,
    pub container: PathBuf,
    pub csv: PathBuf,
}

/// Enables `vehicle`, receives for `duration` logical ms (or until
/// `shutdown`), then disables. Output: `user-<u>-vehicle-<v>.ivsg` and
/// `.csv` in `out_dir`.
pub async fn run_user(
    cfg: UserConfig,
    vehicle: u32,
    out_dir: &Path,
    duration: Millis,
    time_scale: f64,
    shutdown: impl Future<Output = ()>,
) -> anyhow::Result<UserRun> {
    anyhow::ensure!(time_scale > 0.0, "time scale must be > 0");
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let stem = format!("user-{}-vehicle-{vehicle}", cfg.user_id);
    let container = out_dir.join(format!("{stem}.ivsg"));
    let csv = out_dir.join(format!("{stem}.csv"));
    let sock = bind_for(cfg.server).await.context("binding user socket")?;
    let clock = Clock::new(time_scale);
    let mut client = UserClient::new(
        cfg,
        FileStore::create(&container)?,
        BufWriter::new(File::create(&csv)?),
    )?;
    client.enable(vehicle, 0)?;
    tokio::pin!(shutdown);

    let mut buf = vec![0u8; 65_536];
    loop {
        let now = clock.now().min(duration);
        client.poll(now)?;
        send_all(&sock, client.drain_transmits()).await;
        if now >= duration || matches!(client.phase(), UserPhase::Rejected(_)) {
            break;
        }
        let wake = client.next_deadline().map_or(duration, |d| d.min(duration));
        tokio::select! {
            r = sock.recv_from(&mut buf) => {
                if let Ok((n, _)) = r {
                    let now = clock.now().min(duration);
                    client.poll(now)?;
                    client.handle_datagram(now, &buf[..n])?;
                }
            }
            _ = tokio::time::sleep(clock.until(wake).min(IDLE)) => {}
            _ = &mut shutdown => break,
        }
    }
    let summary = client.disable(clock.now().min(duration))?;
    send_all(&sock, client.drain_transmits()).await;
    Ok(UserRun {
        phase: client.phase(),
        summary,
        container,
        csv,
    })
}
