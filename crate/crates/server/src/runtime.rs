//! Socket runtime around the sans-IO server.
//!
//! One task per channel socket receives, one per socket sends from a bounded
//! queue, and a timer task releases reorder holds. All state sits behind one
//! mutex; it is never held across an await.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use anyhow::Context;
use ivvdr_core::net::ServerPorts;
use ivvdr_core::protocol::ChannelId;
use ivvdr_core::registry::FileRegistry;
use ivvdr_core::server::{FileStores, ItsServer, ServerConfig};
use ivvdr_core::Millis;
use tokio::net::UdpSocket;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

pub const DEFAULT_FORWARD_QUEUE: usize = 4096;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub bind: IpAddr,
    /// Port 0 picks a free port for that channel.
    pub ports: ServerPorts,
    pub registry: PathBuf,
    pub store_dir: PathBuf,
    pub config: ServerConfig,
    /// Simulated ms per real ms.
    pub time_scale: f64,
    pub forward_queue: usize,
    pub poll_every: Duration,
}

impl ServerOptions {
    pub fn new(registry: impl Into<PathBuf>, store_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: IpAddr::from([127, 0, 0, 1]),
            ports: ServerPorts::default(),
            registry: registry.into(),
            store_dir: store_dir.into(),
            config: ServerConfig::default(),
            time_scale: 1.0,
            forward_queue: DEFAULT_FORWARD_QUEUE,
            poll_every: Duration::from_millis(10),
        }
    }
}

/// Logical clock: real elapsed time scaled by `time_scale`.
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
}

/// Append-only text logs mirroring the server's in-memory ones.
#[derive(Debug)]
struct Logs {
    events: BufWriter<File>,
    accidents: BufWriter<File>,
    proximity: BufWriter<File>,
    seen: (usize, usize, usize),
}

fn append_file(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?))
}

impl Logs {
    fn open(dir: &Path) -> io::Result<Self> {
        Ok(Self {
            events: append_file(&dir.join("events.log"))?,
            accidents: append_file(&dir.join("accidents.csv"))?,
            proximity: append_file(&dir.join("proximity.log"))?,
            seen: (0, 0, 0),
        })
    }

    fn sync(&mut self, s: &ItsServer<FileStores>) -> io::Result<()> {
        let (e, a, p) = self.seen;
        for ev in &s.events()[e..] {
            writeln!(self.events, "{ev}")?;
        }
        for entry in &s.accident_log()[a..] {
            writeln!(self.accidents, "{}", entry.to_line())?;
        }
        for w in &s.proximity_warnings()[p..] {
            writeln!(
                self.proximity,
                "{},{},{},{:.2}",
                w.t, w.vehicles.0, w.vehicles.1, w.distance_m
            )?;
        }
        let now = (s.events().len(), s.accident_log().len(), s.proximity_warnings().len());
        if now != self.seen {
            self.events.flush()?;
            self.accidents.flush()?;
            self.proximity.flush()?;
            self.seen = now;
        }
        Ok(())
    }
}

struct Locked {
    server: ItsServer<FileStores>,
    logs: Logs,
}

type Outbound = mpsc::Sender<(SocketAddr, Vec<u8>)>;

/// State shared by the socket tasks and the HTTP API.
pub struct Shared {
    inner: Mutex<Locked>,
    clock: Clock,
    outbound: Vec<Outbound>,
    forward_dropped: AtomicU64,
}

impl Shared {
    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn forward_dropped(&self) -> u64 {
        self.forward_dropped.load(Ordering::Relaxed)
    }

    fn lock(&self) -> MutexGuard<'_, Locked> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Read-only access for queries.
    pub fn read<R>(&self, f: impl FnOnce(&ItsServer<FileStores>) -> R) -> R {
        f(&self.lock().server)
    }

    /// Runs `f`, mirrors new log lines to disk and queues whatever the
    /// server wants sent. Full queues drop the datagram; recording already
    /// happened inside `f`.
    pub fn with<R>(&self, f: impl FnOnce(&mut ItsServer<FileStores>) -> R) -> R {
        let (out, transmits) = {
            let mut g = self.lock();
            let Locked { server, logs } = &mut *g;
            let out = f(server);
            if let Err(e) = logs.sync(server) {
                warn!(error = %e, "writing server logs");
            }
            (out, server.drain_transmits())
        };
        for t in transmits {
            let q = &self.outbound[usize::from(t.channel.code())];
            if q.try_send((t.peer, t.bytes)).is_err() {
                self.forward_dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        out
    }
}

pub struct RunningServer {
    pub ports: ServerPorts,
    pub bind: IpAddr,
    shared: Arc<Shared>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    pub fn addr(&self, channel: ChannelId) -> SocketAddr {
        SocketAddr::new(self.bind, self.ports.port(channel))
    }

    /// Stops every task and flushes the open recorders.
    pub async fn shutdown(self) -> io::Result<()> {
        for t in &self.tasks {
            t.abort();
        }
        for t in self.tasks {
            let _ = t.await;
        }
        self.shared.with(|s| s.flush())
    }
}

/// Binds the five channel sockets and starts serving.
pub async fn start(opts: ServerOptions) -> anyhow::Result<RunningServer> {
    if opts.time_scale.is_nan() || opts.time_scale <= 0.0 {
        anyhow::bail!("time scale must be > 0");
    }
    std::fs::create_dir_all(&opts.store_dir)
        .with_context(|| format!("creating {}", opts.store_dir.display()))?;
    let server = ItsServer::new(
        opts.config.clone(),
        Box::new(FileRegistry::new(&opts.registry)),
        FileStores {
            root: opts.store_dir.clone(),
        },
    )
    .with_context(|| format!("loading registry {}", opts.registry.display()))?;
    let logs = Logs::open(&opts.store_dir).context("opening server logs")?;

    let mut sockets = Vec::with_capacity(5);
    let mut ports = [0u16; 5];
    for ch in ChannelId::ALL {
        let addr = SocketAddr::new(opts.bind, opts.ports.port(ch));
        let sock = UdpSocket::bind(addr)
            .await
            .with_context(|| format!("binding {ch} on {addr}"))?;
        ports[usize::from(ch.code())] = sock.local_addr()?.port();
        sockets.push(Arc::new(sock));
    }
    let ports = ServerPorts(ports);

    let mut receivers = Vec::with_capacity(5);
    let mut outbound = Vec::with_capacity(5);
    for _ in 0..5 {
        let (tx, rx) = mpsc::channel(opts.forward_queue.max(1));
        outbound.push(tx);
        receivers.push(rx);
    }
    let shared = Arc::new(Shared {
        inner: Mutex::new(Locked { server, logs }),
        clock: Clock::new(opts.time_scale),
        outbound,
        forward_dropped: AtomicU64::new(0),
    });

    let mut tasks = Vec::new();
    for (ch, (sock, rx)) in ChannelId::ALL.into_iter().zip(sockets.into_iter().zip(receivers)) {
        tasks.push(tokio::spawn(recv_loop(ch, sock.clone(), shared.clone())));
        tasks.push(tokio::spawn(send_loop(ch, sock, rx)));
    }
    tasks.push(tokio::spawn(poll_loop(shared.clone(), opts.poll_every)));
    info!(?ports, bind = %opts.bind, "server listening");
    Ok(RunningServer {
        ports,
        bind: opts.bind,
        shared,
        tasks,
    })
}

async fn recv_loop(channel: ChannelId, sock: Arc<UdpSocket>, shared: Arc<Shared>) {
    let mut buf = vec![0u8; 65_536];
    loop {
        match sock.recv_from(&mut buf).await {
            Ok((n, from)) => {
                let now = shared.now();
                shared.with(|s| s.handle_datagram(now, channel, from, &buf[..n]));
            }
            // ICMP errors from earlier sends surface here on some platforms.
            Err(e) => debug!(%channel, error = %e, "recv"),
        }
    }
}

async fn send_loop(channel: ChannelId, sock: Arc<UdpSocket>, mut rx: mpsc::Receiver<(SocketAddr, Vec<u8>)>) {
    while let Some((peer, bytes)) = rx.recv().await {
        if let Err(e) = sock.send_to(&bytes, peer).await {
            debug!(%channel, %peer, error = %e, "send");
        }
    }
}

async fn poll_loop(shared: Arc<Shared>, every: Duration) {
    let mut tick = tokio::time::interval(every);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tick.tick().await;
        let now = shared.now();
        shared.with(|s| s.poll(now));
    }
}
