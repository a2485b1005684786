use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use ivvdr_client::run_vehicle;
use ivvdr_core::net::ServerPorts;
use ivvdr_core::recorder::Variant;
use ivvdr_core::sim::AccidentScript;
use ivvdr_core::vehicle::AgentConfig;
use ivvdr_core::Millis;

/// In-vehicle recorder and streaming agent.
///
/// Exits 0 after a normal stop and 2 when an accident ended the run.
#[derive(Parser)]
#[command(name = "vehicle", version)]
struct Cli {
    /// TOML agent config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Server host, optionally with a port (ignored; see --ports).
    #[arg(long, value_parser = parse_server)]
    server: Option<SocketAddr>,
    #[arg(long)]
    ports: Option<ServerPorts>,
    #[arg(long)]
    id: Option<u32>,
    #[arg(long)]
    credentials: Option<String>,
    #[arg(long)]
    segment_minutes: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Scripted accident, e.g. `turnover@432000`.
    #[arg(long)]
    accident: Option<AccidentScript>,
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fps: Option<u32>,
    #[arg(long)]
    frame_bytes: Option<usize>,
    /// Stop normally at this logical time (ms).
    #[arg(long)]
    stop_at: Option<Millis>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn parse_server(s: &str) -> Result<SocketAddr, String> {
    s.parse::<SocketAddr>()
        .or_else(|_| s.parse::<IpAddr>().map(|ip| SocketAddr::new(ip, 0)))
        .map_err(|_| format!("expected an IP address or ip:port, got {s:?}"))
}

fn config(cli: &Cli) -> Result<AgentConfig> {
    let mut cfg: AgentConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => AgentConfig::default(),
    };
    if let Some(s) = cli.server {
        cfg.server = s;
    }
    if let Some(p) = cli.ports {
        cfg.ports = p;
    }
    if let Some(id) = cli.id {
        cfg.vehicle_id = id;
    }
    if let Some(c) = &cli.credentials {
        cfg.credentials = c.clone();
    }
    if let Some(m) = cli.segment_minutes {
        anyhow::ensure!(m > 0.0, "segment minutes must be > 0");
        cfg.recorder.segment_ms = (m * 60_000.0).round() as Millis;
    }
    if let Some(v) = cli.variant {
        cfg.recorder.variant = v;
    }
    if cli.accident.is_some() {
        cfg.sim.accident = cli.accident;
    }
    if let Some(x) = cli.time_scale {
        cfg.time_scale = x;
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(fps) = cli.fps {
        cfg.recorder.fps = fps;
    }
    if let Some(b) = cli.frame_bytes {
        cfg.recorder.frame_bytes = b;
    }
    cfg.recorder.vehicle_id = cfg.vehicle_id;
    cfg.validate()?;
    Ok(cfg)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = async {
        let cfg = config(&cli)?;
        let stop = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        run_vehicle(cfg, &cli.out_dir, cli.stop_at, stop).await
    }
    .await;
    match result {
        Ok(run) => {
            let s = run.stats;
            println!(
                "vehicle ended at {} ms: frames {} samples {} video sent {} data sent {}",
                run.end_t, s.frames_captured, s.samples_recorded, s.video_sent, s.data_sent
            );
            if let Some(r) = run.rejected {
                println!("server rejected login: {r}");
            }
            for sms in &run.sms {
                println!("sms {}", sms.to_line());
            }
            if run.terminated_by_accident {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
