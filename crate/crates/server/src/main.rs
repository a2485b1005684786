use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use ivvdr_core::net::ServerPorts;
use ivvdr_server::{serve_api, start, ServerOptions};
use tracing::info;

/// ITS centre server: five UDP channels and an HTTP admin API.
#[derive(Parser)]
#[command(name = "its-server", version)]
struct Cli {
    /// Control, vehicle video, vehicle data, user video and user data ports.
    #[arg(long, default_value = "7000,7001,7002,7003,7004")]
    ports: ServerPorts,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long, default_value = "registry.txt")]
    registry: PathBuf,
    /// Server-side segment duration; defaults to each vehicle's own.
    #[arg(long)]
    segment_minutes: Option<f64>,
    #[arg(long, default_value = "store")]
    store_dir: PathBuf,
    /// Simulated ms per real ms.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Admin API listen address.
    #[arg(long, default_value = "127.0.0.1:7080")]
    http: SocketAddr,
    /// Proximity warning distance in metres.
    #[arg(long)]
    d_crit: Option<f64>,
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    let mut opts = ServerOptions::new(cli.registry, cli.store_dir);
    opts.bind = cli.bind;
    opts.ports = cli.ports;
    opts.time_scale = cli.time_scale;
    if let Some(m) = cli.segment_minutes {
        anyhow::ensure!(m > 0.0, "segment minutes must be > 0");
        opts.config.segment_ms = Some((m * 60_000.0).round() as u64);
    }
    if let Some(d) = cli.d_crit {
        opts.config.d_crit_m = d;
    }
    let server = start(opts).await?;
    let listener = tokio::net::TcpListener::bind(cli.http)
        .await
        .with_context(|| format!("binding admin API on {}", cli.http))?;
    info!(http = %listener.local_addr()?, "admin API listening");
    let api = tokio::spawn(serve_api(listener, server.shared().clone()));
    tokio::select! {
        r = api => r.context("admin API task")?.context("admin API")?,
        r = tokio::signal::ctrl_c() => r.context("waiting for ctrl-c")?,
    }
    info!("shutting down");
    server.shutdown().await.context("flushing recorders")?;
    Ok(())
}
