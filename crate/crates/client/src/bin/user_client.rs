use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use ivvdr_client::run_user;
use ivvdr_core::net::ServerPorts;
use ivvdr_core::user::{Summary, UserConfig, UserPhase};
use ivvdr_core::Millis;

/// Subscribe to a vehicle's live or replayed streams and save them.
///
/// The last line printed is the summary as CSV.
#[derive(Parser)]
#[command(name = "user-client", version)]
struct Cli {
    #[arg(long, value_parser = parse_server, default_value = "127.0.0.1")]
    server: SocketAddr,
    #[arg(long, default_value = "7000,7001,7002,7003,7004")]
    ports: ServerPorts,
    #[arg(long)]
    user: u32,
    #[arg(long, default_value = "")]
    credentials: String,
    #[arg(long)]
    vehicle: u32,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// How long to stay enabled, in logical ms.
    #[arg(long, default_value_t = 60_000)]
    duration: Millis,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

fn parse_server(s: &str) -> Result<SocketAddr, String> {
    s.parse::<SocketAddr>()
        .or_else(|_| s.parse::<IpAddr>().map(|ip| SocketAddr::new(ip, 0)))
        .map_err(|_| format!("expected an IP address or ip:port, got {s:?}"))
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
    let cfg = UserConfig {
        user_id: cli.user,
        credentials: cli.credentials,
        server: cli.server,
        ports: cli.ports,
        ..UserConfig::default()
    };
    let stop = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match run_user(cfg, cli.vehicle, &cli.out_dir, cli.duration, cli.time_scale, stop).await {
        Ok(run) => {
            println!("video and telemetry in {}", run.container.display());
            if let UserPhase::Rejected(reason) = run.phase {
                eprintln!("enable rejected: {reason}");
                return ExitCode::FAILURE;
            }
            println!("{}", Summary::HEADER);
            if let Some(s) = run.summary {
                println!("{}", s.to_csv());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
