use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ivvdr_client::ApiClient;
use ivvdr_core::api::{NewUser, NewVehicle};
use serde::Serialize;

/// Administer a running ITS server over its HTTP API.
#[derive(Parser)]
#[command(name = "itsctl", version)]
struct Cli {
    #[arg(long, default_value = "http://127.0.0.1:7080")]
    api: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Register a vehicle.
    AddVehicle {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        credentials: String,
        /// Owning user ids.
        #[arg(long, value_delimiter = ',')]
        owners: Vec<u32>,
    },
    /// Register a user.
    AddUser {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        credentials: String,
        #[arg(long, value_delimiter = ',')]
        vehicles: Vec<u32>,
    },
    Vehicles,
    Users,
    Accidents,
    Proximity,
    /// Control event log, optionally from an offset.
    Events {
        #[arg(long, default_value_t = 0)]
        since: usize,
    },
    Stats,
    Health,
}

fn print<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let c = ApiClient::new(cli.api);
    match cli.cmd {
        Cmd::AddVehicle { id, credentials, owners } => {
            print(&c.register_vehicle(&NewVehicle { id, credentials, owners }).await?)?
        }
        Cmd::AddUser { id, credentials, vehicles } => {
            print(&c.register_user(&NewUser { id, credentials, vehicles }).await?)?
        }
        Cmd::Vehicles => print(&c.vehicles().await?)?,
        Cmd::Users => print(&c.users().await?)?,
        Cmd::Accidents => {
            for e in c.accidents().await? {
                println!("{}", e.to_line());
            }
        }
        Cmd::Proximity => print(&c.proximity().await?)?,
        Cmd::Events { since } => {
            for e in c.events(since).await? {
                println!("{e}");
            }
        }
        Cmd::Stats => print(&c.stats().await?)?,
        Cmd::Health => {
            let ok = c.health().await?;
            println!("{}", if ok { "ok" } else { "unhealthy" });
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
