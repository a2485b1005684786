use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ivvdr_core::Millis;
use ivvdr_harness::report::{storage_report, ReportConfig, Scheme, PAPER_RATE_BYTES_PER_MIN};
use ivvdr_harness::{container_diff, run_scenario, Scenario};

/// Deterministic simulation, storage reports and recording comparison.
#[derive(Parser)]
#[command(name = "harness", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file on the logical clock.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the network seed and every vehicle's simulator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for trace, segments, logs and user streams.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Storage needed per scheme, drive length and segment duration.
    Report {
        #[arg(long, value_delimiter = ',', default_value = "full_time,dual_segment,vdvrs_reference")]
        schemes: Vec<Scheme>,
        /// Video payload rate in bytes per minute.
        #[arg(long, default_value_t = PAPER_RATE_BYTES_PER_MIN)]
        rate: u64,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30,60")]
        durations: Vec<u64>,
        /// Segment durations in minutes.
        #[arg(long = "t", value_delimiter = ',', default_value = "2,5")]
        t_values: Vec<u64>,
        #[arg(long, default_value_t = 30)]
        fps: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two recordings record by record.
    Diff {
        /// Container file(s), comma separated.
        a: String,
        b: String,
        #[arg(long, default_value_t = 0)]
        from: Millis,
        #[arg(long, default_value_t = Millis::MAX)]
        to: Millis,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_all(list: &str) -> Result<Vec<Vec<u8>>> {
    list.split(',')
        .map(|p| std::fs::read(p).with_context(|| format!("reading {p}")))
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { scenario, seed, out } => {
            let mut sc = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            if let Some(seed) = seed {
                sc = sc.with_seed(seed);
            }
            let mut r = run_scenario(&sc)?;
            if let Some(dir) = &out {
                r.write_outputs(dir)
                    .with_context(|| format!("writing outputs to {}", dir.display()))?;
            }
            println!("scenario {} seed {} ended at {} ms", sc.name, sc.net.seed, r.end_t);
            println!(
                "datagrams sent {} dropped {} duplicated {} unreachable {}",
                r.net.sent, r.net.dropped, r.net.duplicated, r.unreachable
            );
            for v in &r.vehicles {
                let a = &v.agent;
                println!(
                    "vehicle {} phase {:?} accident {:?} frames {} sms {}",
                    a.vehicle_id(),
                    a.phase(),
                    a.accident(),
                    a.stats().frames_captured,
                    a.sms_log().len()
                );
            }
            for e in r.server.accident_log() {
                println!("accident {}", e.to_line());
            }
            println!("trace {} lines, sha256 {}", r.trace.len(), r.trace_hash);
            if let Some(expected) = &sc.expected {
                if !expected.eq_ignore_ascii_case(&r.trace_hash) {
                    println!("trace hash differs from expected {expected}");
                    return Ok(ExitCode::FAILURE);
                }
                println!("trace hash matches expected");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report {
            schemes,
            rate,
            durations,
            t_values,
            fps,
            out,
        } => {
            if rate == 0 || fps == 0 {
                bail!("rate and fps must be > 0");
            }
            let report = storage_report(&ReportConfig {
                schemes,
                durations_min: durations,
                t_values_min: t_values,
                rate_bytes_per_min: rate,
                fps,
            });
            print!("{}", report.to_table());
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Diff { a, b, from, to } => {
            let (fa, fb) = (read_all(&a)?, read_all(&b)?);
            let ra: Vec<&[u8]> = fa.iter().map(Vec::as_slice).collect();
            let rb: Vec<&[u8]> = fb.iter().map(Vec::as_slice).collect();
            let d = container_diff(&ra, &rb, from..to)?;
            print!("{d}");
            Ok(if d.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
